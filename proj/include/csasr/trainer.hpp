#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/checkpoint.hpp"
#include "csasr/config.hpp"
#include "csasr/corpus.hpp"
#include "csasr/decoding.hpp"
#include "csasr/losses.hpp"
#include "csasr/metrics.hpp"
#include "csasr/model.hpp"

namespace csasr {

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown valid;
  double valid_mer = -1.0;  // negative when not measured
  double best_valid_loss = 0.0;
  double learning_rate = 0.0;
  std::string checkpoint;
  double seconds = 0.0;
};

struct RunRecord {
  std::string system;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> kept_checkpoints;  // best first
  std::string averaged_checkpoint;
  long steps = 0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const RunRecord& record);
nlohmann::json to_json(const LossBreakdown& loss);

// Inverse-square-root schedule with linear warmup, peaking at `peak` on step
// `warmup` (steps count from 1).
double warmup_lr(double peak, int warmup, long step);

class AdamOptimizer {
 public:
  AdamOptimizer(ParameterStore& params, const OptimConfig& config);
  // Clips the global gradient norm, applies one update at `lr` and clears
  // gradients. Returns the pre-clip norm.
  double step(double lr);

 private:
  ParameterStore& params_;
  OptimConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

// The model config a run actually trains: system switches applied, and
// vocabulary size and feature width taken from the corpus.
ModelConfig model_config_for(const ExperimentConfig& cfg, const Corpus& corpus);

// Eval-mode losses averaged over utterances. Parallel over utterances with a
// fixed reduction order.
LossBreakdown evaluate_losses(const Model& model, std::span<const Utterance> utts);

// Trains one system/seed and writes epoch checkpoints, the average of the
// best ones and run.json into `run_dir`. Throws DivergenceError after writing
// divergence_dump.json when a loss becomes non-finite.
RunRecord train(const ExperimentConfig& cfg, const Corpus& corpus, const std::filesystem::path& run_dir);

// Parameter-wise arithmetic mean. Throws DataError on missing files or
// mismatched names/shapes.
CheckpointFile average_checkpoints(std::span<const std::filesystem::path> paths);

struct EvaluationResult {
  MerReport mer;
  double ld_accuracy = -1.0;  // negative without an LD decoder
  std::size_t unterminated = 0;
  std::vector<nlohmann::json> decodes;
};

// Beam search over every utterance (parallel over utterances).
EvaluationResult evaluate(const Model& model, const Corpus& corpus, std::span<const Utterance> utts,
                          const BeamSearchOptions& options);

nlohmann::json to_json(const EvaluationResult& result, const std::string& split, const BeamSearchOptions& options);

}  // namespace csasr
