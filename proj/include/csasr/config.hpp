#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/corpus.hpp"
#include "csasr/model.hpp"

namespace csasr {

struct OptimConfig {
  double lr = 1e-3;  // peak learning rate
  int warmup_steps = 500;
  int epochs = 20;
  int batch_size = 16;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  // Checkpoints kept and averaged, ranked by validation loss.
  int keep_best = 10;
  std::uint64_t seed = 1;
  // Training utterances used per epoch; 0 means all.
  std::size_t max_train_utterances = 0;
  // Greedy-decode the validation split after each epoch to track MER.
  bool valid_mer = true;
};

struct DecodeConfig {
  int beam = 10;
  double alpha = 0.4;
  int max_len = 0;  // 0: encoder length
};

// Named systems of the ablation matrix. Each id fixes the LD/LPB/GRL
// switches of the model; "custom" leaves them as configured.
//   S0       baseline hybrid CTC/attention
//   LD       + LD decoder, full-context training
//   LD-causal + LD decoder, causal training
//   LPB      + LPB, LD decoder trained only through the ASR loss (beta 0)
//   LD+LPB   + LD decoder (causal) and LPB
//   LD+LPB-stop  as LD+LPB with the LD branch cut off from the ASR loss
//   GRL      + LD decoder behind a gradient reversal layer
const std::vector<std::string>& system_ids();

struct ExperimentConfig {
  std::string system = "S0";
  // LD loss weight applied by every system with an LD decoder.
  double beta = 0.8;
  ModelConfig model;
  CorpusConfig corpus;
  OptimConfig optim;
  DecodeConfig decode;
  std::vector<std::string> ablation_systems = {"S0", "LD", "LD+LPB", "GRL"};
  std::vector<double> beta_sweep;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string corpus_dir = "corpus";
  std::string run_dir = "runs";

  // Throws ConfigError.
  void validate() const;
  // The model config with the system's switches and beta applied.
  ModelConfig resolved_model() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);
void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Applies the switches of `system` to `model`. Throws ConfigError for an
// unknown id.
void apply_system(const std::string& system, double beta, ModelConfig& model);

// Applies `--a.b value` style overrides to a config JSON document. Keys must
// already exist. Values are parsed as JSON when possible, else taken as
// strings; arrays also accept comma-separated lists. Throws ConfigError.
void apply_overrides(nlohmann::json& doc, const std::vector<std::pair<std::string, std::string>>& overrides);

// Defaults <- optional JSON file <- overrides, then validate. Throws ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const std::vector<std::pair<std::string, std::string>>& overrides);

// Root for relative output paths: $CSASR_OUT_DIR when set, else the working directory.
std::filesystem::path output_root();
std::filesystem::path resolve_output(const std::string& path);

}  // namespace csasr
