#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/config.hpp"
#include "csasr/corpus.hpp"

namespace csasr {

struct AblationRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double mer_test_cs = 0.0;
  double mer_test_mono = 0.0;
  double ld_accuracy = -1.0;
  std::string run_dir;
};

struct AblationRow {
  std::string label;  // system id, with the LD weight when it differs from the default
  std::string system;
  double beta = 0.0;
  std::vector<AblationRun> runs;
  bool failed = false;  // any member run failed
  double median_test_cs = 0.0;
  double median_test_mono = 0.0;
};

struct AblationEntry {
  std::string label;
  ExperimentConfig config;
};

// One entry per ablation system at cfg.beta, plus one GRL/LD entry per value
// in cfg.beta_sweep (GRL when it is in the system list, else LD).
std::vector<AblationEntry> ablation_matrix(const ExperimentConfig& cfg);

// Trains and evaluates every entry for every seed in cfg.seeds under
// `out_dir/<label>/seed<k>`. A failing run marks its row failed and leaves the
// other rows alone.
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& matrix, const std::vector<std::uint64_t>& seeds,
                                      const Corpus& corpus, const std::filesystem::path& out_dir);

double median(std::vector<double> values);

nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows);
std::vector<AblationRow> ablation_from_json(const nlohmann::json& j);

struct TrendCheck {
  std::string name;
  std::string description;
  bool available = false;  // both rows present and not failed
  bool holds = false;
  std::string detail;
};

// Directional comparisons against the S0 row:
//   LD at the default weight: test_cs MER <= S0
//   LD+LPB: MER <= S0 on both splits
//   GRL: test_mono MER >= S0
std::vector<TrendCheck> trend_checks(const std::vector<AblationRow>& rows);

// Aligned text table, trend lines and a footer with the published reference
// points for context.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace csasr
