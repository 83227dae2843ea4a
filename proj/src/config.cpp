#include "csasr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "csasr/errors.hpp"

namespace csasr {
namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

nlohmann::json parse_value(const std::string& text, const nlohmann::json& existing) {
  if (existing.is_string()) return text;
  auto parsed = nlohmann::json::parse(text, nullptr, false);
  if (existing.is_array() && (parsed.is_discarded() || !parsed.is_array())) {
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      auto v = nlohmann::json::parse(item, nullptr, false);
      arr.push_back(v.is_discarded() ? nlohmann::json(item) : v);
    }
    return arr;
  }
  if (existing.is_number() && !parsed.is_number())
    throw ConfigError("expected a number, got '" + text + "'");
  if (existing.is_boolean() && !parsed.is_boolean())
    throw ConfigError("expected true or false, got '" + text + "'");
  if (parsed.is_discarded()) return text;
  return parsed;
}

}  // namespace

const std::vector<std::string>& system_ids() {
  static const std::vector<std::string> ids = {"S0",          "LD",  "LD-causal", "LPB", "LD+LPB",
                                               "LD+LPB-stop", "GRL", "custom"};
  return ids;
}

void apply_system(const std::string& system, double beta, ModelConfig& m) {
  if (system == "custom") return;
  m.use_ld = m.use_lpb = m.use_grl = m.lpb_stop_gradient = false;
  m.ld_full_context = true;
  m.beta = 0.0;
  if (system == "S0") return;
  m.use_ld = true;
  m.beta = beta;
  if (system == "LD") return;
  if (system == "LD-causal") {
    m.ld_full_context = false;
  } else if (system == "LPB" || system == "LD+LPB" || system == "LD+LPB-stop") {
    m.ld_full_context = false;
    m.use_lpb = true;
    if (system == "LPB") m.beta = 0.0;
    if (system == "LD+LPB-stop") m.lpb_stop_gradient = true;
  } else if (system == "GRL") {
    m.use_grl = true;
  } else {
    throw ConfigError("unknown system id '" + system + "'");
  }
}

void ExperimentConfig::validate() const {
  const auto& ids = system_ids();
  if (std::find(ids.begin(), ids.end(), system) == ids.end()) throw ConfigError("unknown system id '" + system + "'");
  for (const auto& s : ablation_systems)
    if (std::find(ids.begin(), ids.end(), s) == ids.end()) throw ConfigError("unknown ablation system '" + s + "'");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  for (double b : beta_sweep)
    if (!(b >= 0.0)) throw ConfigError("beta_sweep entries must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  resolved_model().validate();
  corpus.validate();
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (optim.warmup_steps < 1) throw ConfigError("optim.warmup_steps must be >= 1");
  if (optim.epochs < 1) throw ConfigError("optim.epochs must be >= 1");
  if (optim.batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
  if (optim.keep_best < 1) throw ConfigError("optim.keep_best must be >= 1");
  if (decode.beam < 1) throw ConfigError("decode.beam must be >= 1");
  if (!(decode.alpha >= 0.0 && decode.alpha <= 1.0)) throw ConfigError("decode.alpha must lie in [0,1]");
  if (decode.max_len < 0) throw ConfigError("decode.max_len must be >= 0");
}

ModelConfig ExperimentConfig::resolved_model() const {
  ModelConfig m = model;
  apply_system(system, beta, m);
  return m;
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"warmup_steps", c.warmup_steps},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"grad_clip", c.grad_clip},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"keep_best", c.keep_best},
                     {"seed", c.seed},
                     {"max_train_utterances", c.max_train_utterances},
                     {"valid_mer", c.valid_mer}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  read_field(j, "lr", c.lr);
  read_field(j, "warmup_steps", c.warmup_steps);
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "grad_clip", c.grad_clip);
  read_field(j, "adam_beta1", c.adam_beta1);
  read_field(j, "adam_beta2", c.adam_beta2);
  read_field(j, "adam_eps", c.adam_eps);
  read_field(j, "keep_best", c.keep_best);
  read_field(j, "seed", c.seed);
  read_field(j, "max_train_utterances", c.max_train_utterances);
  read_field(j, "valid_mer", c.valid_mer);
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"beam", c.beam}, {"alpha", c.alpha}, {"max_len", c.max_len}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  read_field(j, "beam", c.beam);
  read_field(j, "alpha", c.alpha);
  read_field(j, "max_len", c.max_len);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"system", c.system},
                     {"beta", c.beta},
                     {"model", c.model},
                     {"corpus", c.corpus},
                     {"optim", c.optim},
                     {"decode", c.decode},
                     {"ablation_systems", c.ablation_systems},
                     {"beta_sweep", c.beta_sweep},
                     {"seeds", c.seeds},
                     {"corpus_dir", c.corpus_dir},
                     {"run_dir", c.run_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  read_field(j, "system", c.system);
  read_field(j, "beta", c.beta);
  read_field(j, "model", c.model);
  read_field(j, "corpus", c.corpus);
  read_field(j, "optim", c.optim);
  read_field(j, "decode", c.decode);
  read_field(j, "ablation_systems", c.ablation_systems);
  read_field(j, "beta_sweep", c.beta_sweep);
  read_field(j, "seeds", c.seeds);
  read_field(j, "corpus_dir", c.corpus_dir);
  read_field(j, "run_dir", c.run_dir);
}

void apply_overrides(nlohmann::json& doc, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, text] : overrides) {
    nlohmann::json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[part];
    }
    try {
      *node = parse_value(text, *node);
    } catch (const ConfigError& e) {
      throw ConfigError("--" + key + ": " + e.what());
    }
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json doc = ExperimentConfig{};
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    auto user = nlohmann::json::parse(in, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError("config file " + file.string() + " is not a JSON object");
    // Reject unknown keys early rather than silently ignoring them.
    const nlohmann::json flat = user.flatten();
    for (const auto& [k, v] : flat.items()) {
      std::string key = k.substr(1);
      std::replace(key.begin(), key.end(), '/', '.');
      // Array elements flatten to trailing indices; check only the array key.
      const auto last_dot = key.find_last_of('.');
      if (last_dot != std::string::npos && std::all_of(key.begin() + static_cast<std::ptrdiff_t>(last_dot) + 1,
                                                       key.end(), [](char ch) { return std::isdigit(ch); }))
        key.resize(last_dot);
      nlohmann::json* node = &doc;
      std::stringstream ss(key);
      std::string part;
      while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[part];
      }
    }
    doc.merge_patch(user);
  }
  apply_overrides(doc, overrides);
  ExperimentConfig cfg;
  try {
    cfg = doc.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::filesystem::path output_root() {
  if (const char* env = std::getenv("CSASR_OUT_DIR"); env && *env) return env;
  return std::filesystem::current_path();
}

std::filesystem::path resolve_output(const std::string& path) {
  const std::filesystem::path p(path);
  return p.is_absolute() ? p : output_root() / p;
}

}  // namespace csasr
