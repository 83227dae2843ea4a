#pragma once

// Synthetic bilingual code-switching corpus.
//
// Every unit of either language owns a fixed feature template; a word emits
// its units' templates for a jittered number of frames each, plus Gaussian
// noise. Language identity is therefore recoverable from the features, and
// paired units across the two languages share part of their template so the
// languages can be confused with each other.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/vocab.hpp"

namespace csasr {

enum class Split : int { kTrain = 0, kValid = 1, kTestCs = 2, kTestMono = 3 };
inline constexpr std::array<Split, 4> kAllSplits = {Split::kTrain, Split::kValid, Split::kTestCs,
                                                    Split::kTestMono};
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct CorpusConfig {
  std::size_t n_units_per_language = 20;
  int frames_per_unit_mean = 8;
  int frames_per_unit_jitter = 2;
  std::size_t feat_dim = 16;
  // Probability that an utterance of two or more words contains a language
  // switch (train and valid splits).
  double switch_prob = 0.5;
  // Same, for the code-switching-heavy and the monolingual-heavy test splits.
  double test_cs_switch_prob = 0.85;
  double test_mono_switch_prob = 0.3;
  std::size_t num_utterances = 2600;
  // train, valid, test_cs, test_mono
  std::array<double, 4> split_ratios = {0.8, 0.05, 0.075, 0.075};
  std::size_t min_words = 2;
  std::size_t max_words = 5;
  double noise_std = 1.0;
  double language_separation = 1.0;
  // Correlation between the templates of paired units across languages.
  double cross_language_similarity = 0.5;
  // Encoder time reduction the CTC feasibility padding must survive.
  std::size_t subsample_factor = 4;
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
  std::size_t split_count(Split split) const;
};

void to_json(nlohmann::json& j, const CorpusConfig& c);
void from_json(const nlohmann::json& j, CorpusConfig& c);

struct Utterance {
  std::string id;
  Split split = Split::kTrain;
  std::size_t num_frames = 0;
  std::size_t feat_dim = 0;
  std::vector<double> features;  // [num_frames, feat_dim]
  std::vector<int> tokens;       // sos/eos, units..., sos/eos
  std::vector<LdLabel> ld_labels;
  double language_ratio = 0.0;  // fraction of speech frames in language A
  bool code_switched = false;

  // Units between the sos/eos markers.
  std::vector<int> target() const { return {tokens.begin() + 1, tokens.end() - 1}; }
};

struct MvnStats {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<std::size_t> floored_dims;
};

struct Corpus {
  CorpusConfig config;
  Vocab vocab;
  std::array<std::vector<Utterance>, 4> splits;
  MvnStats mvn;

  const std::vector<Utterance>& split(Split s) const { return splits[static_cast<int>(s)]; }
  std::vector<Utterance>& split(Split s) { return splits[static_cast<int>(s)]; }
};

// Encoder length after `factor` (a power of two) worth of stride-2 stages,
// each rounding up.
std::size_t subsampled_length(std::size_t frames, std::size_t factor);

// Deterministic in config.seed. Throws ConfigError on an invalid config.
Corpus generate_corpus(const CorpusConfig& config);

// Estimates per-dimension mean/variance on the training split and normalizes
// every split with them. Variances below 1e-8 are floored (with a warning).
MvnStats global_mvn(Corpus& corpus);

// Writes manifest.jsonl, vocab.txt, corpus.json, mvn.json and feats/<id>.bin.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
// Throws DataError on missing or malformed files.
Corpus load_corpus(const std::filesystem::path& dir);

// Feature file: u64 LE rows, u64 LE cols, then rows*cols LE float64.
void write_feature_file(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                        const std::vector<double>& data);
std::vector<double> read_feature_file(const std::filesystem::path& path, std::size_t& rows, std::size_t& cols);

}  // namespace csasr
