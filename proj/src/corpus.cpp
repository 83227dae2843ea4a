#include "csasr/corpus.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "csasr/errors.hpp"

namespace csasr {
namespace {

using Rng = std::mt19937_64;

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

std::uint64_t split_seed(std::uint64_t seed, int stream) {
  // splitmix64 over (seed, stream) keeps the per-split streams independent.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Templates {
  // Indexed by token id; silence is all-zero.
  std::vector<std::vector<double>> by_token;
  std::vector<double> silence;
};

Templates make_templates(const CorpusConfig& cfg, const Vocab& vocab) {
  Rng rng(split_seed(cfg.seed, 100));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t F = cfg.feat_dim;
  auto random_vec = [&] {
    std::vector<double> v(F);
    for (auto& x : v) x = normal(rng);
    return v;
  };
  std::vector<double> mean_a = random_vec(), mean_b = random_vec();
  for (std::size_t d = 0; d < F; ++d) {
    mean_a[d] *= cfg.language_separation;
    mean_b[d] *= cfg.language_separation;
  }
  const auto a_ids = vocab.ids_of(TokenClass::kLangA);
  const auto b_ids = vocab.ids_of(TokenClass::kLangB);
  std::vector<std::vector<double>> a_units;
  for (std::size_t i = 0; i < a_ids.size(); ++i) a_units.push_back(random_vec());

  Templates t;
  t.by_token.assign(static_cast<std::size_t>(vocab.size()), std::vector<double>(F, 0.0));
  t.silence.assign(F, 0.0);
  for (std::size_t i = 0; i < a_ids.size(); ++i)
    for (std::size_t d = 0; d < F; ++d) t.by_token[a_ids[i]][d] = mean_a[d] + a_units[i][d];
  const double rho = cfg.cross_language_similarity;
  const double fresh = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (std::size_t i = 0; i < b_ids.size(); ++i) {
    auto own = random_vec();
    for (std::size_t d = 0; d < F; ++d) {
      const double shared = a_units.empty() ? 0.0 : a_units[i % a_units.size()][d];
      t.by_token[b_ids[i]][d] = mean_b[d] + rho * shared + fresh * own[d];
    }
  }
  return t;
}

enum class Lang { kA, kB };

// Picks per-word languages. A code-switched utterance is a 0.5-switch Markov
// chain conditioned on containing at least one switch.
std::vector<Lang> sample_languages(std::size_t n_words, bool code_switched, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  const Lang first = coin(rng) ? Lang::kA : Lang::kB;
  std::vector<Lang> langs(n_words, first);
  if (!code_switched || n_words < 2) return langs;
  for (;;) {
    bool switched = false;
    for (std::size_t i = 1; i < n_words; ++i) {
      const bool flip = coin(rng);
      langs[i] = flip ? (langs[i - 1] == Lang::kA ? Lang::kB : Lang::kA) : langs[i - 1];
      switched |= flip;
    }
    if (switched) return langs;
  }
}

Utterance make_utterance(const CorpusConfig& cfg, const Vocab& vocab, const Templates& templates,
                         Split split, std::size_t index, double cs_prob, Rng& rng) {
  const auto a_ids = vocab.ids_of(TokenClass::kLangA);
  const auto b_ids = vocab.ids_of(TokenClass::kLangB);
  std::vector<int> a_initial, a_cont;
  for (int id : a_ids) (vocab.token(id).rfind(kWordBoundary, 0) == 0 ? a_initial : a_cont).push_back(id);
  if (a_initial.empty()) a_initial = a_ids;

  std::uniform_int_distribution<std::size_t> n_words_dist(cfg.min_words, cfg.max_words);
  const std::size_t n_words = n_words_dist(rng);
  std::bernoulli_distribution cs_draw(cs_prob);
  const bool cs = n_words >= 2 && cs_draw(rng);
  auto langs = sample_languages(n_words, cs, rng);
  // A language without units cannot be emitted; fall back to the other.
  for (auto& l : langs) {
    if (l == Lang::kA && a_ids.empty()) l = Lang::kB;
    if (l == Lang::kB && b_ids.empty()) l = Lang::kA;
  }

  std::vector<int> units;
  std::vector<Lang> unit_lang;
  std::bernoulli_distribution has_cont(0.5);
  std::uniform_int_distribution<int> b_len(1, 2);
  auto pick = [&](const std::vector<int>& pool) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
  };
  for (Lang l : langs) {
    if (l == Lang::kA) {
      units.push_back(pick(a_initial));
      unit_lang.push_back(Lang::kA);
      if (!a_cont.empty() && has_cont(rng)) {
        units.push_back(pick(a_cont));
        unit_lang.push_back(Lang::kA);
      }
    } else if (!b_ids.empty()) {
      const int n = b_len(rng);
      for (int k = 0; k < n; ++k) {
        units.push_back(pick(b_ids));
        unit_lang.push_back(Lang::kB);
      }
    }
  }

  const std::size_t F = cfg.feat_dim;
  std::uniform_int_distribution<int> frames_dist(cfg.frames_per_unit_mean - cfg.frames_per_unit_jitter,
                                                 cfg.frames_per_unit_mean + cfg.frames_per_unit_jitter);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  Utterance u;
  u.split = split;
  u.feat_dim = F;
  std::ostringstream id;
  id << split_name(split) << '-' << std::setw(6) << std::setfill('0') << index;
  u.id = id.str();
  std::size_t frames_a = 0, frames_b = 0;
  auto emit = [&](const std::vector<double>& tmpl) {
    for (std::size_t d = 0; d < F; ++d) u.features.push_back(tmpl[d] + noise(rng));
    ++u.num_frames;
  };
  for (std::size_t i = 0; i < units.size(); ++i) {
    const int n = frames_dist(rng);
    for (int f = 0; f < n; ++f) emit(templates.by_token[units[i]]);
    (unit_lang[i] == Lang::kA ? frames_a : frames_b) += static_cast<std::size_t>(n);
  }
  // Trailing silence until the encoder-rate length admits any CTC alignment.
  const std::size_t needed = 2 * units.size() + 1;
  while (u.num_frames == 0 || subsampled_length(u.num_frames, cfg.subsample_factor) < needed)
    emit(templates.silence);

  u.tokens.push_back(vocab.sos_eos_id());
  u.tokens.insert(u.tokens.end(), units.begin(), units.end());
  u.tokens.push_back(vocab.sos_eos_id());
  u.ld_labels = derive_ld_labels(u.tokens, vocab);
  const std::size_t speech = frames_a + frames_b;
  u.language_ratio = speech ? static_cast<double>(frames_a) / static_cast<double>(speech) : 0.0;
  u.code_switched = frames_a > 0 && frames_b > 0;
  return u;
}

}  // namespace

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTestCs: return "test_cs";
    case Split::kTestMono: return "test_mono";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  for (Split s : kAllSplits)
    if (name == split_name(s)) return s;
  throw DataError("unknown split '" + name + "'");
}

void CorpusConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("corpus config: " + msg); };
  for (double p : {switch_prob, test_cs_switch_prob, test_mono_switch_prob})
    if (!(p >= 0.0 && p <= 1.0)) fail("switch probabilities must lie in [0,1]");
  if (feat_dim < 1) fail("feat_dim must be >= 1");
  if (frames_per_unit_mean < 1) fail("frames_per_unit_mean must be >= 1");
  if (frames_per_unit_jitter < 0 || frames_per_unit_jitter >= frames_per_unit_mean)
    fail("frames_per_unit_jitter must satisfy 0 <= jitter < mean");
  if (min_words < 1 || max_words < min_words) fail("need 1 <= min_words <= max_words");
  if (noise_std < 0.0) fail("noise_std must be >= 0");
  if (cross_language_similarity < -1.0 || cross_language_similarity > 1.0)
    fail("cross_language_similarity must lie in [-1,1]");
  if (subsample_factor == 0 || (subsample_factor & (subsample_factor - 1)) != 0)
    fail("subsample_factor must be a power of two");
  double total = 0.0;
  for (double r : split_ratios) {
    if (r < 0.0) fail("split ratios must be non-negative");
    total += r;
  }
  if (total <= 0.0) fail("split ratios must not all be zero");
  if (split_count(Split::kTrain) == 0) fail("training split would be empty");
}

std::size_t CorpusConfig::split_count(Split split) const {
  double total = 0.0;
  for (double r : split_ratios) total += r;
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(num_utterances) * split_ratios[static_cast<int>(split)] / total));
}

void to_json(nlohmann::json& j, const CorpusConfig& c) {
  j = nlohmann::json{{"n_units_per_language", c.n_units_per_language},
                     {"frames_per_unit_mean", c.frames_per_unit_mean},
                     {"frames_per_unit_jitter", c.frames_per_unit_jitter},
                     {"feat_dim", c.feat_dim},
                     {"switch_prob", c.switch_prob},
                     {"test_cs_switch_prob", c.test_cs_switch_prob},
                     {"test_mono_switch_prob", c.test_mono_switch_prob},
                     {"num_utterances", c.num_utterances},
                     {"split_ratios", c.split_ratios},
                     {"min_words", c.min_words},
                     {"max_words", c.max_words},
                     {"noise_std", c.noise_std},
                     {"language_separation", c.language_separation},
                     {"cross_language_similarity", c.cross_language_similarity},
                     {"subsample_factor", c.subsample_factor},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CorpusConfig& c) {
  read_field(j, "n_units_per_language", c.n_units_per_language);
  read_field(j, "frames_per_unit_mean", c.frames_per_unit_mean);
  read_field(j, "frames_per_unit_jitter", c.frames_per_unit_jitter);
  read_field(j, "feat_dim", c.feat_dim);
  read_field(j, "switch_prob", c.switch_prob);
  read_field(j, "test_cs_switch_prob", c.test_cs_switch_prob);
  read_field(j, "test_mono_switch_prob", c.test_mono_switch_prob);
  read_field(j, "num_utterances", c.num_utterances);
  read_field(j, "split_ratios", c.split_ratios);
  read_field(j, "min_words", c.min_words);
  read_field(j, "max_words", c.max_words);
  read_field(j, "noise_std", c.noise_std);
  read_field(j, "language_separation", c.language_separation);
  read_field(j, "cross_language_similarity", c.cross_language_similarity);
  read_field(j, "subsample_factor", c.subsample_factor);
  read_field(j, "seed", c.seed);
}

std::size_t subsampled_length(std::size_t frames, std::size_t factor) {
  for (std::size_t f = factor; f > 1; f /= 2) frames = (frames + 1) / 2;
  return frames;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.vocab = Vocab::build(make_unit_inventory(config.n_units_per_language, config.n_units_per_language));
  const Templates templates = make_templates(config, corpus.vocab);
  for (Split s : kAllSplits) {
    Rng rng(split_seed(config.seed, static_cast<int>(s)));
    const double p = s == Split::kTestCs     ? config.test_cs_switch_prob
                     : s == Split::kTestMono ? config.test_mono_switch_prob
                                             : config.switch_prob;
    auto& out = corpus.split(s);
    const std::size_t n = config.split_count(s);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_utterance(config, corpus.vocab, templates, s, i, p, rng));
  }
  return corpus;
}

MvnStats global_mvn(Corpus& corpus) {
  const auto& train = corpus.split(Split::kTrain);
  if (train.empty()) throw DataError("global_mvn: training split is empty");
  const std::size_t F = train.front().feat_dim;
  MvnStats stats;
  stats.mean.assign(F, 0.0);
  stats.var.assign(F, 0.0);
  std::size_t frames = 0;
  for (const auto& u : train) {
    for (std::size_t t = 0; t < u.num_frames; ++t)
      for (std::size_t d = 0; d < F; ++d) stats.mean[d] += u.features[t * F + d];
    frames += u.num_frames;
  }
  for (auto& m : stats.mean) m /= static_cast<double>(frames);
  for (const auto& u : train)
    for (std::size_t t = 0; t < u.num_frames; ++t)
      for (std::size_t d = 0; d < F; ++d) {
        const double c = u.features[t * F + d] - stats.mean[d];
        stats.var[d] += c * c;
      }
  for (std::size_t d = 0; d < F; ++d) {
    stats.var[d] /= static_cast<double>(frames);
    if (stats.var[d] < 1e-8) {
      spdlog::warn("global_mvn: dimension {} has variance {:.3g}; flooring at 1e-8", d, stats.var[d]);
      stats.var[d] = 1e-8;
      stats.floored_dims.push_back(d);
    }
  }
  std::vector<double> inv_std(F);
  for (std::size_t d = 0; d < F; ++d) inv_std[d] = 1.0 / std::sqrt(stats.var[d]);
  for (auto& split : corpus.splits)
    for (auto& u : split) {
      if (u.feat_dim != F) throw DataError("global_mvn: utterance " + u.id + " has a different feature dimension");
      for (std::size_t t = 0; t < u.num_frames; ++t)
        for (std::size_t d = 0; d < F; ++d) {
          double& v = u.features[t * F + d];
          v = (v - stats.mean[d]) * inv_std[d];
        }
    }
  corpus.mvn = stats;
  return stats;
}

void write_feature_file(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                        const std::vector<double>& data) {
  if (data.size() != rows * cols) throw DataError("feature file: data size mismatch for " + path.string());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  auto put = [&](std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  };
  put(rows);
  put(cols);
  for (double v : data) put(std::bit_cast<std::uint64_t>(v));
}

std::vector<double> read_feature_file(const std::filesystem::path& path, std::size_t& rows, std::size_t& cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file " + path.string());
  auto get = [&]() {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated feature file " + path.string());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  };
  rows = get();
  cols = get();
  std::vector<double> data(rows * cols);
  for (auto& v : data) v = std::bit_cast<double>(get());
  return data;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "feats");
  corpus.vocab.save(dir / "vocab.txt");
  {
    std::ofstream os(dir / "corpus.json");
    os << nlohmann::json(corpus.config).dump(2) << '\n';
  }
  {
    std::ofstream os(dir / "mvn.json");
    os << nlohmann::json{{"mean", corpus.mvn.mean}, {"var", corpus.mvn.var}, {"floored_dims", corpus.mvn.floored_dims}}
              .dump()
       << '\n';
  }
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& split : corpus.splits) {
    for (const auto& u : split) {
      const auto target = u.target();
      nlohmann::json line = {{"id", u.id},
                             {"split", split_name(u.split)},
                             {"tokens", corpus.vocab.decode(target)},
                             {"frames", u.num_frames},
                             {"language_ratio", u.language_ratio},
                             {"code_switched", u.code_switched}};
      manifest << line.dump() << '\n';
      write_feature_file(dir / "feats" / (u.id + ".bin"), u.num_frames, u.feat_dim, u.features);
    }
  }
}

Corpus load_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* f : {"manifest.jsonl", "vocab.txt", "corpus.json"})
    if (!fs::exists(dir / f)) throw DataError("corpus directory " + dir.string() + " lacks " + f);
  Corpus corpus;
  try {
    corpus.vocab = Vocab::load(dir / "vocab.txt");
    std::ifstream cfg(dir / "corpus.json");
    corpus.config = nlohmann::json::parse(cfg).get<CorpusConfig>();
    if (fs::exists(dir / "mvn.json")) {
      std::ifstream ms(dir / "mvn.json");
      const auto m = nlohmann::json::parse(ms);
      m.at("mean").get_to(corpus.mvn.mean);
      m.at("var").get_to(corpus.mvn.var);
      m.at("floored_dims").get_to(corpus.mvn.floored_dims);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed corpus metadata: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed vocabulary: ") + e.what());
  }
  std::ifstream manifest(dir / "manifest.jsonl");
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    Utterance u;
    try {
      const auto j = nlohmann::json::parse(line);
      u.id = j.at("id").get<std::string>();
      u.split = parse_split(j.at("split").get<std::string>());
      const auto toks = j.at("tokens").get<std::vector<std::string>>();
      u.tokens.push_back(corpus.vocab.sos_eos_id());
      for (int id : corpus.vocab.encode(toks)) u.tokens.push_back(id);
      u.tokens.push_back(corpus.vocab.sos_eos_id());
      u.language_ratio = j.value("language_ratio", 0.0);
      u.code_switched = j.value("code_switched", false);
      u.features = read_feature_file(dir / "feats" / (u.id + ".bin"), u.num_frames, u.feat_dim);
      if (u.num_frames != j.at("frames").get<std::size_t>())
        throw DataError("frame count of " + u.id + " disagrees with its feature file");
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed manifest line: ") + e.what());
    }
    u.ld_labels = derive_ld_labels(u.tokens, corpus.vocab);
    corpus.split(u.split).push_back(std::move(u));
  }
  return corpus;
}

}  // namespace csasr
