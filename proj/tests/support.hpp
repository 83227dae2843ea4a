#pragma once

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary. Nothing here calls the code path it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "csasr/decoding.hpp"
#include "csasr/losses.hpp"
#include "csasr/model.hpp"
#include "csasr/ops.hpp"

namespace csasr::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_log_probs(std::size_t T, std::size_t V, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.5);
  std::vector<double> out(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    double mx = -1e300;
    for (std::size_t k = 0; k < V; ++k) mx = std::max(mx, out[t * V + k] = d(rng));
    double s = 0.0;
    for (std::size_t k = 0; k < V; ++k) s += std::exp(out[t * V + k] - mx);
    for (std::size_t k = 0; k < V; ++k) out[t * V + k] -= mx + std::log(s);
  }
  return out;
}

// -log sum over every length-T label path that collapses (merge repeats,
// drop blanks) to `target`, by enumerating all V^T paths.
inline double brute_force_ctc(const std::vector<double>& log_probs, std::size_t T, std::size_t V,
                              const std::vector<int>& target, int blank) {
  std::vector<int> path(T, 0);
  double total = 0.0;
  for (;;) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int c : path) {
      if (c != prev && c != blank) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += log_probs[t * V + static_cast<std::size_t>(path[t])];
      total += std::exp(lp);
    }
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(V)) path[t++] = 0;
    if (t == T) break;
  }
  return -std::log(total);
}

// ---- gradient cases ---------------------------------------------------------

struct GradCase {
  std::string primitive;
  std::string input;
  // Returns the max relative error of backward() against central differences.
  std::function<double(std::uint64_t seed)> run;
};

// Scalar probe of a non-scalar output: sum(out * fixed random weights).
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eed);
  return sum(mul(out, random_tensor(out.shape(), rng)));
}

inline std::vector<GradCase> gradient_cases(double eps) {
  std::vector<GradCase> cases;
  // f maps (leaf under test, seed) to an output; the leaf is a fresh random
  // tensor of `shape`.
  auto add_case = [&](std::string prim, std::string input, Shape shape,
                      std::function<Tensor(const Tensor&, std::uint64_t)> f, double lo = -1.0, double hi = 1.0) {
    cases.push_back({prim, input, [=](std::uint64_t seed) {
                       Rng rng(seed);
                       Tensor x = random_tensor(shape, rng, lo, hi, true);
                       auto g = [&](const Tensor& t) {
                         Tensor out = f(t, seed);
                         return out.numel() == 1 ? out : weighted_sum(out, seed);
                       };
                       return finite_difference_check(g, x, eps);
                     }});
  };
  auto fixed = [](Shape shape, std::uint64_t seed, std::uint64_t salt, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed * 131 + salt);
    return random_tensor(std::move(shape), rng, lo, hi);
  };

  add_case("matmul", "a", {3, 4}, [=](const Tensor& x, auto s) { return matmul(x, fixed({4, 5}, s, 1)); });
  add_case("matmul", "b", {4, 5}, [=](const Tensor& x, auto s) { return matmul(fixed({3, 4}, s, 1), x); });
  add_case("add", "a", {3, 4}, [=](const Tensor& x, auto s) { return add(x, fixed({3, 4}, s, 2)); });
  add_case("add", "broadcast bias", {4}, [=](const Tensor& x, auto s) { return add(fixed({3, 4}, s, 2), x); });
  add_case("mul", "a", {3, 4}, [=](const Tensor& x, auto s) { return mul(x, fixed({3, 4}, s, 3)); });
  add_case("scale", "x", {3, 4}, [](const Tensor& x, auto) { return scale(x, -1.7); });
  add_case("softmax", "x", {3, 5}, [](const Tensor& x, auto) { return softmax(x); }, -2.0, 2.0);
  add_case("log_softmax", "x", {3, 5}, [](const Tensor& x, auto) { return log_softmax(x); }, -2.0, 2.0);
  add_case("layer_norm", "x", {3, 6},
           [=](const Tensor& x, auto s) { return layer_norm(x, fixed({6}, s, 4, 0.5, 1.5), fixed({6}, s, 5)); });
  add_case("layer_norm", "gamma", {6},
           [=](const Tensor& x, auto s) { return layer_norm(fixed({3, 6}, s, 6), x, fixed({6}, s, 5)); });
  add_case("layer_norm", "beta", {6},
           [=](const Tensor& x, auto s) { return layer_norm(fixed({3, 6}, s, 6), fixed({6}, s, 4), x); });
  add_case("depthwise_conv1d", "x", {7, 3},
           [=](const Tensor& x, auto s) { return depthwise_conv1d(x, fixed({3, 5}, s, 7), fixed({3}, s, 8)); });
  add_case("depthwise_conv1d", "weight", {3, 5},
           [=](const Tensor& x, auto s) { return depthwise_conv1d(fixed({7, 3}, s, 9), x, fixed({3}, s, 8)); });
  add_case("depthwise_conv1d", "bias", {3},
           [=](const Tensor& x, auto s) { return depthwise_conv1d(fixed({7, 3}, s, 9), fixed({3, 5}, s, 7), x); });
  add_case("conv2d", "x", {5, 4, 2},
           [=](const Tensor& x, auto s) { return conv2d(x, fixed({3, 2, 3, 3}, s, 10), fixed({3}, s, 11), 2, 1); });
  add_case("conv2d", "weight", {3, 2, 3, 3}, [=](const Tensor& x, auto s) {
    return conv2d(fixed({5, 4, 2}, s, 12), x, fixed({3}, s, 11), 2, 1);
  });
  add_case("conv2d", "bias", {3}, [=](const Tensor& x, auto s) {
    return conv2d(fixed({5, 4, 2}, s, 12), fixed({3, 2, 3, 3}, s, 10), x, 2, 1);
  });
  add_case("embedding", "table", {5, 3}, [](const Tensor& x, auto) {
    const std::vector<int> ids{4, 0, 4, 2};
    return embedding(x, ids);
  });
  add_case("concat", "x", {3, 2}, [=](const Tensor& x, auto s) { return concat({fixed({3, 4}, s, 13), x}); });
  add_case("slice_rows", "x", {5, 3}, [](const Tensor& x, auto) { return slice_rows(x, 1, 3); });
  add_case("slice_cols", "x", {3, 5}, [](const Tensor& x, auto) { return slice_cols(x, 2, 2); });
  add_case("masked_fill", "x", {3, 4}, [](const Tensor& x, auto) {
    const std::vector<std::uint8_t> mask{0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 1};
    return softmax(masked_fill(x, mask));
  });
  add_case("swish", "x", {3, 4}, [](const Tensor& x, auto) { return swish(x); }, -3.0, 3.0);
  add_case("relu", "x", {3, 4}, [](const Tensor& x, auto) { return relu(x); });
  add_case("glu", "x", {3, 6}, [](const Tensor& x, auto) { return glu(x); }, -2.0, 2.0);
  add_case("dropout", "x", {4, 5}, [](const Tensor& x, auto s) {
    Rng rng(s + 99);
    return dropout(x, 0.3, rng, true);
  });
  add_case("transpose", "x", {3, 4}, [](const Tensor& x, auto) { return transpose(x); });
  add_case("reshape", "x", {3, 4}, [](const Tensor& x, auto) { return reshape(x, {2, 6}); });
  add_case("sum", "x", {3, 4}, [](const Tensor& x, auto) { return sum(x); });
  add_case("mean", "x", {3, 4}, [](const Tensor& x, auto) { return mean(x); });
  // The reversal layer's backward is deliberately not the derivative of its
  // forward; compare it with -lambda times the numeric derivative instead.
  cases.push_back({"gradient_reversal", "x", [eps](std::uint64_t seed) {
                     const double lambda = 0.7;
                     Rng rng(seed);
                     Tensor x = random_tensor({3, 4}, rng, -1.0, 1.0, true);
                     backward(weighted_sum(gradient_reversal(x, lambda), seed));
                     const std::vector<double> analytic(x.grad().begin(), x.grad().end());
                     x.zero_grad();
                     NoGradGuard no_grad;
                     double worst = 0.0;
                     for (std::size_t i = 0; i < x.numel(); ++i) {
                       const double v = x.data()[i];
                       x.mutable_data()[i] = v + eps;
                       const double up = weighted_sum(gradient_reversal(x, lambda), seed).item();
                       x.mutable_data()[i] = v - eps;
                       const double down = weighted_sum(gradient_reversal(x, lambda), seed).item();
                       x.mutable_data()[i] = v;
                       const double expected = -lambda * (up - down) / (2 * eps);
                       worst = std::max(worst, std::abs(analytic[i] - expected) /
                                                   std::max({std::abs(analytic[i]), std::abs(expected), 1e-8}));
                     }
                     return worst;
                   }});
  add_case("ctc_loss", "log_probs", {6, 4}, [](const Tensor& x, auto) {
    const std::vector<int> target{1, 3, 3};
    return ctc_loss(log_softmax(x), target, 0);
  }, -2.0, 2.0);
  add_case("label_smoothed_ce", "logits", {4, 5}, [](const Tensor& x, auto) {
    const std::vector<int> targets{0, 4, 2, 2};
    return label_smoothed_ce(x, targets, 0.1);
  }, -2.0, 2.0);
  return cases;
}

// ---- tiny models ------------------------------------------------------------

// Vocabulary layout used by the tiny fixtures: 4 specials, then units.
inline ModelConfig tiny_model_config(int vocab_size, std::uint64_t) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.ld_layers = 1;
  c.ffn_dim = 16;
  c.conv_kernel = 3;
  c.feat_dim = 4;
  c.vocab_size = vocab_size;
  c.dropout = 0.0;
  return c;
}

// Random features and a random unit sequence; ld labels follow the fixture
// vocabulary (odd unit ids language A, even language B).
inline Utterance random_utterance(const ModelConfig& c, std::size_t frames, std::size_t units, Rng& rng) {
  Utterance u;
  u.id = "rand";
  u.num_frames = frames;
  u.feat_dim = static_cast<std::size_t>(c.feat_dim);
  std::normal_distribution<double> nd;
  u.features.resize(frames * u.feat_dim);
  for (auto& v : u.features) v = nd(rng);
  std::uniform_int_distribution<int> tok(4, c.vocab_size - 1);
  u.tokens.push_back(c.sos_eos_id);
  for (std::size_t i = 0; i < units; ++i) u.tokens.push_back(tok(rng));
  u.tokens.push_back(c.sos_eos_id);
  for (int t : u.tokens)
    u.ld_labels.push_back(t == c.sos_eos_id ? LdLabel::kSosEos : (t % 2 ? LdLabel::kE : LdLabel::kM));
  return u;
}

// ---- exhaustive decoding oracle ---------------------------------------------

struct OracleResult {
  std::vector<int> units;
  double score = -std::numeric_limits<double>::infinity();
};

// Scores every unit sequence of length <= max_len (over all ids except blank
// and sos/eos) by alpha * -ctc_loss + (1 - alpha) * teacher-forced attention
// log-likelihood including the final sos/eos, and returns the best.
inline OracleResult exhaustive_decode(const Model& model, const Tensor& features, double alpha, int max_len) {
  NoGradGuard no_grad;
  const auto& c = model.config();
  const Tensor enc = model.encode(features, ForwardContext{});
  const Tensor lp = model.ctc_log_probs(enc);
  std::vector<int> alphabet;
  for (int k = 0; k < c.vocab_size; ++k)
    if (k != c.blank_id && k != c.sos_eos_id) alphabet.push_back(k);

  OracleResult best;
  std::vector<int> seq;
  std::function<void()> visit = [&]() {
    std::vector<int> in{c.sos_eos_id};
    in.insert(in.end(), seq.begin(), seq.end());
    std::vector<int> out = seq;
    out.push_back(c.sos_eos_id);
    const Tensor logits = log_softmax(model.asr_decoder_logits(model.asr_embed(in), enc, ForwardContext{}));
    double att = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) att += logits.at(i, static_cast<std::size_t>(out[i]));
    const double ctc = -ctc_loss(lp, seq, c.blank_id).item();
    const double score = combined_score(ctc, att, alpha);
    if (score > best.score) best = {seq, score};
    if (static_cast<int>(seq.size()) == max_len) return;
    for (int k : alphabet) {
      seq.push_back(k);
      visit();
      seq.pop_back();
    }
  };
  visit();
  return best;
}

// ---- mask-regime probes -----------------------------------------------------

struct MaskProbe {
  double max_causal_change = 0.0;  // largest change of any row before the perturbed position
  double max_full_change = 0.0;
};

// Perturbs each position j of a random token sequence and records how much LD
// rows i < j move in causal and in full-context mode.
inline MaskProbe probe_ld_masks(const Model& model, std::size_t n, Rng& rng) {
  NoGradGuard no_grad;
  const auto& c = model.config();
  std::normal_distribution<double> nd;
  std::vector<double> feats(static_cast<std::size_t>(16 * c.feat_dim));
  for (auto& v : feats) v = nd(rng);
  const Tensor enc = model.encode(Tensor::from_data({16, static_cast<std::size_t>(c.feat_dim)}, feats), {});
  std::uniform_int_distribution<int> tok(4, c.vocab_size - 1);
  std::vector<int> ids{c.sos_eos_id};
  for (std::size_t i = 1; i < n; ++i) ids.push_back(tok(rng));

  MaskProbe probe;
  for (bool causal : {true, false}) {
    const Tensor base = softmax(model.ld_decoder_logits(ids, enc, causal, {}));
    for (std::size_t j = 1; j < n; ++j) {
      auto changed = ids;
      changed[j] = changed[j] == 4 ? 5 : 4;
      const Tensor pert = softmax(model.ld_decoder_logits(changed, enc, causal, {}));
      for (std::size_t i = 0; i < j; ++i)
        for (std::size_t k = 0; k < base.size(1); ++k) {
          const double d = std::abs(base.at(i, k) - pert.at(i, k));
          double& slot = causal ? probe.max_causal_change : probe.max_full_change;
          slot = std::max(slot, d);
        }
    }
  }
  return probe;
}

}  // namespace csasr::testing
