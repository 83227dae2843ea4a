#include "csasr/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace csasr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

std::vector<double> last_row_log_softmax(const Tensor& logits) {
  const std::size_t n = logits.size(0), v = logits.size(1);
  const Tensor lp = log_softmax(slice_rows(logits, n - 1, 1));
  return {lp.data().begin(), lp.data().begin() + static_cast<std::ptrdiff_t>(v)};
}

// Fills hyp.ld_posteriors up to one row per token.
void extend_ld_cache(const Model& model, const Tensor& encoded, Hypothesis& hyp) {
  while (hyp.ld_posteriors.size() < hyp.tokens.size()) {
    const std::size_t n = hyp.ld_posteriors.size() + 1;
    const Tensor logits =
        model.ld_decoder_logits(std::span<const int>(hyp.tokens.data(), n), encoded, true, ForwardContext{});
    const Tensor post = softmax(slice_rows(logits, n - 1, 1));
    hyp.ld_posteriors.emplace_back(post.data().begin(), post.data().end());
  }
}

std::vector<double> attention_step(const Model& model, const Tensor& encoded, const Hypothesis& hyp) {
  Tensor emb = model.asr_embed(hyp.tokens);
  if (model.config().use_lpb) {
    const std::size_t n = hyp.tokens.size(), k = hyp.ld_posteriors.front().size();
    std::vector<double> flat;
    flat.reserve(n * k);
    for (const auto& row : hyp.ld_posteriors) flat.insert(flat.end(), row.begin(), row.end());
    emb = model.lpb_augment(emb, Tensor::from_data({n, k}, std::move(flat)));
  }
  return last_row_log_softmax(model.asr_decoder_logits(emb, encoded, ForwardContext{}));
}

bool better(const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; }

}  // namespace

// ---- CTC prefix scoring -----------------------------------------------------

CtcPrefixScorer::CtcPrefixScorer(std::vector<double> log_probs, std::size_t frames, std::size_t vocab, int blank,
                                 int eos)
    : log_probs_(std::move(log_probs)), frames_(frames), vocab_(vocab), blank_(blank), eos_(eos) {
  if (frames_ == 0 || log_probs_.size() != frames_ * vocab_)
    throw std::invalid_argument("CtcPrefixScorer: log-probs do not match [T1,V]");
  if (blank_ < 0 || static_cast<std::size_t>(blank_) >= vocab_ || eos_ < 0 || static_cast<std::size_t>(eos_) >= vocab_)
    throw std::invalid_argument("CtcPrefixScorer: blank/eos outside V");
}

CtcPrefixState CtcPrefixScorer::initial_state() const {
  CtcPrefixState s;
  s.r_nonblank.assign(frames_, kNegInf);
  s.r_blank.resize(frames_);
  double acc = 0.0;
  for (std::size_t t = 0; t < frames_; ++t) {
    acc += log_probs_[t * vocab_ + static_cast<std::size_t>(blank_)];
    s.r_blank[t] = acc;
  }
  s.last_token = -1;
  s.prefix_logprob = 0.0;
  return s;
}

double CtcPrefixScorer::extend(const CtcPrefixState& state, int token, CtcPrefixState* next) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_)
    throw std::invalid_argument("CtcPrefixScorer: token " + std::to_string(token) + " outside V");
  if (token == blank_) throw std::invalid_argument("CtcPrefixScorer: prefixes never contain blank");
  if (state.r_nonblank.size() != frames_ || state.r_blank.size() != frames_)
    throw std::invalid_argument("CtcPrefixScorer: state length differs from T1");
  const std::size_t T = frames_;
  if (token == eos_) return log_add(state.r_nonblank[T - 1], state.r_blank[T - 1]);

  const auto c = static_cast<std::size_t>(token);
  auto lp = [&](std::size_t t, std::size_t k) { return log_probs_[t * vocab_ + k]; };
  // Mass that may precede a new emission of c at frame t: a repeated label
  // needs an intervening blank.
  auto phi = [&](std::size_t t) {
    return token == state.last_token ? state.r_blank[t] : log_add(state.r_blank[t], state.r_nonblank[t]);
  };

  CtcPrefixState out;
  out.r_nonblank.assign(T, kNegInf);
  out.r_blank.assign(T, kNegInf);
  out.last_token = token;
  if (state.last_token < 0) out.r_nonblank[0] = lp(0, c);
  double psi = out.r_nonblank[0];
  for (std::size_t t = 1; t < T; ++t) {
    const double prev = phi(t - 1);
    out.r_nonblank[t] = log_add(out.r_nonblank[t - 1], prev) + lp(t, c);
    out.r_blank[t] = log_add(out.r_blank[t - 1], out.r_nonblank[t - 1]) + lp(t, static_cast<std::size_t>(blank_));
    psi = log_add(psi, prev + lp(t, c));
  }
  out.prefix_logprob = psi;
  if (next) *next = std::move(out);
  return psi;
}

// ---- beam search ------------------------------------------------------------

std::vector<int> Hypothesis::units() const {
  if (tokens.empty()) return {};
  auto last = ended ? tokens.end() - 1 : tokens.end();
  return {tokens.begin() + 1, last};
}

double combined_score(double ctc_logprob, double att_logprob, double alpha) {
  // Keep the unused term out so that -inf in it cannot produce NaN.
  if (alpha == 0.0) return att_logprob;
  if (alpha == 1.0) return ctc_logprob;
  return alpha * ctc_logprob + (1.0 - alpha) * att_logprob;
}

BeamSearchResult beam_search(const Model& model, const Tensor& features, const BeamSearchOptions& options) {
  if (options.beam < 1) throw std::invalid_argument("beam_search: beam must be >= 1");
  if (!(options.alpha >= 0.0 && options.alpha <= 1.0))
    throw std::invalid_argument("beam_search: alpha must lie in [0,1]");
  NoGradGuard no_grad;
  const ModelConfig& cfg = model.config();
  const bool lpb = cfg.use_lpb;

  const Tensor encoded = model.encode(features, ForwardContext{});
  const Tensor log_probs = model.ctc_log_probs(encoded);
  const std::size_t T1 = log_probs.size(0), V = log_probs.size(1);
  const CtcPrefixScorer scorer({log_probs.data().begin(), log_probs.data().end()}, T1, V, cfg.blank_id,
                               cfg.sos_eos_id);
  const int max_len = options.max_len > 0 ? options.max_len : static_cast<int>(T1);
  const auto beam = static_cast<std::size_t>(options.beam);
  const auto nbest = static_cast<std::size_t>(options.nbest > 0 ? options.nbest : options.beam);

  Hypothesis root;
  root.tokens = {cfg.sos_eos_id};
  root.ctc_state = scorer.initial_state();
  std::vector<Hypothesis> live{std::move(root)}, ended;

  BeamSearchResult result;
  for (int step = 0; step <= max_len && !live.empty(); ++step) {
    result.steps = step + 1;
    const bool only_eos = step == max_len;
    std::vector<Hypothesis> candidates;
    for (auto& hyp : live) {
      if (lpb) extend_ld_cache(model, encoded, hyp);
      const std::vector<double> att = attention_step(model, encoded, hyp);
      for (int c = 0; c < static_cast<int>(V); ++c) {
        if (c == cfg.blank_id) continue;
        if (only_eos && c != cfg.sos_eos_id) continue;
        Hypothesis next;
        next.att_logprob = hyp.att_logprob + att[static_cast<std::size_t>(c)];
        if (c == cfg.sos_eos_id) {
          next.ctc_logprob = scorer.extend(hyp.ctc_state, c, nullptr);
          next.ended = true;
        } else {
          next.ctc_logprob = scorer.extend(hyp.ctc_state, c, &next.ctc_state);
        }
        next.score = combined_score(next.ctc_logprob, next.att_logprob, options.alpha);
        next.tokens = hyp.tokens;
        next.tokens.push_back(c);
        next.ld_posteriors = hyp.ld_posteriors;
        if (next.ended) {
          next.ctc_state = {};
          ended.push_back(std::move(next));
        } else {
          candidates.push_back(std::move(next));
        }
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(), better);
    if (candidates.size() > beam) candidates.resize(beam);
    live = std::move(candidates);

    // Scores never increase along a hypothesis, so once the best finished
    // hypothesis ties or beats every live one, nothing live can overtake it.
    if (!ended.empty() && !live.empty()) {
      const auto best_ended =
          std::max_element(ended.begin(), ended.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
      if (best_ended->score >= live.front().score) break;
    }
  }

  std::stable_sort(ended.begin(), ended.end(), better);
  if (ended.size() > nbest) ended.resize(nbest);
  result.unterminated = ended.empty() || !std::isfinite(ended.front().score);
  if (result.unterminated) {
    spdlog::warn("beam_search: no hypothesis ended with a finite score within {} steps", max_len);
    if (ended.empty()) {
      std::stable_sort(live.begin(), live.end(), better);
      ended = std::move(live);
      if (ended.size() > nbest) ended.resize(nbest);
    }
  }
  result.nbest = std::move(ended);
  return result;
}

std::vector<LdLabel> predict_ld_labels(const Model& model, const Tensor& encoded,
                                       std::span<const int> decoder_input) {
  NoGradGuard no_grad;
  const Tensor logits =
      model.ld_decoder_logits(decoder_input, encoded, !model.config().ld_full_context, ForwardContext{});
  const std::size_t n = logits.size(0), k = logits.size(1);
  std::vector<LdLabel> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<LdLabel>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

nlohmann::json decode_record(const std::string& id, const BeamSearchResult& result, const Vocab& vocab) {
  nlohmann::json kbest = nlohmann::json::array();
  for (const auto& hyp : result.nbest) {
    const auto units = hyp.units();
    kbest.push_back({{"tokens", vocab.decode(units)},
                     {"att_score", hyp.att_logprob},
                     {"ctc_score", hyp.ctc_logprob},
                     {"score", hyp.score}});
  }
  nlohmann::json rec{{"id", id}, {"kbest", kbest}, {"unterminated", result.unterminated}};
  if (!result.nbest.empty() && !result.nbest.front().ld_posteriors.empty())
    rec["ld_posteriors"] = result.nbest.front().ld_posteriors;
  return rec;
}

}  // namespace csasr
