#pragma once

// Joint CTC/attention beam search. Hypotheses are ranked by
//   alpha * log p_ctc(prefix) + (1 - alpha) * log p_att(prefix)
// where the CTC term is the prefix probability from the forward variables of
// CtcPrefixScorer and the attention term is the running sum of decoder
// log-probabilities.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/model.hpp"
#include "csasr/vocab.hpp"

namespace csasr {

// Forward variables of one prefix: log-probability that frames 0..t emit the
// prefix and end in a non-blank (r_nonblank) or blank (r_blank) symbol.
struct CtcPrefixState {
  std::vector<double> r_nonblank;
  std::vector<double> r_blank;
  int last_token = -1;  // -1 for the empty prefix
  double prefix_logprob = 0.0;
};

class CtcPrefixScorer {
 public:
  // log_probs is [T1, V] row-major.
  CtcPrefixScorer(std::vector<double> log_probs, std::size_t frames, std::size_t vocab, int blank, int eos);

  CtcPrefixState initial_state() const;
  // Log-probability of `prefix + token` as a prefix, or of the completed
  // prefix when token == eos. Throws std::invalid_argument for blank, for ids
  // outside V, and for a state whose length differs from T1.
  double extend(const CtcPrefixState& state, int token, CtcPrefixState* next) const;

  std::size_t frames() const { return frames_; }

 private:
  std::vector<double> log_probs_;
  std::size_t frames_, vocab_;
  int blank_, eos_;
};

struct Hypothesis {
  std::vector<int> tokens;  // starts with sos/eos; ends with it once terminated
  double att_logprob = 0.0;
  double ctc_logprob = 0.0;
  double score = 0.0;
  CtcPrefixState ctc_state;
  // Causal LD posteriors, one row per token of `tokens` (LPB only).
  std::vector<std::vector<double>> ld_posteriors;
  bool ended = false;

  // Units without the sos/eos framing.
  std::vector<int> units() const;
};

struct BeamSearchOptions {
  int beam = 10;
  double alpha = 0.4;
  // Maximum number of units before sos/eos; 0 means the encoder length.
  int max_len = 0;
  int nbest = 0;  // 0 means beam
};

struct BeamSearchResult {
  std::vector<Hypothesis> nbest;  // sorted by score, best first
  // Set when no hypothesis ended with a finite score.
  bool unterminated = false;
  int steps = 0;
};

double combined_score(double ctc_logprob, double att_logprob, double alpha);

BeamSearchResult beam_search(const Model& model, const Tensor& features, const BeamSearchOptions& options);

// Teacher-forced LD predictions for an utterance's decoder inputs
// ([sos, w1..wN]), in the decoder's training context mode.
std::vector<LdLabel> predict_ld_labels(const Model& model, const Tensor& encoded, std::span<const int> decoder_input);

// One JSON line per utterance: id, k-best list and (with LPB) the step-wise
// LD posteriors of the best hypothesis.
nlohmann::json decode_record(const std::string& id, const BeamSearchResult& result, const Vocab& vocab);

}  // namespace csasr
