#pragma once

#include <span>

#include "csasr/tensor.hpp"

namespace csasr {

// Negative log-likelihood of `target` under per-frame log-probabilities
// [T1,V], summed over every blank-augmented alignment (forward-backward in
// log space). When T1 is too short for the target, returns +inf with no
// gradient and sets *infeasible.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank, bool* infeasible = nullptr);

// Minimum frame count for a CTC alignment of `target`: |target| plus one
// separating blank for every repeated adjacent pair.
std::size_t ctc_min_frames(std::span<const int> target);

// Mean over non-ignored positions of
//   (1 - eps) * -log p[target] + eps * mean_c(-log p[c])
// with p = softmax(logits). Positions whose target equals `ignore_id` are
// excluded. Throws std::out_of_range for a target id >= C.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double epsilon, int ignore_id = -1);

// alpha * ctc + (1 - alpha) * att
Tensor asr_loss(const Tensor& l_ctc, const Tensor& l_att, double alpha);
// alpha * ctc + (1 - alpha) * att + beta * ld
Tensor joint_loss(const Tensor& l_ctc, const Tensor& l_att, const Tensor& l_ld, double alpha, double beta);

double asr_loss(double l_ctc, double l_att, double alpha);
double joint_loss(double l_ctc, double l_att, double l_ld, double alpha, double beta);

struct LossBreakdown {
  double l_ctc = 0.0;
  double l_att = 0.0;
  double l_ld = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double factor) const;
};

}  // namespace csasr
