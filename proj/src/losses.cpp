#include "csasr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "csasr/ops.hpp"

namespace csasr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank, bool* infeasible) {
  if (log_probs.dim() != 2) throw ShapeError("ctc_loss: log-probs must be [T,V], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.size(0), V = log_probs.size(1);
  if (blank < 0 || static_cast<std::size_t>(blank) >= V) throw std::out_of_range("ctc_loss: blank id outside V");
  for (int c : target)
    if (c < 0 || static_cast<std::size_t>(c) >= V || c == blank)
      throw std::out_of_range("ctc_loss: target id " + std::to_string(c) + " invalid");
  if (infeasible) *infeasible = false;
  if (T < ctc_min_frames(target)) {
    if (infeasible) *infeasible = true;
    return Tensor::scalar(std::numeric_limits<double>::infinity());
  }

  // Blank-augmented label sequence: b l1 b l2 ... lL b
  const std::size_t S = 2 * target.size() + 1;
  std::vector<int> ext(S, blank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  auto y = log_probs.data();
  auto lp = [&](std::size_t t, std::size_t s) { return y[t * V + static_cast<std::size_t>(ext[s])]; };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  alpha[0] = lp(0, 0);
  if (S > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  beta[(T - 1) * S + S - 1] = lp(T - 1, S - 1);
  if (S > 1) beta[(T - 1) * S + S - 2] = lp(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2]);
      beta[t * S + s] = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }
  double log_like = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_like = log_add(log_like, alpha[(T - 1) * S + S - 2]);

  return make_result(
      "ctc_loss", {1}, {-log_like}, {log_probs},
      [T, V, S, ext = std::move(ext), alpha = std::move(alpha), beta = std::move(beta), log_like](Node& self) {
        auto g = self.parents[0]->grad_buffer();
        const auto& y = self.parents[0]->value;
        const double up = self.grad[0];
        std::vector<double> occupancy(V);
        for (std::size_t t = 0; t < T; ++t) {
          std::fill(occupancy.begin(), occupancy.end(), kNegInf);
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t k = static_cast<std::size_t>(ext[s]);
            occupancy[k] = log_add(occupancy[k], alpha[t * S + s] + beta[t * S + s]);
          }
          for (std::size_t k = 0; k < V; ++k) {
            if (occupancy[k] == kNegInf) continue;
            // alpha and beta both include the emission at t.
            g[t * V + k] -= up * std::exp(occupancy[k] - y[t * V + k] - log_like);
          }
        }
      });
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double epsilon, int ignore_id) {
  if (logits.dim() != 2) throw ShapeError("label_smoothed_ce: logits must be [N,C], got " + shape_str(logits.shape()));
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("label_smoothed_ce: epsilon must lie in [0,1)");
  const std::size_t N = logits.size(0), C = logits.size(1);
  if (targets.size() != N)
    throw ShapeError("label_smoothed_ce: " + std::to_string(targets.size()) + " targets for " + std::to_string(N) +
                     " rows");
  std::vector<double> weights(N * C, 0.0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i] == ignore_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= C)
      throw std::out_of_range("label_smoothed_ce: target " + std::to_string(targets[i]) + " >= C = " +
                              std::to_string(C));
    ++valid;
    for (std::size_t c = 0; c < C; ++c) weights[i * C + c] = epsilon / static_cast<double>(C);
    weights[i * C + static_cast<std::size_t>(targets[i])] += 1.0 - epsilon;
  }
  if (valid == 0) throw std::invalid_argument("label_smoothed_ce: every position is ignored");
  const Tensor q = Tensor::from_data({N, C}, std::move(weights));
  return scale(sum(mul(log_softmax(logits), q)), -1.0 / static_cast<double>(valid));
}

Tensor asr_loss(const Tensor& l_ctc, const Tensor& l_att, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("asr_loss: alpha must lie in [0,1]");
  return add(scale(l_ctc, alpha), scale(l_att, 1.0 - alpha));
}

Tensor joint_loss(const Tensor& l_ctc, const Tensor& l_att, const Tensor& l_ld, double alpha, double beta) {
  if (beta < 0.0) throw std::invalid_argument("joint_loss: beta must be >= 0");
  return add(asr_loss(l_ctc, l_att, alpha), scale(l_ld, beta));
}

double asr_loss(double l_ctc, double l_att, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("asr_loss: alpha must lie in [0,1]");
  return alpha * l_ctc + (1.0 - alpha) * l_att;
}

double joint_loss(double l_ctc, double l_att, double l_ld, double alpha, double beta) {
  if (beta < 0.0) throw std::invalid_argument("joint_loss: beta must be >= 0");
  return asr_loss(l_ctc, l_att, alpha) + beta * l_ld;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  l_ctc += o.l_ctc;
  l_att += o.l_att;
  l_ld += o.l_ld;
  total += o.total;
  alpha = o.alpha;
  beta = o.beta;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double factor) const {
  LossBreakdown r = *this;
  r.l_ctc *= factor;
  r.l_att *= factor;
  r.l_ld *= factor;
  r.total *= factor;
  return r;
}

}  // namespace csasr
