#include "csasr/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace csasr::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

// ---- per-row bodies shared by both backends ------------------------------

inline void gemm_nn_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c, bool accumulate) {
  double* ci = c + i * n;
  if (!accumulate) std::fill(ci, ci + n, 0.0);
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    if (av == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c, bool accumulate) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] = accumulate ? ci[j] + acc : acc;
  }
}

// Row `r` of C = A^T B where A is [k,m] and B is [k,n].
inline void gemm_tn_row(std::size_t r, std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c, bool accumulate) {
  double* cr = c + r * n;
  if (!accumulate) std::fill(cr, cr + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + r];
    if (av == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] += av * bp[j];
  }
}

inline void softmax_row(std::size_t cols, const double* x, double* y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void log_softmax_row(std::size_t cols, const double* x, double* y) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
}

inline void layer_norm_row(std::size_t r, std::size_t cols, const double* x, const double* gamma,
                           const double* beta, double eps, double* y, double* xhat,
                           double* inv_std) {
  const double* xr = x + r * cols;
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
  var /= static_cast<double>(cols);
  const double is = 1.0 / std::sqrt(var + eps);
  inv_std[r] = is;
  for (std::size_t j = 0; j < cols; ++j) {
    const double h = (xr[j] - mean) * is;
    xhat[r * cols + j] = h;
    y[r * cols + j] = gamma[j] * h + beta[j];
  }
}

std::vector<double> conv2d_weight_hwio(const Conv2dGeometry& g, const double* w) {
  // [Cout,Cin,K,K] -> [K,K,Cin,Cout]
  const std::size_t K = g.kernel, ci_n = g.in_channels, co_n = g.out_channels;
  std::vector<double> t(K * K * ci_n * co_n);
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t ci = 0; ci < ci_n; ++ci)
      for (std::size_t kh = 0; kh < K; ++kh)
        for (std::size_t kw = 0; kw < K; ++kw)
          t[((kh * K + kw) * ci_n + ci) * co_n + co] = w[((co * ci_n + ci) * K + kh) * K + kw];
  return t;
}

inline void conv2d_forward_row(const Conv2dGeometry& g, std::size_t ho, const double* in,
                               const double* w_hwio, const double* bias, double* out) {
  const std::size_t Wo = g.out_width(), K = g.kernel;
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  for (std::size_t wo = 0; wo < Wo; ++wo) {
    double* o = out + (ho * Wo + wo) * co_n;
    for (std::size_t co = 0; co < co_n; ++co) o[co] = bias[co];
    for (std::size_t kh = 0; kh < K; ++kh) {
      const long h = static_cast<long>(ho * g.stride + kh) - static_cast<long>(g.padding);
      if (h < 0 || h >= static_cast<long>(g.height)) continue;
      for (std::size_t kw = 0; kw < K; ++kw) {
        const long w = static_cast<long>(wo * g.stride + kw) - static_cast<long>(g.padding);
        if (w < 0 || w >= static_cast<long>(g.width)) continue;
        const double* x = in + (static_cast<std::size_t>(h) * g.width + static_cast<std::size_t>(w)) * ci_n;
        const double* wk = w_hwio + (kh * K + kw) * ci_n * co_n;
        for (std::size_t ci = 0; ci < ci_n; ++ci) {
          const double xv = x[ci];
          if (xv == 0.0) continue;
          const double* wc = wk + ci * co_n;
          for (std::size_t co = 0; co < co_n; ++co) o[co] += xv * wc[co];
        }
      }
    }
  }
}

// Gather form: input row h collects from every output row whose window covers it.
inline void conv2d_backward_input_row(const Conv2dGeometry& g, std::size_t h, const double* gout,
                                      const double* w, double* gin) {
  const std::size_t Ho = g.out_height(), Wo = g.out_width(), K = g.kernel;
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  for (std::size_t x = 0; x < g.width; ++x) {
    double* gi = gin + (h * g.width + x) * ci_n;
    for (std::size_t kh = 0; kh < K; ++kh) {
      const long num_h = static_cast<long>(h + g.padding) - static_cast<long>(kh);
      if (num_h < 0 || num_h % static_cast<long>(g.stride) != 0) continue;
      const std::size_t ho = static_cast<std::size_t>(num_h) / g.stride;
      if (ho >= Ho) continue;
      for (std::size_t kw = 0; kw < K; ++kw) {
        const long num_w = static_cast<long>(x + g.padding) - static_cast<long>(kw);
        if (num_w < 0 || num_w % static_cast<long>(g.stride) != 0) continue;
        const std::size_t wo = static_cast<std::size_t>(num_w) / g.stride;
        if (wo >= Wo) continue;
        const double* go = gout + (ho * Wo + wo) * co_n;
        for (std::size_t co = 0; co < co_n; ++co) {
          const double gv = go[co];
          if (gv == 0.0) continue;
          const double* wr = w + (co * ci_n) * K * K + kh * K + kw;
          for (std::size_t ci = 0; ci < ci_n; ++ci) gi[ci] += gv * wr[ci * K * K];
        }
      }
    }
  }
}

inline void conv2d_backward_weight_row(const Conv2dGeometry& g, std::size_t co, const double* gout,
                                       const double* in, double* gw) {
  const std::size_t Ho = g.out_height(), Wo = g.out_width(), K = g.kernel;
  const std::size_t ci_n = g.in_channels, co_n = g.out_channels;
  double* gwc = gw + co * ci_n * K * K;
  for (std::size_t ho = 0; ho < Ho; ++ho) {
    for (std::size_t wo = 0; wo < Wo; ++wo) {
      const double gv = gout[(ho * Wo + wo) * co_n + co];
      if (gv == 0.0) continue;
      for (std::size_t kh = 0; kh < K; ++kh) {
        const long h = static_cast<long>(ho * g.stride + kh) - static_cast<long>(g.padding);
        if (h < 0 || h >= static_cast<long>(g.height)) continue;
        for (std::size_t kw = 0; kw < K; ++kw) {
          const long w = static_cast<long>(wo * g.stride + kw) - static_cast<long>(g.padding);
          if (w < 0 || w >= static_cast<long>(g.width)) continue;
          const double* x = in + (static_cast<std::size_t>(h) * g.width + static_cast<std::size_t>(w)) * ci_n;
          for (std::size_t ci = 0; ci < ci_n; ++ci) gwc[(ci * K + kh) * K + kw] += gv * x[ci];
        }
      }
    }
  }
}

inline void depthwise1d_forward_row(const Depthwise1dGeometry& g, std::size_t t, const double* in,
                                    const double* w, const double* bias, double* out) {
  const std::size_t C = g.channels, K = g.kernel, pad = g.left_pad();
  double* o = out + t * C;
  for (std::size_t c = 0; c < C; ++c) o[c] = bias[c];
  for (std::size_t k = 0; k < K; ++k) {
    const long s = static_cast<long>(t + k) - static_cast<long>(pad);
    if (s < 0 || s >= static_cast<long>(g.length)) continue;
    const double* x = in + static_cast<std::size_t>(s) * C;
    for (std::size_t c = 0; c < C; ++c) o[c] += x[c] * w[c * K + k];
  }
}

inline void depthwise1d_backward_input_row(const Depthwise1dGeometry& g, std::size_t s,
                                           const double* gout, const double* w, double* gin) {
  const std::size_t C = g.channels, K = g.kernel, pad = g.left_pad();
  double* gi = gin + s * C;
  for (std::size_t k = 0; k < K; ++k) {
    const long t = static_cast<long>(s + pad) - static_cast<long>(k);
    if (t < 0 || t >= static_cast<long>(g.length)) continue;
    const double* go = gout + static_cast<std::size_t>(t) * C;
    for (std::size_t c = 0; c < C; ++c) gi[c] += go[c] * w[c * K + k];
  }
}

inline void depthwise1d_backward_weight_row(const Depthwise1dGeometry& g, std::size_t c,
                                            const double* gout, const double* in, double* gw) {
  const std::size_t C = g.channels, K = g.kernel, pad = g.left_pad();
  for (std::size_t k = 0; k < K; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < g.length; ++t) {
      const long s = static_cast<long>(t + k) - static_cast<long>(pad);
      if (s < 0 || s >= static_cast<long>(g.length)) continue;
      acc += gout[t * C + c] * in[static_cast<std::size_t>(s) * C + c];
    }
    gw[c * K + k] += acc;
  }
}

}  // namespace

// The two backends differ only in the pragma in front of the outer loop.
#define CSASR_DEFINE_KERNELS(PARALLEL_FOR)                                                       \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,          \
               std::span<const double> b, std::span<double> c, bool accumulate) {               \
    const bool big = m * n * k >= kParallelWork;                                                \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long i = 0; i < static_cast<long>(m); ++i)                                             \
      gemm_nn_row(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data(), accumulate); \
  }                                                                                             \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,          \
               std::span<const double> b, std::span<double> c, bool accumulate) {               \
    const bool big = m * n * k >= kParallelWork;                                                \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long i = 0; i < static_cast<long>(m); ++i)                                             \
      gemm_nt_row(static_cast<std::size_t>(i), n, k, a.data(), b.data(), c.data(), accumulate); \
  }                                                                                             \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,          \
               std::span<const double> b, std::span<double> c, bool accumulate) {               \
    const bool big = m * n * k >= kParallelWork;                                                \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long r = 0; r < static_cast<long>(m); ++r)                                             \
      gemm_tn_row(static_cast<std::size_t>(r), m, n, k, a.data(), b.data(), c.data(),           \
                  accumulate);                                                                  \
  }                                                                                             \
  void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,              \
                    std::span<double> y) {                                                      \
    const bool big = rows * cols * 8 >= kParallelWork;                                          \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long r = 0; r < static_cast<long>(rows); ++r)                                          \
      softmax_row(cols, x.data() + r * cols, y.data() + r * cols);                              \
  }                                                                                             \
  void log_softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,          \
                        std::span<double> y) {                                                  \
    const bool big = rows * cols * 8 >= kParallelWork;                                          \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long r = 0; r < static_cast<long>(rows); ++r)                                          \
      log_softmax_row(cols, x.data() + r * cols, y.data() + r * cols);                          \
  }                                                                                             \
  void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,           \
                       std::span<const double> gamma, std::span<const double> beta,             \
                       double eps, std::span<double> y, std::span<double> xhat,                 \
                       std::span<double> inv_std) {                                             \
    const bool big = rows * cols * 8 >= kParallelWork;                                          \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long r = 0; r < static_cast<long>(rows); ++r)                                          \
      layer_norm_row(static_cast<std::size_t>(r), cols, x.data(), gamma.data(), beta.data(),    \
                     eps, y.data(), xhat.data(), inv_std.data());                               \
  }                                                                                             \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,                   \
                      std::span<const double> weight, std::span<const double> bias,             \
                      std::span<double> output) {                                               \
    const std::vector<double> w_hwio = conv2d_weight_hwio(g, weight.data());                    \
    const bool big = g.out_height() * g.out_width() * g.in_channels * g.out_channels *          \
                         g.kernel * g.kernel >= kParallelWork;                                  \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long ho = 0; ho < static_cast<long>(g.out_height()); ++ho)                             \
      conv2d_forward_row(g, static_cast<std::size_t>(ho), input.data(), w_hwio.data(),          \
                         bias.data(), output.data());                                           \
  }                                                                                             \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out,         \
                             std::span<const double> weight, std::span<double> grad_in) {       \
    const bool big = g.height * g.width * g.in_channels * g.out_channels * 4 >= kParallelWork;  \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long h = 0; h < static_cast<long>(g.height); ++h)                                      \
      conv2d_backward_input_row(g, static_cast<std::size_t>(h), grad_out.data(), weight.data(), \
                                grad_in.data());                                                \
  }                                                                                             \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_out,        \
                              std::span<const double> input, std::span<double> grad_w) {        \
    const bool big = g.out_height() * g.out_width() * g.in_channels * g.out_channels *          \
                         g.kernel * g.kernel >= kParallelWork;                                  \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long co = 0; co < static_cast<long>(g.out_channels); ++co)                             \
      conv2d_backward_weight_row(g, static_cast<std::size_t>(co), grad_out.data(),              \
                                 input.data(), grad_w.data());                                  \
  }                                                                                             \
  void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const double> input,         \
                           std::span<const double> weight, std::span<const double> bias,        \
                           std::span<double> output) {                                          \
    const bool big = g.length * g.channels * g.kernel >= kParallelWork;                         \
    (void)big;                                                                                  \
    PARALLEL_FOR                                                                                \
    for (long t = 0; t < static_cast<long>(g.length); ++t)                                      \
      depthwise1d_forward_row(g, static_cast<std::size_t>(t), input.data(), weight.data(),      \
                              bias.data(), output.data());                                      \
  }                                                                                             \
  void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const double> grad_out,     \
                            std::span<const double> input, std::span<const double> weight,      \
                            std::span<double> grad_in, std::span<double> grad_w) {              \
    const bool big = g.length * g.channels * g.kernel >= kParallelWork;                         \
    (void)big;                                                                                  \
    if (!grad_in.empty()) {                                                                     \
      PARALLEL_FOR                                                                              \
      for (long s = 0; s < static_cast<long>(g.length); ++s)                                    \
        depthwise1d_backward_input_row(g, static_cast<std::size_t>(s), grad_out.data(),         \
                                       weight.data(), grad_in.data());                          \
    }                                                                                           \
    if (!grad_w.empty()) {                                                                      \
      PARALLEL_FOR                                                                              \
      for (long c = 0; c < static_cast<long>(g.channels); ++c)                                  \
        depthwise1d_backward_weight_row(g, static_cast<std::size_t>(c), grad_out.data(),        \
                                        input.data(), grad_w.data());                           \
    }                                                                                           \
  }

namespace serial {
CSASR_DEFINE_KERNELS()
}  // namespace serial

namespace omp {
CSASR_DEFINE_KERNELS(_Pragma("omp parallel for schedule(static) if(big)"))
}  // namespace omp

#undef CSASR_DEFINE_KERNELS

int max_threads() { return omp_get_max_threads(); }

}  // namespace csasr::kernels
