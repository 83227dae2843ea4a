#pragma once

// Dense numeric kernels behind the tensor primitives.
//
// Each kernel exists twice: `serial::` is the single-threaded reference and
// `omp::` splits the outermost output loop across OpenMP threads. Both run the
// same per-row arithmetic in the same order, so their results are
// bit-identical; tests/test_kernels.cpp holds them to that.
//
// Layout conventions (all row-major, float64):
//   gemm         A[m,k] B[k,n] C[m,n]
//   conv2d       input [H,W,Cin], weight [Cout,Cin,K,K], output [Ho,Wo,Cout]
//   depthwise1d  input [T,C], weight [C,K], output [T,C] ("same" padding)

#include <cstddef>
#include <span>

namespace csasr::kernels {

struct Conv2dGeometry {
  std::size_t height = 0, width = 0, in_channels = 0, out_channels = 0;
  std::size_t kernel = 3, stride = 2, padding = 1;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

struct Depthwise1dGeometry {
  std::size_t length = 0, channels = 0, kernel = 1;

  std::size_t left_pad() const { return (kernel - 1) / 2; }
};

#define CSASR_KERNEL_DECLS                                                              \
  /* C (+)= A * B */                                                                     \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,  \
               std::span<const double> b, std::span<double> c, bool accumulate);         \
  /* C (+)= A * B^T, with A[m,k] and B[n,k] */                                          \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,  \
               std::span<const double> b, std::span<double> c, bool accumulate);         \
  /* C (+)= A^T * B, with A[k,m] and B[k,n] */                                          \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,  \
               std::span<const double> b, std::span<double> c, bool accumulate);         \
  void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,      \
                    std::span<double> y);                                                \
  void log_softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> x,  \
                        std::span<double> y);                                            \
  /* y = gamma * (x - mean) / sqrt(var + eps) + beta; also emits xhat and 1/std */      \
  void layer_norm_rows(std::size_t rows, std::size_t cols, std::span<const double> x,   \
                       std::span<const double> gamma, std::span<const double> beta,     \
                       double eps, std::span<double> y, std::span<double> xhat,         \
                       std::span<double> inv_std);                                       \
  void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,           \
                      std::span<const double> weight, std::span<const double> bias,     \
                      std::span<double> output);                                         \
  void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, \
                             std::span<const double> weight, std::span<double> grad_in); \
  void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_out,\
                              std::span<const double> input, std::span<double> grad_w);  \
  void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const double> input,  \
                           std::span<const double> weight, std::span<const double> bias, \
                           std::span<double> output);                                    \
  void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const double> grad_out, \
                            std::span<const double> input, std::span<const double> weight, \
                            std::span<double> grad_in, std::span<double> grad_w);

namespace serial {
CSASR_KERNEL_DECLS
}  // namespace serial

namespace omp {
CSASR_KERNEL_DECLS
}  // namespace omp

#undef CSASR_KERNEL_DECLS

// Number of OpenMP threads the omp:: kernels will use.
int max_threads();

}  // namespace csasr::kernels
