#pragma once

// Differentiable primitives. Row-wise ops treat a tensor as
// [numel / last_dim, last_dim]; matmul, transpose and the slices are 2-D.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csasr/tensor.hpp"

namespace csasr {

using Rng = std::mt19937_64;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Same shapes, or `b` 1-D and broadcast over the last axis of `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor swish(const Tensor& x);
// Splits the last axis in halves (a, b) and returns a * sigmoid(b).
Tensor glu(const Tensor& x);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x [T,C], weight [C,K], bias [C]; zero "same" padding along T.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);
// x [H,W,Cin], weight [Cout,Cin,K,K], bias [Cout] -> [Ho,Wo,Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor embedding(const Tensor& table, std::span<const int> ids);
// Concatenates 2-D tensors with equal row counts along the last axis.
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

// Positions where mask != 0 become -inf; they receive no gradient.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask);
// Inverted dropout; identity when !train or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Forward identity, backward multiplies the incoming gradient by -lambda.
Tensor gradient_reversal(const Tensor& x, double lambda);
// Forward identity, backward passes nothing.
Tensor stop_gradient(const Tensor& x);

// ---- name-based dispatch over the primitive inventory -----------------------

struct OpAttrs {
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t start = 0;
  std::size_t count = 1;
  double rate = 0.0;
  double factor = 1.0;
  double eps = 1e-5;
  bool train = false;
  Shape shape;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  Rng* rng = nullptr;
};

// Names accepted by apply(), one per differentiable primitive.
const std::vector<std::string>& op_inventory();

// Dispatches to the primitive called `name`. Throws std::invalid_argument for
// an unknown name or a wrong number of inputs.
Tensor apply(std::string_view name, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace csasr
