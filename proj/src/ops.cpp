#include "csasr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "csasr/kernels.hpp"

namespace csasr {
namespace kern = kernels::omp;

namespace {

std::size_t last_dim(const Tensor& x) { return x.shape().back(); }
std::size_t row_count(const Tensor& x) { return x.numel() / x.shape().back(); }

void require_2d(const char* op, const Tensor& x) {
  if (x.dim() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(x.shape()));
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Elementwise unary op with a derivative computed from (input, output).
template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k)
    throw ShapeError("matmul: inner axes differ (lhs axis 1 = " + std::to_string(k) +
                     ", rhs axis 0 = " + std::to_string(b.size(0)) + ")");
  std::vector<double> out(m * n);
  kern::gemm_nn(m, n, k, a.data(), b.data(), out, false);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) kern::gemm_nt(m, k, n, self.grad, pb.value, pa.grad_buffer(), true);
    if (pb.requires_grad) kern::gemm_tn(k, n, m, pa.value, self.grad, pb.grad_buffer(), true);
  });
}

Tensor transpose(const Tensor& x) {
  require_2d("transpose", x);
  const std::size_t r = x.size(0), c = x.size(1);
  std::vector<double> out(r * c);
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {x}, [r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
      for (auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (b.dim() == 1 && b.size(0) == last_dim(a)) {
    const std::size_t cols = last_dim(a), rows = row_count(a);
    std::vector<double> out(a.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a.data()[r * cols + c] + b.data()[c];
    return make_result("add", a.shape(), std::move(out), {a, b}, [rows, cols](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto g = pa.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        auto g = pb.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    });
  }
  throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " are neither equal nor row-broadcastable on the last axis");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor swish(const Tensor& x) {
  return unary(
      "swish", x, [](double v) { return v * sigmoid(v); },
      [](double v, double) {
        const double s = sigmoid(v);
        return s + v * s * (1.0 - s);
      });
}

Tensor glu(const Tensor& x) {
  const std::size_t cols = last_dim(x);
  if (cols % 2 != 0) throw ShapeError("glu: last axis " + std::to_string(cols) + " is odd");
  const std::size_t half = cols / 2, rows = row_count(x);
  Shape shape = x.shape();
  shape.back() = half;
  std::vector<double> out(rows * half);
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < half; ++c)
      out[r * half + c] = in[r * cols + c] * sigmoid(in[r * cols + half + c]);
  return make_result("glu", std::move(shape), std::move(out), {x}, [rows, half, cols](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < half; ++c) {
        const double a = p.value[r * cols + c];
        const double s = sigmoid(p.value[r * cols + half + c]);
        const double go = self.grad[r * half + c];
        g[r * cols + c] += go * s;
        g[r * cols + half + c] += go * a * s * (1.0 - s);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t cols = last_dim(x), rows = row_count(x);
  std::vector<double> out(x.numel());
  kern::softmax_rows(rows, cols, x.data(), out);
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t cols = last_dim(x), rows = row_count(x);
  std::vector<double> out(x.numel());
  kern::log_softmax_rows(rows, cols, x.data(), out);
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* gy = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += gy[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t cols = last_dim(x), rows = row_count(x);
  if (gamma.numel() != cols || beta.numel() != cols)
    throw ShapeError("layer_norm: gain/bias length must equal last axis " + std::to_string(cols));
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kern::layer_norm_rows(rows, cols, x.data(), gamma.data(), beta.data(), eps, out, *xhat, *inv_std);
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [rows, cols, xhat, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& h = *xhat;
        if (pg.requires_grad) {
          auto g = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c] * h[r * cols + c];
        }
        if (pb.requires_grad) {
          auto g = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
        }
        if (px.requires_grad) {
          auto g = px.grad_buffer();
          const double n = static_cast<double>(cols);
          std::vector<double> dh(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              dh[c] = self.grad[r * cols + c] * pg.value[c];
              sum_dh += dh[c];
              sum_dh_h += dh[c] * h[r * cols + c];
            }
            const double k = (*inv_std)[r] / n;
            for (std::size_t c = 0; c < cols; ++c)
              g[r * cols + c] += k * (n * dh[c] - sum_dh - h[r * cols + c] * sum_dh_h);
          }
        }
      });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_2d("depthwise_conv1d", x);
  require_2d("depthwise_conv1d", weight);
  kernels::Depthwise1dGeometry geo{x.size(0), x.size(1), weight.size(1)};
  if (weight.size(0) != geo.channels || bias.numel() != geo.channels)
    throw ShapeError("depthwise_conv1d: weight axis 0 / bias must equal channel axis " +
                     std::to_string(geo.channels));
  std::vector<double> out(x.numel());
  kern::depthwise1d_forward(geo, x.data(), weight.data(), bias.data(), out);
  return make_result("depthwise_conv1d", x.shape(), std::move(out), {x, weight, bias}, [geo](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    kern::depthwise1d_backward(geo, self.grad, px.value, pw.value,
                               px.requires_grad ? px.grad_buffer() : std::span<double>{},
                               pw.requires_grad ? pw.grad_buffer() : std::span<double>{});
    if (pb.requires_grad) {
      auto g = pb.grad_buffer();
      for (std::size_t t = 0; t < geo.length; ++t)
        for (std::size_t c = 0; c < geo.channels; ++c) g[c] += self.grad[t * geo.channels + c];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (x.dim() != 3) throw ShapeError("conv2d: input must be [H,W,Cin], got " + shape_str(x.shape()));
  if (weight.dim() != 4 || weight.size(2) != weight.size(3))
    throw ShapeError("conv2d: weight must be [Cout,Cin,K,K], got " + shape_str(weight.shape()));
  if (weight.size(1) != x.size(2))
    throw ShapeError("conv2d: weight axis 1 (" + std::to_string(weight.size(1)) +
                     ") differs from input channel axis 2 (" + std::to_string(x.size(2)) + ")");
  if (bias.numel() != weight.size(0)) throw ShapeError("conv2d: bias length differs from weight axis 0");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  kernels::Conv2dGeometry geo{x.size(0), x.size(1), x.size(2), weight.size(0), weight.size(2), stride, padding};
  if (geo.height + 2 * padding < geo.kernel || geo.width + 2 * padding < geo.kernel)
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  const std::size_t ho = geo.out_height(), wo = geo.out_width();
  std::vector<double> out(ho * wo * geo.out_channels);
  kern::conv2d_forward(geo, x.data(), weight.data(), bias.data(), out);
  return make_result("conv2d", {ho, wo, geo.out_channels}, std::move(out), {x, weight, bias},
                     [geo](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       Node& pb = *self.parents[2];
                       if (px.requires_grad) kern::conv2d_backward_input(geo, self.grad, pw.value, px.grad_buffer());
                       if (pw.requires_grad) kern::conv2d_backward_weight(geo, self.grad, px.value, pw.grad_buffer());
                       if (pb.requires_grad) {
                         auto g = pb.grad_buffer();
                         const std::size_t co = geo.out_channels;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % co] += self.grad[i];
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d("embedding", table);
  const std::size_t rows = table.size(0), d = table.size(1);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * d);
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= rows)
      throw ShapeError("embedding: id " + std::to_string(idv[i]) + " outside table axis 0 of " +
                       std::to_string(rows));
    std::copy_n(table.data().begin() + idv[i] * d, d, out.begin() + i * d);
  }
  return make_result("embedding", {idv.size(), d}, std::move(out), {table}, [idv, d](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) g[idv[i] * d + c] += self.grad[i * d + c];
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rows = row_count(parts[0]);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim() != parts[0].dim() || row_count(p) != rows)
      throw ShapeError("concat: leading axes differ (" + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()) + ")");
    widths.push_back(last_dim(p));
    total += last_dim(p);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(in.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = parts[0].shape();
  shape.back() = total;
  return make_result("concat", std::move(shape), std::move(out), parts, [rows, widths, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        auto g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d("slice_rows", x);
  const std::size_t cols = x.size(1);
  if (count == 0 || start + count > x.size(0))
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside axis 0 of " + std::to_string(x.size(0)));
  std::vector<double> out(x.data().begin() + start * cols, x.data().begin() + (start + count) * cols);
  return make_result("slice_rows", {count, cols}, std::move(out), {x}, [start, cols](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * cols + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_2d("slice_cols", x);
  const std::size_t rows = x.size(0), cols = x.size(1);
  if (count == 0 || start + count > cols)
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") outside axis 1 of " + std::to_string(cols));
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + r * cols + start, count, out.begin() + r * count);
  return make_result("slice_cols", {rows, count}, std::move(out), {x}, [rows, cols, start, count](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) g[r * cols + start + c] += self.grad[r * count + c];
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (mask.size() != x.numel())
    throw ShapeError("masked_fill: mask has " + std::to_string(mask.size()) + " entries for tensor " +
                     shape_str(x.shape()));
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (m[i]) out[i] = -std::numeric_limits<double>::infinity();
  return make_result("masked_fill", x.shape(), std::move(out), {x}, [m](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!m[i]) g[i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = keep(rng) ? inv : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor[i];
  return make_result("dropout", x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {x}, [](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("mean", {1}, {s / n}, {x}, [n](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0] / n;
  });
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("gradient_reversal", x.shape(), std::move(out), {x}, [lambda](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
  });
}

Tensor stop_gradient(const Tensor& x) { return x.detach(); }

// ---- dispatch --------------------------------------------------------------

const std::vector<std::string>& op_inventory() {
  static const std::vector<std::string> names = {
      "matmul",     "add",        "mul",         "scale",       "softmax",    "log_softmax",
      "layer_norm", "depthwise_conv1d", "conv2d", "embedding",  "concat",     "slice_rows",
      "slice_cols", "masked_fill", "swish",      "relu",        "glu",        "dropout",
      "transpose",  "reshape",    "sum",         "mean",        "gradient_reversal"};
  return names;
}

Tensor apply(std::string_view name, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(n) + " inputs, got " +
                                  std::to_string(in.size()));
  };
  if (name == "matmul") { need(2); return matmul(in[0], in[1]); }
  if (name == "add") { need(2); return add(in[0], in[1]); }
  if (name == "mul") { need(2); return mul(in[0], in[1]); }
  if (name == "scale") { need(1); return scale(in[0], attrs.factor); }
  if (name == "softmax") { need(1); return softmax(in[0]); }
  if (name == "log_softmax") { need(1); return log_softmax(in[0]); }
  if (name == "layer_norm") { need(3); return layer_norm(in[0], in[1], in[2], attrs.eps); }
  if (name == "depthwise_conv1d") { need(3); return depthwise_conv1d(in[0], in[1], in[2]); }
  if (name == "conv2d") { need(3); return conv2d(in[0], in[1], in[2], attrs.stride, attrs.padding); }
  if (name == "embedding") { need(1); return embedding(in[0], attrs.ids); }
  if (name == "concat") return concat(std::vector<Tensor>(in.begin(), in.end()));
  if (name == "slice_rows") { need(1); return slice_rows(in[0], attrs.start, attrs.count); }
  if (name == "slice_cols") { need(1); return slice_cols(in[0], attrs.start, attrs.count); }
  if (name == "masked_fill") { need(1); return masked_fill(in[0], attrs.mask); }
  if (name == "swish") { need(1); return swish(in[0]); }
  if (name == "relu") { need(1); return relu(in[0]); }
  if (name == "glu") { need(1); return glu(in[0]); }
  if (name == "dropout") {
    need(1);
    if (!attrs.rng) throw std::invalid_argument("dropout: attrs.rng is required");
    return dropout(in[0], attrs.rate, *attrs.rng, attrs.train);
  }
  if (name == "transpose") { need(1); return transpose(in[0]); }
  if (name == "reshape") { need(1); return reshape(in[0], attrs.shape); }
  if (name == "sum") { need(1); return sum(in[0]); }
  if (name == "mean") { need(1); return mean(in[0]); }
  if (name == "gradient_reversal") { need(1); return gradient_reversal(in[0], attrs.factor); }
  throw std::invalid_argument("apply: unknown primitive '" + std::string(name) + "'");
}

}  // namespace csasr
