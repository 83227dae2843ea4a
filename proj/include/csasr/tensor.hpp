#pragma once

// Define-by-run reverse-mode differentiation over dense float64 arrays.
//
// A Tensor is a shared handle to a Node. Every primitive in ops.hpp builds a
// new Node that remembers its parents and a backward rule; backward() walks
// the resulting DAG once in reverse topological order and accumulates
// gradients into every node that requires them. The graph is rebuilt on
// every forward pass and dies with the last handle to its root.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csasr {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  BackwardFn backward;

  // Zero-initialized on first use.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  // Negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Only meaningful on leaves; mutating an interior node does not re-run its consumers.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape.back() + j]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  const char* op_name() const { return node_->op; }
  const NodePtr& node() const { return node_; }

  // Same values, no history, no gradient.
  Tensor detach() const;

 private:
  NodePtr node_;
};

// Creates the output of a primitive. When gradient recording is off, or no
// parent requires a gradient, the result is a plain constant and `backward`
// is dropped.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, BackwardFn backward);

// Accumulates d(loss)/d(node) into every reachable node that requires grad.
// Throws ShapeError if loss is not a scalar.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Compares backward() against central differences of `f` at `x`.
// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor)
// with floor = 1e-6 * max(1, |f(x)|).
// `x` must be a leaf requiring grad; its values are restored on return.
// The floor keeps round-off in the differences of exactly-zero gradients
// (attention key biases, for one) from reading as relative error.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double eps = 1e-5);

}  // namespace csasr
