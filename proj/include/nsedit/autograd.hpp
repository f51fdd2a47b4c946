#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "nsedit/tensor.hpp"

namespace nsedit {

// Tape node. Leaves with requires_grad are trainable parameters; interior nodes
// carry a backward closure that pushes their gradient into their parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Adds g into this node's gradient buffer, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Seeds d(root)/d(root) = 1 for a single-element root and runs the tape in reverse
// topological order.
void backward(const Var& root);

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

bool grad_enabled();

// Builds a node from `value`; records parents and the closure only when grad is
// enabled and at least one parent requires it.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

namespace ops {

Var detach(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double v);
Var sum(const Var& x);
Var mean(const Var& x);
Var sum_all(std::span<const Var> scalars);
Var mse(const Var& a, const Var& b);
Var reshape(const Var& x, Shape shape);

Var leaky_relu(const Var& x, real slope = 0.2f);
Var tanh(const Var& x);

// x: (B, Cin, H, W); weight: (Cout, Cin, K, K); bias: (Cout) or empty Var.
// Each batch item is computed with the same kernel sequence, so results do not
// depend on batch composition.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
int conv_output_size(int input, int kernel, int stride, int padding);

// x: (B, in); weight: (out, in); bias: (out) or empty Var. Row-wise, batch invariant.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var instance_norm(const Var& x, double eps = 1e-5);
// style: (B, 2C); first C entries scale, last C entries shift.
Var adain(const Var& x, const Var& style, double eps = 1e-5);

Var upsample_nearest(const Var& x, int factor);
Var avg_pool_2x2(const Var& x);
Var concat_channels(std::span<const Var> parts);
// out[b * times + j] = x[b]
Var repeat_interleave(const Var& x, int times);
Var slice_batch(const Var& x, int begin, int count);

// rows: (N, ...) flattened per item. Returns (N, N) Euclidean distances.
Var pairwise_distances(const Var& rows);
// Divides each row by (row sum + eps).
Var normalize_rows(const Var& d, double eps);
// (1 / (N^2 - N)) * sum_ij max(0, alpha * dz_ij - dg_ij)
Var hinge_mean(const Var& dz, const Var& dg, double alpha);
// mean(log(1 + exp(sign * x)))
Var softplus_mean(const Var& x, double sign);

}  // namespace ops
}  // namespace nsedit
