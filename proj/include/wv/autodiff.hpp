#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wv/tensor.hpp"

// Tape-free reverse-mode differentiation over float64 arrays. Every op builds
// a node that owns its value and, when any input requires a gradient, a
// closure that pushes the node's gradient into its parents. `backward()`
// runs the closures in reverse topological order.

namespace wv::ad {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::span<double> ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<double> values);
  static Var constant(const Tensor& t);
  static Var zeros(Shape shape);
  static Var filled(Shape shape, double v);
  static Var scalar(double v);
  /// Leaf that accumulates gradients.
  static Var parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  std::int64_t dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Drops accumulated gradient (parameters).
  void zero_grad() { node_->grad.clear(); }
  /// Same values, no history.
  Var detach() const;
  Tensor to_tensor(DType dtype = DType::kFloat64) const;

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, newly created nodes record no history (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(out)/d(out) = 1 for a scalar `out` and back-propagates.
void backward(const Var& out);

// --- element-wise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);

// --- shape -----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
/// 2-D transpose.
Var transpose(const Var& a);
/// Rows [begin, end) along the leading dimension.
Var slice0(const Var& a, std::int64_t begin, std::int64_t end);
/// Concatenates along the leading dimension; trailing extents must agree.
Var concat0(const std::vector<Var>& parts);
/// Row `index` of a [rows, cols] table as a [cols] vector.
Var take_row(const Var& table, std::int64_t index);

// --- reductions and losses -------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
/// sum((a - b)^2)
Var sum_sq_diff(const Var& a, const Var& b);

// --- dense layers ----------------------------------------------------------
/// x[N,I] w[I,O] (+ b[O])
Var linear(const Var& x, const Var& w, const Var& b);
/// Per-row layer norm without affine parameters.
Var layer_norm(const Var& x, double eps = 1e-6);
/// x[N,D] * (1 + scale[D]) + shift[D]
Var modulate(const Var& x, const Var& shift, const Var& scale);
/// x[N,D] + gate[D] * y[N,D]
Var gated_residual(const Var& x, const Var& gate, const Var& y);
/// x[N,D] + v[D] broadcast over rows
Var add_row(const Var& x, const Var& v);
/// Multi-head scaled dot-product attention. q[Nq,H*dh], k,v[Nk,H*dh].
/// When `probs_out` is set it receives the [H,Nq,Nk] attention weights.
Var attention(const Var& q, const Var& k, const Var& v, int heads, std::vector<double>* probs_out = nullptr);

// --- volumetric ------------------------------------------------------------
/// x[Ci,T,H,W], w[Co,Ci,k,k,k], b[Co] -> [Co,To,Ho,Wo]
Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// Transposed convolution with kernel 2 and stride 2. x[Ci,T,H,W], w[Ci,Co,2,2,2], b[Co].
Var conv_transpose3d_k2s2(const Var& x, const Var& w, const Var& b);
/// alpha[N] * a[C,N] + (1 - alpha[N]) * b[C,N]; a, b viewed as [C, N] with N = numel/C.
Var convex_mix(const Var& alpha, const Var& a, const Var& b);
/// Replicates the last slice of any odd extent of x[C,T,H,W] so all three are even.
Var pad_replicate_even(const Var& x);
/// Single-level orthonormal separable Haar of x[C,T,H,W] with even extents,
/// returns [8,C,T/2,H/2,W/2]; subband index bits are (t,h,w) with 1 = detail.
Var haar3d(const Var& x);

}  // namespace wv::ad
