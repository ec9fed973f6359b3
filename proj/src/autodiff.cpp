#include "wv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "wv/kernels.hpp"

namespace wv::ad {

namespace {

thread_local bool g_no_grad = false;

using NodePtr = std::shared_ptr<Node>;

bool needs(const Var& v) { return v.defined() && v.requires_grad(); }

NodePtr make(Shape shape, std::vector<double> value, const char* op, std::initializer_list<const Var*> inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  check_finite(n->value, op);
  if (!g_no_grad) {
    for (const Var* v : inputs)
      if (needs(*v)) n->requires_grad = true;
    if (n->requires_grad)
      for (const Var* v : inputs)
        if (v->defined()) n->parents.push_back(v->ptr());
  }
  return n;
}

NodePtr make_list(Shape shape, std::vector<double> value, const char* op, const std::vector<Var>& inputs) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  check_finite(n->value, op);
  if (!g_no_grad) {
    for (const auto& v : inputs)
      if (needs(v)) n->requires_grad = true;
    if (n->requires_grad)
      for (const auto& v : inputs) n->parents.push_back(v.ptr());
  }
  return n;
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::span<double> g_of(const Var& v) { return v.node()->ensure_grad(); }

int as_int(std::int64_t v) { return static_cast<int>(v); }

}  // namespace

std::span<double> Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }

Var Var::constant(Shape shape, std::vector<double> values) {
  require(wv::numel(shape) == static_cast<std::int64_t>(values.size()), "Var::constant: size mismatch");
  return Var(make(std::move(shape), std::move(values), "const", {}));
}

Var Var::constant(const Tensor& t) { return constant(t.shape(), t.to_f64()); }

Var Var::zeros(Shape shape) {
  const auto n = static_cast<std::size_t>(wv::numel(shape));
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var Var::filled(Shape shape, double v) {
  const auto n = static_cast<std::size_t>(wv::numel(shape));
  return constant(std::move(shape), std::vector<double>(n, v));
}

Var Var::scalar(double v) { return constant({1}, {v}); }

Var Var::parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node_->requires_grad = true;
  v.node_->op = "param";
  return v;
}

double Var::item() const {
  require(numel() == 1, "item() on a tensor with " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Var Var::detach() const { return constant(shape(), node_->value); }

Tensor Var::to_tensor(DType dtype) const { return Tensor::f64(shape(), node_->value).as(dtype); }

void backward(const Var& out) {
  require(out.numel() == 1, "backward() needs a scalar output");
  if (!out.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{out.node(), 0}};
  seen.insert(out.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  out.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    n->backward_fn(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// --- element-wise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  std::vector<double> y(a.value().begin(), a.value().end());
  const auto bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  auto n = make(a.shape(), std::move(y), "add", {&a, &b});
  if (n->requires_grad)
    n->backward_fn = [a, b](Node& self) {
      for (const Var* v : {&a, &b})
        if (needs(*v)) {
          auto g = g_of(*v);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    };
  return Var(n);
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  std::vector<double> y(a.value().begin(), a.value().end());
  const auto bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  auto n = make(a.shape(), std::move(y), "sub", {&a, &b});
  if (n->requires_grad)
    n->backward_fn = [a, b](Node& self) {
      if (needs(a)) {
        auto g = g_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (needs(b)) {
        auto g = g_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  return Var(n);
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  std::vector<double> y(a.value().begin(), a.value().end());
  const auto bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  auto n = make(a.shape(), std::move(y), "mul", {&a, &b});
  if (n->requires_grad)
    n->backward_fn = [a, b](Node& self) {
      if (needs(a)) {
        auto g = g_of(a);
        const auto bv = b.value();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
      }
      if (needs(b)) {
        auto g = g_of(b);
        const auto av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
      }
    };
  return Var(n);
}

Var scale(const Var& a, double s) {
  std::vector<double> y(a.value().begin(), a.value().end());
  for (auto& v : y) v *= s;
  auto n = make(a.shape(), std::move(y), "scale", {&a});
  if (n->requires_grad)
    n->backward_fn = [a, s](Node& self) {
      auto g = g_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    };
  return Var(n);
}

namespace {
inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

Var silu(const Var& a) {
  const auto x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * sigm(x[i]);
  auto n = make(a.shape(), std::move(y), "silu", {&a});
  if (n->requires_grad)
    n->backward_fn = [a](Node& self) {
      auto g = g_of(a);
      const auto x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigm(x[i]);
        g[i] += self.grad[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    };
  return Var(n);
}

Var sigmoid(const Var& a) {
  const auto x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sigm(x[i]);
  auto n = make(a.shape(), std::move(y), "sigmoid", {&a});
  if (n->requires_grad)
    n->backward_fn = [a](Node& self) {
      auto g = g_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
    };
  return Var(n);
}

Var square(const Var& a) {
  const auto x = a.value();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * x[i];
  auto n = make(a.shape(), std::move(y), "square", {&a});
  if (n->requires_grad)
    n->backward_fn = [a](Node& self) {
      auto g = g_of(a);
      const auto x = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * x[i] * self.grad[i];
    };
  return Var(n);
}

// --- shape -----------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto n = make(std::move(shape), std::vector<double>(a.value().begin(), a.value().end()), "reshape", {&a});
  if (n->requires_grad)
    n->backward_fn = [a](Node& self) {
      auto g = g_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  return Var(n);
}

Var transpose(const Var& a) {
  require(a.shape().size() == 2, "transpose expects a 2-D tensor");
  const int r = as_int(a.dim(0)), c = as_int(a.dim(1));
  std::vector<double> y(a.value().size());
  kernels::transpose(r, c, a.value().data(), y.data());
  auto n = make({c, r}, std::move(y), "transpose", {&a});
  if (n->requires_grad)
    n->backward_fn = [a, r, c](Node& self) {
      std::vector<double> t(self.grad.size());
      kernels::transpose(c, r, self.grad.data(), t.data());
      auto g = g_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += t[i];
    };
  return Var(n);
}

Var slice0(const Var& a, std::int64_t begin, std::int64_t end) {
  require(!a.shape().empty() && 0 <= begin && begin < end && end <= a.dim(0), "slice0: bad range");
  const std::int64_t stride = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> y(a.value().begin() + begin * stride, a.value().begin() + end * stride);
  auto n = make(std::move(shape), std::move(y), "slice0", {&a});
  if (n->requires_grad)
    n->backward_fn = [a, begin, stride](Node& self) {
      auto g = g_of(a);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * stride + i] += self.grad[i];
    };
  return Var(n);
}

Var concat0(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat0: no inputs");
  Shape shape = parts[0].shape();
  require(!shape.empty(), "concat0: scalar input");
  std::int64_t rows = 0;
  std::vector<double> y;
  for (const auto& p : parts) {
    require(p.shape().size() == shape.size() && std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1),
            "concat0: trailing extents differ");
    rows += p.dim(0);
    y.insert(y.end(), p.value().begin(), p.value().end());
  }
  shape[0] = rows;
  auto n = make_list(std::move(shape), std::move(y), "concat0", parts);
  if (n->requires_grad)
    n->backward_fn = [parts](Node& self) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const auto cnt = static_cast<std::size_t>(p.numel());
        if (needs(p)) {
          auto g = g_of(p);
          for (std::size_t i = 0; i < cnt; ++i) g[i] += self.grad[off + i];
        }
        off += cnt;
      }
    };
  return Var(n);
}

Var take_row(const Var& table, std::int64_t index) {
  require(table.shape().size() == 2, "take_row expects [rows, cols]");
  require(0 <= index && index < table.dim(0), "take_row: index out of range");
  const std::int64_t cols = table.dim(1);
  std::vector<double> y(table.value().begin() + index * cols, table.value().begin() + (index + 1) * cols);
  auto n = make({cols}, std::move(y), "take_row", {&table});
  if (n->requires_grad)
    n->backward_fn = [table, index, cols](Node& self) {
      auto g = g_of(table);
      for (std::int64_t i = 0; i < cols; ++i) g[index * cols + i] += self.grad[i];
    };
  return Var(n);
}

// --- reductions --------------------------------------------------------------

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  auto n = make({1}, {s}, "sum", {&a});
  if (n->requires_grad)
    n->backward_fn = [a](Node& self) {
      auto g = g_of(a);
      for (auto& v : g) v += self.grad[0];
    };
  return Var(n);
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Var sum_sq_diff(const Var& a, const Var& b) {
  same_shape(a, b, "sum_sq_diff");
  const auto av = a.value(), bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    s += d * d;
  }
  auto n = make({1}, {s}, "sum_sq_diff", {&a, &b});
  if (n->requires_grad)
    n->backward_fn = [a, b](Node& self) {
      const auto av = a.value(), bv = b.value();
      const double g0 = 2.0 * self.grad[0];
      if (needs(a)) {
        auto g = g_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * (av[i] - bv[i]);
      }
      if (needs(b)) {
        auto g = g_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= g0 * (av[i] - bv[i]);
      }
    };
  return Var(n);
}

// --- dense layers ------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(0),
          "linear: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
  const int rows = as_int(x.dim(0)), in = as_int(x.dim(1)), out = as_int(w.dim(1));
  std::vector<double> y(static_cast<std::size_t>(rows) * out);
  kernels::gemm_nn(rows, out, in, x.value().data(), w.value().data(), y.data(), false);
  if (b.defined()) {
    require(b.numel() == out, "linear: bias size");
    const auto bv = b.value();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < out; ++c) y[static_cast<std::size_t>(r) * out + c] += bv[c];
  }
  auto n = make({rows, out}, std::move(y), "linear", {&x, &w, &b});
  if (n->requires_grad)
    n->backward_fn = [x, w, b, rows, in, out](Node& self) {
      if (needs(x)) kernels::gemm_nt(rows, in, out, self.grad.data(), w.value().data(), g_of(x).data(), true);
      if (needs(w)) kernels::gemm_tn(in, out, rows, x.value().data(), self.grad.data(), g_of(w).data(), true);
      if (needs(b)) {
        auto g = g_of(b);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < out; ++c) g[c] += self.grad[static_cast<std::size_t>(r) * out + c];
      }
    };
  return Var(n);
}

Var layer_norm(const Var& x, double eps) {
  require(x.shape().size() == 2, "layer_norm expects [N, D]");
  const std::int64_t rows = x.dim(0), d = x.dim(1);
  const auto xv = x.value();
  std::vector<double> y(xv.size()), rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t i = 0; i < d; ++i) y[static_cast<std::size_t>(r * d + i)] = (xr[i] - mu) * rs;
  }
  auto n = make(x.shape(), std::move(y), "layer_norm", {&x});
  if (n->requires_grad)
    n->backward_fn = [x, rows, d, rstd = std::move(rstd)](Node& self) {
      auto g = g_of(x);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* gy = self.grad.data() + r * d;
        const double* xh = self.value.data() + r * d;
        double mg = 0.0, mgx = 0.0;
        for (std::int64_t i = 0; i < d; ++i) {
          mg += gy[i];
          mgx += gy[i] * xh[i];
        }
        mg /= static_cast<double>(d);
        mgx /= static_cast<double>(d);
        const double rs = rstd[static_cast<std::size_t>(r)];
        for (std::int64_t i = 0; i < d; ++i) g[static_cast<std::size_t>(r * d + i)] += rs * (gy[i] - mg - xh[i] * mgx);
      }
    };
  return Var(n);
}

Var modulate(const Var& x, const Var& shift, const Var& scl) {
  require(x.shape().size() == 2 && shift.numel() == x.dim(1) && scl.numel() == x.dim(1), "modulate: shapes");
  const std::int64_t rows = x.dim(0), d = x.dim(1);
  const auto xv = x.value(), sh = shift.value(), sc = scl.value();
  std::vector<double> y(xv.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < d; ++i) y[static_cast<std::size_t>(r * d + i)] = xv[r * d + i] * (1.0 + sc[i]) + sh[i];
  auto n = make(x.shape(), std::move(y), "modulate", {&x, &shift, &scl});
  if (n->requires_grad)
    n->backward_fn = [x, shift, scl, rows, d](Node& self) {
      const auto xv = x.value(), sc = scl.value();
      if (needs(x)) {
        auto g = g_of(x);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[r * d + i] += self.grad[r * d + i] * (1.0 + sc[i]);
      }
      if (needs(shift)) {
        auto g = g_of(shift);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[i] += self.grad[r * d + i];
      }
      if (needs(scl)) {
        auto g = g_of(scl);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[i] += self.grad[r * d + i] * xv[r * d + i];
      }
    };
  return Var(n);
}

Var gated_residual(const Var& x, const Var& gate, const Var& y) {
  same_shape(x, y, "gated_residual");
  require(x.shape().size() == 2 && gate.numel() == x.dim(1), "gated_residual: gate size");
  const std::int64_t rows = x.dim(0), d = x.dim(1);
  const auto xv = x.value(), gv = gate.value(), yv = y.value();
  std::vector<double> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < d; ++i) out[static_cast<std::size_t>(r * d + i)] = xv[r * d + i] + gv[i] * yv[r * d + i];
  auto n = make(x.shape(), std::move(out), "gated_residual", {&x, &gate, &y});
  if (n->requires_grad)
    n->backward_fn = [x, gate, y, rows, d](Node& self) {
      if (needs(x)) {
        auto g = g_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (needs(gate)) {
        auto g = g_of(gate);
        const auto yv = y.value();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[i] += self.grad[r * d + i] * yv[r * d + i];
      }
      if (needs(y)) {
        auto g = g_of(y);
        const auto gv = gate.value();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[r * d + i] += self.grad[r * d + i] * gv[i];
      }
    };
  return Var(n);
}

Var add_row(const Var& x, const Var& v) {
  require(x.shape().size() == 2 && v.numel() == x.dim(1), "add_row: shapes");
  const std::int64_t rows = x.dim(0), d = x.dim(1);
  std::vector<double> y(x.value().begin(), x.value().end());
  const auto vv = v.value();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t i = 0; i < d; ++i) y[static_cast<std::size_t>(r * d + i)] += vv[i];
  auto n = make(x.shape(), std::move(y), "add_row", {&x, &v});
  if (n->requires_grad)
    n->backward_fn = [x, v, rows, d](Node& self) {
      if (needs(x)) {
        auto g = g_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (needs(v)) {
        auto g = g_of(v);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t i = 0; i < d; ++i) g[i] += self.grad[r * d + i];
      }
    };
  return Var(n);
}

namespace {
void gather_head(const double* src, int rows, int width, int head, int dh, double* dst) {
  for (int r = 0; r < rows; ++r)
    std::copy_n(src + static_cast<std::ptrdiff_t>(r) * width + head * dh, dh, dst + static_cast<std::ptrdiff_t>(r) * dh);
}
void scatter_head_add(const double* src, int rows, int width, int head, int dh, double* dst) {
  for (int r = 0; r < rows; ++r)
    for (int i = 0; i < dh; ++i) dst[static_cast<std::ptrdiff_t>(r) * width + head * dh + i] += src[r * dh + i];
}
}  // namespace

Var attention(const Var& q, const Var& k, const Var& v, int heads, std::vector<double>* probs_out) {
  require(q.shape().size() == 2 && k.shape().size() == 2 && v.shape().size() == 2, "attention: 2-D inputs");
  require(q.dim(1) == k.dim(1) && k.dim(1) == v.dim(1) && k.dim(0) == v.dim(0), "attention: width mismatch");
  require(heads > 0 && q.dim(1) % heads == 0, "attention: width not divisible by heads");
  const int nq = as_int(q.dim(0)), nk = as_int(k.dim(0)), width = as_int(q.dim(1)), dh = width / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(static_cast<std::size_t>(heads) * nq * nk);
  std::vector<double> out(static_cast<std::size_t>(nq) * width, 0.0);
  std::vector<double> qh(static_cast<std::size_t>(nq) * dh), kh(static_cast<std::size_t>(nk) * dh),
      vh(static_cast<std::size_t>(nk) * dh), oh(static_cast<std::size_t>(nq) * dh);
  for (int h = 0; h < heads; ++h) {
    gather_head(q.value().data(), nq, width, h, dh, qh.data());
    gather_head(k.value().data(), nk, width, h, dh, kh.data());
    gather_head(v.value().data(), nk, width, h, dh, vh.data());
    double* p = probs.data() + static_cast<std::ptrdiff_t>(h) * nq * nk;
    kernels::gemm_nt(nq, nk, dh, qh.data(), kh.data(), p, false);
    for (std::size_t i = 0; i < static_cast<std::size_t>(nq) * nk; ++i) p[i] *= inv;
    kernels::softmax_rows(nq, nk, p);
    kernels::gemm_nn(nq, dh, nk, p, vh.data(), oh.data(), false);
    scatter_head_add(oh.data(), nq, width, h, dh, out.data());
  }
  if (probs_out) *probs_out = probs;
  auto n = make(q.shape(), std::move(out), "attention", {&q, &k, &v});
  if (n->requires_grad)
    n->backward_fn = [q, k, v, heads, nq, nk, width, dh, inv, probs = std::move(probs)](Node& self) {
      std::vector<double> qh(static_cast<std::size_t>(nq) * dh), kh(static_cast<std::size_t>(nk) * dh),
          vh(static_cast<std::size_t>(nk) * dh), go(static_cast<std::size_t>(nq) * dh),
          dp(static_cast<std::size_t>(nq) * nk), tmpq(static_cast<std::size_t>(nq) * dh),
          tmpk(static_cast<std::size_t>(nk) * dh);
      for (int h = 0; h < heads; ++h) {
        const double* p = probs.data() + static_cast<std::ptrdiff_t>(h) * nq * nk;
        gather_head(self.grad.data(), nq, width, h, dh, go.data());
        gather_head(q.value().data(), nq, width, h, dh, qh.data());
        gather_head(k.value().data(), nk, width, h, dh, kh.data());
        gather_head(v.value().data(), nk, width, h, dh, vh.data());
        if (needs(v)) {
          kernels::gemm_tn(nk, dh, nq, p, go.data(), tmpk.data(), false);
          scatter_head_add(tmpk.data(), nk, width, h, dh, g_of(v).data());
        }
        if (!needs(q) && !needs(k)) continue;
        kernels::gemm_nt(nq, nk, dh, go.data(), vh.data(), dp.data(), false);
        for (int r = 0; r < nq; ++r) {
          const double* pr = p + static_cast<std::ptrdiff_t>(r) * nk;
          double* dr = dp.data() + static_cast<std::ptrdiff_t>(r) * nk;
          double dot = 0.0;
          for (int c = 0; c < nk; ++c) dot += dr[c] * pr[c];
          for (int c = 0; c < nk; ++c) dr[c] = pr[c] * (dr[c] - dot) * inv;
        }
        if (needs(q)) {
          kernels::gemm_nn(nq, dh, nk, dp.data(), kh.data(), tmpq.data(), false);
          scatter_head_add(tmpq.data(), nq, width, h, dh, g_of(q).data());
        }
        if (needs(k)) {
          kernels::gemm_tn(nk, dh, nq, dp.data(), qh.data(), tmpk.data(), false);
          scatter_head_add(tmpk.data(), nk, width, h, dh, g_of(k).data());
        }
      }
    };
  return Var(n);
}

// --- volumetric ----------------------------------------------------------------

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require(x.shape().size() == 4 && w.shape().size() == 5, "conv3d: x must be [C,T,H,W], w [Co,Ci,k,k,k]");
  require(w.dim(1) == x.dim(0) && w.dim(2) == w.dim(3) && w.dim(3) == w.dim(4), "conv3d: weight shape");
  const kernels::Conv3dGeom geom{as_int(x.dim(0)), as_int(x.dim(1)), as_int(x.dim(2)), as_int(x.dim(3)),
                                 as_int(w.dim(2)), stride, pad};
  require(geom.out_t() > 0 && geom.out_h() > 0 && geom.out_w() > 0, "conv3d: empty output");
  const int co = as_int(w.dim(0));
  const int rows = static_cast<int>(geom.col_rows());
  const int ncol = static_cast<int>(geom.col_cols());
  const bool pointwise = geom.k == 1 && stride == 1 && pad == 0;
  std::vector<double> cols;
  if (!pointwise) {
    cols.resize(static_cast<std::size_t>(rows) * ncol);
    kernels::im2col3d(geom, x.value().data(), cols.data());
  }
  const double* colp = pointwise ? x.value().data() : cols.data();
  std::vector<double> y(static_cast<std::size_t>(co) * ncol);
  kernels::gemm_nn(co, ncol, rows, w.value().data(), colp, y.data(), false);
  if (b.defined()) {
    require(b.numel() == co, "conv3d: bias size");
    const auto bv = b.value();
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < ncol; ++i) y[static_cast<std::size_t>(c) * ncol + i] += bv[c];
  }
  auto n = make({co, geom.out_t(), geom.out_h(), geom.out_w()}, std::move(y), "conv3d", {&x, &w, &b});
  if (n->requires_grad)
    n->backward_fn = [x, w, b, geom, co, rows, ncol, pointwise, cols = std::move(cols)](Node& self) {
      const double* colp = pointwise ? x.value().data() : cols.data();
      if (needs(w)) kernels::gemm_nt(co, rows, ncol, self.grad.data(), colp, g_of(w).data(), true);
      if (needs(b)) {
        auto g = g_of(b);
        for (int c = 0; c < co; ++c)
          for (int i = 0; i < ncol; ++i) g[c] += self.grad[static_cast<std::size_t>(c) * ncol + i];
      }
      if (needs(x)) {
        if (pointwise) {
          kernels::gemm_tn(rows, ncol, co, w.value().data(), self.grad.data(), g_of(x).data(), true);
        } else {
          std::vector<double> dcols(static_cast<std::size_t>(rows) * ncol);
          kernels::gemm_tn(rows, ncol, co, w.value().data(), self.grad.data(), dcols.data(), false);
          kernels::col2im3d(geom, dcols.data(), g_of(x).data());
        }
      }
    };
  return Var(n);
}

Var conv_transpose3d_k2s2(const Var& x, const Var& w, const Var& b) {
  require(x.shape().size() == 4 && w.shape().size() == 5, "conv_transpose3d: x [Ci,T,H,W], w [Ci,Co,2,2,2]");
  require(w.dim(0) == x.dim(0) && w.dim(2) == 2 && w.dim(3) == 2 && w.dim(4) == 2, "conv_transpose3d: weight shape");
  const int ci = as_int(x.dim(0)), t = as_int(x.dim(1)), h = as_int(x.dim(2)), wd = as_int(x.dim(3));
  const int co = as_int(w.dim(1));
  const int n_in = t * h * wd;
  const int r = co * 8;
  // G[co*8, n_in] = W^T x
  std::vector<double> gbuf(static_cast<std::size_t>(r) * n_in);
  kernels::gemm_tn(r, n_in, ci, w.value().data(), x.value().data(), gbuf.data(), false);
  const int T2 = 2 * t, H2 = 2 * h, W2 = 2 * wd;
  std::vector<double> y(static_cast<std::size_t>(co) * T2 * H2 * W2);
  const auto bv = b.defined() ? b.value() : std::span<const double>();
  for (int c = 0; c < co; ++c)
    for (int q = 0; q < 8; ++q) {
      const int dt = q >> 2, dh = (q >> 1) & 1, dw = q & 1;
      const double* src = gbuf.data() + static_cast<std::ptrdiff_t>(c * 8 + q) * n_in;
      for (int a = 0; a < t; ++a)
        for (int bb = 0; bb < h; ++bb)
          for (int cc = 0; cc < wd; ++cc)
            y[((static_cast<std::size_t>(c) * T2 + 2 * a + dt) * H2 + 2 * bb + dh) * W2 + 2 * cc + dw] =
                src[(a * h + bb) * wd + cc] + (bv.empty() ? 0.0 : bv[c]);
    }
  auto n = make({co, T2, H2, W2}, std::move(y), "conv_transpose3d", {&x, &w, &b});
  if (n->requires_grad)
    n->backward_fn = [x, w, b, ci, t, h, wd, co, n_in, r](Node& self) {
      const int T2 = 2 * t, H2 = 2 * h, W2 = 2 * wd;
      std::vector<double> gg(static_cast<std::size_t>(r) * n_in);
      for (int c = 0; c < co; ++c)
        for (int q = 0; q < 8; ++q) {
          const int dt = q >> 2, dh = (q >> 1) & 1, dw = q & 1;
          double* dst = gg.data() + static_cast<std::ptrdiff_t>(c * 8 + q) * n_in;
          for (int a = 0; a < t; ++a)
            for (int bb = 0; bb < h; ++bb)
              for (int cc = 0; cc < wd; ++cc)
                dst[(a * h + bb) * wd + cc] =
                    self.grad[((static_cast<std::size_t>(c) * T2 + 2 * a + dt) * H2 + 2 * bb + dh) * W2 + 2 * cc + dw];
        }
      if (needs(x)) kernels::gemm_nn(ci, n_in, r, w.value().data(), gg.data(), g_of(x).data(), true);
      if (needs(w)) kernels::gemm_nt(ci, r, n_in, x.value().data(), gg.data(), g_of(w).data(), true);
      if (needs(b)) {
        auto g = g_of(b);
        for (int c = 0; c < co; ++c)
          for (int q = 0; q < 8; ++q) {
            const double* src = gg.data() + static_cast<std::ptrdiff_t>(c * 8 + q) * n_in;
            for (int i = 0; i < n_in; ++i) g[c] += src[i];
          }
      }
    };
  return Var(n);
}

Var convex_mix(const Var& alpha, const Var& a, const Var& b) {
  same_shape(a, b, "convex_mix");
  const std::int64_t n_cells = alpha.numel();
  require(n_cells > 0 && a.numel() % n_cells == 0, "convex_mix: alpha does not tile the inputs");
  const std::int64_t ch = a.numel() / n_cells;
  const auto al = alpha.value(), av = a.value(), bv = b.value();
  std::vector<double> y(av.size());
  for (std::int64_t c = 0; c < ch; ++c)
    for (std::int64_t i = 0; i < n_cells; ++i) {
      const std::int64_t j = c * n_cells + i;
      y[static_cast<std::size_t>(j)] = al[i] * av[j] + (1.0 - al[i]) * bv[j];
    }
  auto n = make(a.shape(), std::move(y), "convex_mix", {&alpha, &a, &b});
  if (n->requires_grad)
    n->backward_fn = [alpha, a, b, ch, n_cells](Node& self) {
      const auto al = alpha.value(), av = a.value(), bv = b.value();
      if (needs(alpha)) {
        auto g = g_of(alpha);
        for (std::int64_t c = 0; c < ch; ++c)
          for (std::int64_t i = 0; i < n_cells; ++i) g[i] += self.grad[c * n_cells + i] * (av[c * n_cells + i] - bv[c * n_cells + i]);
      }
      if (needs(a)) {
        auto g = g_of(a);
        for (std::int64_t c = 0; c < ch; ++c)
          for (std::int64_t i = 0; i < n_cells; ++i) g[c * n_cells + i] += self.grad[c * n_cells + i] * al[i];
      }
      if (needs(b)) {
        auto g = g_of(b);
        for (std::int64_t c = 0; c < ch; ++c)
          for (std::int64_t i = 0; i < n_cells; ++i) g[c * n_cells + i] += self.grad[c * n_cells + i] * (1.0 - al[i]);
      }
    };
  return Var(n);
}

Var pad_replicate_even(const Var& x) {
  require(x.shape().size() == 4, "pad_replicate_even expects [C,T,H,W]");
  const std::int64_t c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t t2 = t + (t & 1), h2 = h + (h & 1), w2 = w + (w & 1);
  if (t2 == t && h2 == h && w2 == w) return x;
  const auto src_index = [&](std::int64_t ch, std::int64_t a, std::int64_t bb, std::int64_t cc) {
    return ((ch * t + std::min(a, t - 1)) * h + std::min(bb, h - 1)) * w + std::min(cc, w - 1);
  };
  const auto xv = x.value();
  std::vector<double> y(static_cast<std::size_t>(c * t2 * h2 * w2));
  std::size_t o = 0;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t a = 0; a < t2; ++a)
      for (std::int64_t bb = 0; bb < h2; ++bb)
        for (std::int64_t cc = 0; cc < w2; ++cc) y[o++] = xv[src_index(ch, a, bb, cc)];
  auto n = make({c, t2, h2, w2}, std::move(y), "pad_replicate_even", {&x});
  if (n->requires_grad)
    n->backward_fn = [x, c, t, h, w, t2, h2, w2](Node& self) {
      auto g = g_of(x);
      std::size_t o = 0;
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t a = 0; a < t2; ++a)
          for (std::int64_t bb = 0; bb < h2; ++bb)
            for (std::int64_t cc = 0; cc < w2; ++cc)
              g[((ch * t + std::min(a, t - 1)) * h + std::min(bb, h - 1)) * w + std::min(cc, w - 1)] += self.grad[o++];
    };
  return Var(n);
}

Var haar3d(const Var& x) {
  require(x.shape().size() == 4, "haar3d expects [C,T,H,W]");
  const int c = as_int(x.dim(0)), t = as_int(x.dim(1)), h = as_int(x.dim(2)), w = as_int(x.dim(3));
  require(t % 2 == 0 && h % 2 == 0 && w % 2 == 0, "haar3d: extents must be even (pad first)");
  std::vector<double> y(x.value().size());
  kernels::haar3d_forward(c, t, h, w, x.value().data(), y.data());
  auto n = make({8, c, t / 2, h / 2, w / 2}, std::move(y), "haar3d", {&x});
  if (n->requires_grad)
    n->backward_fn = [x, c, t, h, w](Node& self) {
      std::vector<double> dx(self.grad.size());
      kernels::haar3d_inverse(c, t, h, w, self.grad.data(), dx.data());
      auto g = g_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dx[i];
    };
  return Var(n);
}

}  // namespace wv::ad
