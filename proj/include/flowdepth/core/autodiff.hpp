#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "flowdepth/core/tensor.hpp"

namespace flowdepth::ad {

// Reverse-mode tape. A Var owns its value, a lazily allocated gradient and
// the closure that pushes its gradient into the parents. Graphs are built
// per forward pass and freed when the last Var goes out of scope.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Tensor& g() {
    if (grad.data.empty()) grad = Tensor::zeros(val.shape);
    return grad;
  }
  void zero_grad() { grad = Tensor(); }
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

inline Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

inline Var leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

// Detach from the tape: same value, no gradient flow.
inline Var detach(const Var& x) { return constant(x->val); }

inline void topo_order(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

inline void backward(const Var& root) {
  if (root->val.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;
  std::vector<Node*> order;
  topo_order(root, order);
  root->g()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.data.empty()) n->backprop(*n);
  }
}

// ---- elementwise ops (scalar Vars of shape [1] broadcast against tensors) ----

namespace detail {

inline bool is_scalar(const Var& v) { return v->val.numel() == 1; }

// binary elementwise with scalar broadcast on either side
inline Var binary(const Var& a, const Var& b, const char* name,
                  double (*f)(double, double),
                  double (*dfa)(double, double),
                  double (*dfb)(double, double)) {
  const bool sa = is_scalar(a), sb = is_scalar(b);
  if (!sa && !sb) check_same_shape(a->val, b->val, name);
  const Tensor& big = sa ? b->val : a->val;
  Tensor out(big.shape);
  const long n = big.numel();
  for (long i = 0; i < n; ++i) {
    const double av = a->val[sa ? 0 : i];
    const double bv = b->val[sb ? 0 : i];
    out[i] = f(av, bv);
  }
  return make_op(std::move(out), {a, b}, [=](Node& self) {
    const long m = self.val.numel();
    if (a->requires_grad) {
      Tensor& ga = a->g();
      for (long i = 0; i < m; ++i)
        ga[sa ? 0 : i] += self.grad[i] * dfa(a->val[sa ? 0 : i], b->val[sb ? 0 : i]);
    }
    if (b->requires_grad) {
      Tensor& gb = b->g();
      for (long i = 0; i < m; ++i)
        gb[sb ? 0 : i] += self.grad[i] * dfb(a->val[sa ? 0 : i], b->val[sb ? 0 : i]);
    }
  });
}

inline Var unary(const Var& a, double (*f)(double), double (*df)(double)) {
  Tensor out(a->val.shape);
  const long n = out.numel();
  for (long i = 0; i < n; ++i) out[i] = f(a->val[i]);
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->g();
    for (long i = 0; i < self.val.numel(); ++i)
      ga[i] += self.grad[i] * df(a->val[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary(a, b, "add",
      [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
  return detail::binary(a, b, "sub",
      [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
  return detail::binary(a, b, "mul",
      [](double x, double y) { return x * y; },
      [](double, double y) { return y; },
      [](double x, double) { return x; });
}
inline Var div(const Var& a, const Var& b) {
  return detail::binary(a, b, "div",
      [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}
inline Var minimum(const Var& a, const Var& b) {
  // ties route the gradient to a
  return detail::binary(a, b, "minimum",
      [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}
inline Var maximum(const Var& a, const Var& b) {
  return detail::binary(a, b, "maximum",
      [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Var neg(const Var& a) {
  return detail::unary(a, [](double x) { return -x; }, [](double) { return -1.0; });
}
inline Var vexp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double x) { return std::exp(x); });
}
inline Var vlog(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x) { return 1.0 / x; });
}
inline Var vsqrt(const Var& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double x) { return 0.5 / std::sqrt(x); });
}
inline Var vabs(const Var& a) {
  return detail::unary(a, [](double x) { return std::fabs(x); },
                       [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Var square(const Var& a) {
  return detail::unary(a, [](double x) { return x * x; },
                       [](double x) { return 2.0 * x; });
}
inline Var vsin(const Var& a) {
  return detail::unary(a, [](double x) { return std::sin(x); },
                       [](double x) { return std::cos(x); });
}
inline Var vcos(const Var& a) {
  return detail::unary(a, [](double x) { return std::cos(x); },
                       [](double x) { return -std::sin(x); });
}
inline Var relu(const Var& a) {
  return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; },
                       [](double x) { return x > 0 ? 1.0 : 0.0; });
}
inline Var elu(const Var& a) {
  return detail::unary(a,
      [](double x) { return x > 0 ? x : std::expm1(x); },
      [](double x) { return x > 0 ? 1.0 : std::exp(x); });
}
inline Var sigmoid(const Var& a) {
  return detail::unary(a,
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      });
}
inline Var vtanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double x) {
                         const double t = std::tanh(x);
                         return 1.0 - t * t;
                       });
}
inline Var softplus(const Var& a) {
  return detail::unary(a,
      [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
}
inline Var reciprocal(const Var& a) {
  return detail::unary(a, [](double x) { return 1.0 / x; },
                       [](double x) { return -1.0 / (x * x); });
}
// x*log(x) with 0 log 0 := 0 (entropy terms)
inline Var xlogx(const Var& a) {
  return detail::unary(a,
      [](double x) { return x > 0 ? x * std::log(x) : 0.0; },
      [](double x) { return x > 1e-300 ? std::log(x) + 1.0 : 0.0; });
}

inline Var add_scalar(const Var& a, double c) { return add(a, constant_scalar(c)); }
inline Var mul_scalar(const Var& a, double c) { return mul(a, constant_scalar(c)); }

// elementwise multiply by a constant tensor (masks, fixed weights)
inline Var mul_const(const Var& a, const Tensor& m) { return mul(a, constant(m)); }
inline Var add_const(const Var& a, const Tensor& m) { return add(a, constant(m)); }

// ---- reductions / reshaping ----

inline Var sum_all(const Var& a) {
  Tensor out = Tensor::scalar(a->val.sum());
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->g();
    const double g = self.grad[0];
    for (long i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

inline Var mean_all(const Var& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->val.numel()));
}

// mean over (H,W) of a [C,H,W] tensor -> [C]
inline Var mean_hw(const Var& a) {
  const int C = a->val.dim(0), H = a->val.dim(1), W = a->val.dim(2);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double s = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) s += a->val.at(c, y, x);
    out[c] = s / (static_cast<double>(H) * W);
  }
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->g();
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int c = 0; c < C; ++c) {
      const double g = self.grad[c] * inv;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ga.at(c, y, x) += g;
    }
  });
}

inline Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::numel_of(shape) != a->val.numel())
    throw std::invalid_argument("reshape: numel mismatch");
  Tensor out = a->val;
  out.shape = shape;
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->g();
    for (long i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
  });
}

// stack scalars ([1] each) into a vector [n]
inline Var stack_scalars(const std::vector<Var>& xs) {
  Tensor out({static_cast<int>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) out[static_cast<long>(i)] = xs[i]->val[0];
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_op(std::move(out), parents, [=](Node& self) {
    for (size_t i = 0; i < xs.size(); ++i)
      if (xs[i]->requires_grad) xs[i]->g()[0] += self.grad[static_cast<long>(i)];
  });
}

inline Var index1d(const Var& a, int i) {
  Tensor out = Tensor::scalar(a->val[i]);
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (a->requires_grad) a->g()[i] += self.grad[0];
  });
}

// concatenate along axis 0 (channel axis for CHW)
inline Var concat0(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat0: empty");
  std::vector<int> shape = xs[0]->val.shape;
  long stride = 1;
  for (size_t d = 1; d < shape.size(); ++d) stride *= shape[d];
  int total = 0;
  for (const auto& x : xs) total += x->val.dim(0);
  shape[0] = total;
  Tensor out(shape);
  long off = 0;
  for (const auto& x : xs) {
    std::copy(x->val.data.begin(), x->val.data.end(), out.data.begin() + off);
    off += x->val.numel();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_op(std::move(out), parents, [=](Node& self) {
    long o = 0;
    for (const auto& x : xs) {
      if (x->requires_grad) {
        Tensor& gx = x->g();
        for (long i = 0; i < gx.numel(); ++i) gx[i] += self.grad[o + i];
      }
      o += x->val.numel();
    }
  });
}

inline Var slice0(const Var& a, int start, int count) {
  std::vector<int> shape = a->val.shape;
  long stride = 1;
  for (size_t d = 1; d < shape.size(); ++d) stride *= shape[d];
  shape[0] = count;
  Tensor out(shape);
  const long off = start * stride;
  std::copy(a->val.data.begin() + off, a->val.data.begin() + off + out.numel(),
            out.data.begin());
  return make_op(std::move(out), {a}, [=](Node& self) {
    if (!a->requires_grad) return;
    Tensor& ga = a->g();
    for (long i = 0; i < self.val.numel(); ++i) ga[off + i] += self.grad[i];
  });
}

}  // namespace flowdepth::ad
