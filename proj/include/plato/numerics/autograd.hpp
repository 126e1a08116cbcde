#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Var is a shared handle to a graph node. Leaves created with `parameter`
// accumulate gradients across calls to `backward` until `zero_grad`; every
// other node is transient and dies with the last handle to the loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "plato/errors.hpp"
#include "plato/numerics/tensor.hpp"

namespace plato {

template <typename Real>
struct Node {
  Tensor<Real> value;
  std::vector<Real> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Real* grad_data() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad.data();
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename Real>
using Var = std::shared_ptr<Node<Real>>;

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

// Boolean attention pattern for one sequence: allowed(i, j) is true iff
// position i may attend to position j.
struct AttentionMask {
  std::size_t length = 0;
  std::vector<std::uint8_t> allowed;

  explicit AttentionMask(std::size_t n = 0) : length(n), allowed(n * n, 0) {}
  bool operator()(std::size_t i, std::size_t j) const { return allowed[i * length + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v = true) { allowed[i * length + j] = v ? 1 : 0; }
};

// One sequence inside a packed batch of rows.
struct AttentionSegment {
  std::size_t offset = 0;
  std::shared_ptr<const AttentionMask> mask;
  std::size_t length() const { return mask->length; }
};

namespace ag {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using StridedMap = Eigen::Map<RowMat<Real>, 0, Eigen::OuterStride<>>;
template <typename Real>
using ConstStridedMap = Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>>;

template <typename Real>
ConstMatMap<Real> view(const Tensor<Real>& t) {
  return ConstMatMap<Real>(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

template <typename Real>
MatMap<Real> grad_view(Node<Real>& n) {
  return MatMap<Real>(n.grad_data(), Eigen::Index(n.value.rows()), Eigen::Index(n.value.cols()));
}

template <typename Real>
Var<Real> constant(Tensor<Real> value) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  return n;
}

template <typename Real>
Var<Real> parameter(Tensor<Real> value) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

template <typename Real>
Var<Real> scalar(Real v) {
  return constant(Tensor<Real>({1}, std::vector<Real>{v}));
}

// Creates a result node; parents and the backward closure are kept only when
// recording is enabled and some parent needs a gradient.
template <typename Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> parents,
                      std::function<void(Node<Real>&)> backward_fn) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

// Runs reverse accumulation from a scalar `loss` (seed gradient 1).
template <typename Real>
void backward(const Var<Real>& loss) {
  require(loss->value.size() == 1, "backward expects a scalar loss");
  if (!loss->requires_grad) return;
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack{{loss.get(), 0}};
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->grad_data()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

template <typename Real>
void zero_grad(const std::vector<Var<Real>>& params) {
  for (const auto& p : params) p->grad.clear();
}

// ---------------------------------------------------------------- linear algebra

// A[n,k] * B[k,m]
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  require(A.cols() == B.rows(), "matmul: inner dimensions differ " + shape_string(A.shape) +
                                    " x " + shape_string(B.shape));
  Tensor<Real> out({A.rows(), B.cols()});
  MatMap<Real>(out.data.data(), Eigen::Index(out.rows()), Eigen::Index(out.cols())).noalias() =
      view(A) * view(B);
  return make_result<Real>(std::move(out), {a, b}, [a, b](Node<Real>& self) {
    auto g = ConstMatMap<Real>(self.grad.data(), Eigen::Index(self.value.rows()),
                               Eigen::Index(self.value.cols()));
    if (a->requires_grad) grad_view(*a).noalias() += g * view(b->value).transpose();
    if (b->requires_grad) grad_view(*b).noalias() += view(a->value).transpose() * g;
  });
}

// A[n,k] * B[m,k]^T; the layout of weights stored as [out, in].
template <typename Real>
Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ " + shape_string(A.shape) +
                                    " x " + shape_string(B.shape) + "^T");
  Tensor<Real> out({A.rows(), B.rows()});
  MatMap<Real>(out.data.data(), Eigen::Index(out.rows()), Eigen::Index(out.cols())).noalias() =
      view(A) * view(B).transpose();
  return make_result<Real>(std::move(out), {a, b}, [a, b](Node<Real>& self) {
    auto g = ConstMatMap<Real>(self.grad.data(), Eigen::Index(self.value.rows()),
                               Eigen::Index(self.value.cols()));
    if (a->requires_grad) grad_view(*a).noalias() += g * view(b->value);
    if (b->requires_grad) grad_view(*b).noalias() += g.transpose() * view(a->value);
  });
}

// ---------------------------------------------------------------- elementwise

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require(a->value.size() == b->value.size(), "add: size mismatch " +
                                                  shape_string(a->value.shape) + " vs " +
                                                  shape_string(b->value.shape));
  Tensor<Real> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return make_result<Real>(std::move(out), {a, b}, [a, b](Node<Real>& self) {
    for (const auto& p : {a, b}) {
      if (!p->requires_grad) continue;
      Real* g = p->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// Adds the row vector `bias` (length m) to every row of a[n, m].
template <typename Real>
Var<Real> add_row(const Var<Real>& a, const Var<Real>& bias) {
  const std::size_t m = a->value.cols();
  require(bias->value.size() == m, "add_row: bias length does not match columns");
  Tensor<Real> out = a->value;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < m; ++c) out.data[r * m + c] += bias->value.data[c];
  return make_result<Real>(std::move(out), {a, bias}, [a, bias, m](Node<Real>& self) {
    if (a->requires_grad) {
      Real* g = a->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bias->requires_grad) {
      Real* g = bias->grad_data();
      const Real* src = self.grad.data();
      for (std::size_t r = 0; r < self.grad.size(); r += m, src += m)
        for (std::size_t c = 0; c < m; ++c) g[c] += src[c];
    }
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> out = a->value;
  for (auto& v : out.data) v *= s;
  return make_result<Real>(std::move(out), {a}, [a, s](Node<Real>& self) {
    Real* g = a->grad_data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
  });
}

// Generic pointwise map with derivative given as a function of (x, y).
template <typename Real, typename F, typename DF>
Var<Real> pointwise(const Var<Real>& a, F f, DF df) {
  Tensor<Real> out = a->value;
  for (auto& v : out.data) v = f(v);
  return make_result<Real>(std::move(out), {a}, [a, df](Node<Real>& self) {
    Real* g = a->grad_data();
    const auto& x = a->value.data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
  });
}

// tanh-approximated GELU
template <typename Real>
Var<Real> gelu(const Var<Real>& a) {
  constexpr Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real k = Real(0.044715);
  return pointwise(
      a,
      [](Real x) { return Real(0.5) * x * (Real(1) + std::tanh(c * (x + k * x * x * x))); },
      [](Real x, Real) {
        const Real u = c * (x + k * x * x * x);
        const Real t = std::tanh(u);
        const Real du = c * (Real(1) + Real(3) * k * x * x);
        return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
      });
}

template <typename Real>
Real softplus_value(Real x) {
  return x > Real(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Real>
Real sigmoid_value(Real x) {
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

// log(1 + e^x)
template <typename Real>
Var<Real> softplus(const Var<Real>& a) {
  return pointwise(
      a, [](Real x) { return softplus_value(x); }, [](Real x, Real) { return sigmoid_value(x); });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& a) {
  return pointwise(
      a, [](Real x) { return sigmoid_value(x); }, [](Real, Real y) { return y * (Real(1) - y); });
}

// ---------------------------------------------------------------- reductions

template <typename Real>
Var<Real> sum(const Var<Real>& a) {
  Real total = 0;
  for (Real v : a->value.data) total += v;
  return make_result<Real>(Tensor<Real>({1}, std::vector<Real>{total}), {a},
                           [a](Node<Real>& self) {
                             Real* g = a->grad_data();
                             for (std::size_t i = 0; i < a->value.size(); ++i) g[i] += self.grad[0];
                           });
}

template <typename Real>
Var<Real> mean(const Var<Real>& a) {
  return scale(sum(a), Real(1) / Real(a->value.size()));
}

// ---------------------------------------------------------------- row plumbing

// Gathers rows of table[V, D]; a negative id yields an all-zero row.
template <typename Real>
Var<Real> embedding(const Var<Real>& table, const std::vector<int>& ids) {
  const std::size_t d = table->value.cols();
  const std::size_t v = table->value.rows();
  Tensor<Real> out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0) continue;
    require(std::size_t(ids[r]) < v, "embedding: id out of range");
    std::copy_n(table->value.data.begin() + std::ptrdiff_t(std::size_t(ids[r]) * d), d,
                out.data.begin() + std::ptrdiff_t(r * d));
  }
  return make_result<Real>(std::move(out), {table}, [table, ids, d](Node<Real>& self) {
    Real* g = table->grad_data();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0) continue;
      for (std::size_t c = 0; c < d; ++c) g[std::size_t(ids[r]) * d + c] += self.grad[r * d + c];
    }
  });
}

template <typename Real>
Var<Real> select_rows(const Var<Real>& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x->value.cols();
  Tensor<Real> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < x->value.rows(), "select_rows: row out of range");
    std::copy_n(x->value.data.begin() + std::ptrdiff_t(rows[r] * d), d,
                out.data.begin() + std::ptrdiff_t(r * d));
  }
  return make_result<Real>(std::move(out), {x}, [x, rows, d](Node<Real>& self) {
    Real* g = x->grad_data();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) g[rows[r] * d + c] += self.grad[r * d + c];
  });
}

// Builds an [n_rows, width] matrix that is zero except at the listed rows,
// which are taken from 1 x width pieces.
template <typename Real>
Var<Real> place_rows(std::size_t n_rows, std::size_t width,
                     const std::vector<std::pair<std::size_t, Var<Real>>>& pieces) {
  Tensor<Real> out({n_rows, width});
  std::vector<Var<Real>> parents;
  std::vector<std::size_t> where;
  for (const auto& [row, piece] : pieces) {
    require(row < n_rows && piece->value.size() == width, "place_rows: bad piece");
    std::copy(piece->value.data.begin(), piece->value.data.end(),
              out.data.begin() + std::ptrdiff_t(row * width));
    parents.push_back(piece);
    where.push_back(row);
  }
  return make_result<Real>(std::move(out), parents, [parents, where, width](Node<Real>& self) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (!parents[i]->requires_grad) continue;
      Real* g = parents[i]->grad_data();
      for (std::size_t c = 0; c < width; ++c) g[c] += self.grad[where[i] * width + c];
    }
  });
}

// Side-by-side concatenation of matrices with equal row counts.
template <typename Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t n = parts.front()->value.rows();
  std::size_t width = 0;
  std::vector<std::size_t> starts;
  for (const auto& p : parts) {
    require(p->value.rows() == n, "concat_cols: row counts differ");
    starts.push_back(width);
    width += p->value.cols();
  }
  Tensor<Real> out({n, width});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::size_t w = parts[i]->value.cols();
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(parts[i]->value.data.begin() + std::ptrdiff_t(r * w), w,
                  out.data.begin() + std::ptrdiff_t(r * width + starts[i]));
  }
  return make_result<Real>(std::move(out), parts, [parts, starts, n, width](Node<Real>& self) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!parts[i]->requires_grad) continue;
      const std::size_t w = parts[i]->value.cols();
      Real* g = parts[i]->grad_data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * width + starts[i] + c];
    }
  });
}

// ---------------------------------------------------------------- normalization

template <typename Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gain, const Var<Real>& bias,
                     Real eps = Real(1e-5)) {
  const std::size_t n = x->value.rows();
  const std::size_t d = x->value.cols();
  require(gain->value.size() == d && bias->value.size() == d, "layer_norm: parameter width");
  Tensor<Real> out({n, d});
  auto xhat = std::make_shared<std::vector<Real>>(n * d);
  auto rstd = std::make_shared<std::vector<Real>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = x->value.data.data() + r * d;
    Real mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= Real(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= Real(d);
    const Real rs = Real(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const Real h = (row[c] - mu) * rs;
      (*xhat)[r * d + c] = h;
      out.data[r * d + c] = h * gain->value.data[c] + bias->value.data[c];
    }
  }
  return make_result<Real>(
      std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd, n, d](Node<Real>& self) {
        const Real* gy = self.grad.data();
        if (gain->requires_grad || bias->requires_grad) {
          Real* gg = gain->grad_data();
          Real* gb = bias->grad_data();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              gg[c] += gy[r * d + c] * (*xhat)[r * d + c];
              gb[c] += gy[r * d + c];
            }
        }
        if (!x->requires_grad) return;
        Real* gx = x->grad_data();
        std::vector<Real> gh(d);
        for (std::size_t r = 0; r < n; ++r) {
          Real mean_gh = 0, mean_ghh = 0;
          for (std::size_t c = 0; c < d; ++c) {
            gh[c] = gy[r * d + c] * gain->value.data[c];
            mean_gh += gh[c];
            mean_ghh += gh[c] * (*xhat)[r * d + c];
          }
          mean_gh /= Real(d);
          mean_ghh /= Real(d);
          for (std::size_t c = 0; c < d; ++c)
            gx[r * d + c] += (*rstd)[r] * (gh[c] - mean_gh - (*xhat)[r * d + c] * mean_ghh);
        }
      });
}

// ---------------------------------------------------------------- softmax family

template <typename Real>
Var<Real> log_softmax_rows(const Var<Real>& x) {
  const std::size_t n = x->value.rows();
  const std::size_t m = x->value.cols();
  Tensor<Real> out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = x->value.data.data() + r * m;
    const Real mx = *std::max_element(row, row + m);
    Real s = 0;
    for (std::size_t c = 0; c < m; ++c) s += std::exp(row[c] - mx);
    const Real lse = mx + std::log(s);
    for (std::size_t c = 0; c < m; ++c) out.data[r * m + c] = row[c] - lse;
  }
  out.shape = x->value.shape;
  return make_result<Real>(std::move(out), {x}, [x, n, m](Node<Real>& self) {
    Real* g = x->grad_data();
    for (std::size_t r = 0; r < n; ++r) {
      Real gs = 0;
      for (std::size_t c = 0; c < m; ++c) gs += self.grad[r * m + c];
      for (std::size_t c = 0; c < m; ++c)
        g[r * m + c] += self.grad[r * m + c] - std::exp(self.value.data[r * m + c]) * gs;
    }
  });
}

template <typename Real>
Var<Real> softmax_rows(const Var<Real>& x) {
  const std::size_t n = x->value.rows();
  const std::size_t m = x->value.cols();
  Tensor<Real> out({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = x->value.data.data() + r * m;
    const Real mx = *std::max_element(row, row + m);
    Real s = 0;
    for (std::size_t c = 0; c < m; ++c) s += (out.data[r * m + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) out.data[r * m + c] /= s;
  }
  out.shape = x->value.shape;
  return make_result<Real>(std::move(out), {x}, [x, n, m](Node<Real>& self) {
    Real* g = x->grad_data();
    for (std::size_t r = 0; r < n; ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < m; ++c) dot += self.grad[r * m + c] * self.value.data[r * m + c];
      for (std::size_t c = 0; c < m; ++c)
        g[r * m + c] += self.value.data[r * m + c] * (self.grad[r * m + c] - dot);
    }
  });
}

// Mean over rows of -log softmax(logits[r])[targets[r]].
template <typename Real>
Var<Real> cross_entropy(const Var<Real>& logits, const std::vector<int>& targets) {
  const std::size_t n = logits->value.rows();
  const std::size_t m = logits->value.cols();
  require(n == targets.size() && n > 0, "cross_entropy: one target per row required");
  auto probs = std::make_shared<std::vector<Real>>(n * m);
  Real total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] >= 0 && std::size_t(targets[r]) < m, "cross_entropy: target out of range");
    const Real* row = logits->value.data.data() + r * m;
    const Real mx = *std::max_element(row, row + m);
    Real s = 0;
    for (std::size_t c = 0; c < m; ++c) s += ((*probs)[r * m + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < m; ++c) (*probs)[r * m + c] /= s;
    total += mx + std::log(s) - row[targets[r]];
  }
  const Real inv_n = Real(1) / Real(n);
  return make_result<Real>(Tensor<Real>({1}, std::vector<Real>{total * inv_n}), {logits},
                           [logits, targets, probs, n, m, inv_n](Node<Real>& self) {
                             Real* g = logits->grad_data();
                             const Real up = self.grad[0] * inv_n;
                             for (std::size_t r = 0; r < n; ++r) {
                               for (std::size_t c = 0; c < m; ++c)
                                 g[r * m + c] += up * (*probs)[r * m + c];
                               g[r * m + std::size_t(targets[r])] -= up;
                             }
                           });
}

// (1/T) * sum_v counts[v] * -log softmax(logits)[v] for a single row of
// logits. Summation runs over vocabulary index, so the value depends only on
// the multiset of targets and not on their order.
template <typename Real>
Var<Real> bag_cross_entropy(const Var<Real>& logits, const std::vector<std::uint32_t>& counts) {
  const std::size_t m = logits->value.size();
  require(counts.size() == m, "bag_cross_entropy: counts must cover the vocabulary");
  std::uint64_t total_count = 0;
  for (auto c : counts) total_count += c;
  require(total_count > 0, "bag_cross_entropy: empty bag");
  const Real* row = logits->value.data.data();
  const Real mx = *std::max_element(row, row + m);
  Real s = 0;
  for (std::size_t c = 0; c < m; ++c) s += std::exp(row[c] - mx);
  const Real lse = mx + std::log(s);
  Real total = 0;
  for (std::size_t c = 0; c < m; ++c)
    if (counts[c]) total += Real(counts[c]) * (lse - row[c]);
  const Real inv_t = Real(1) / Real(total_count);
  return make_result<Real>(Tensor<Real>({1}, std::vector<Real>{total * inv_t}), {logits},
                           [logits, counts, lse, inv_t, m](Node<Real>& self) {
                             Real* g = logits->grad_data();
                             const Real up = self.grad[0] * inv_t;
                             Real bag = 0;
                             for (auto c : counts) bag += Real(c);
                             for (std::size_t c = 0; c < m; ++c) {
                               const Real p = std::exp(logits->value.data[c] - lse);
                               g[c] += up * (bag * p - Real(counts[c]));
                             }
                           });
}

// ---------------------------------------------------------------- attention

// Multi-head scaled dot-product attention over a packed batch.
// `qkv` is [N, 3D] holding queries, keys and values side by side; each segment
// attends only within its own rows and according to its mask. Output is [N, D].
template <typename Real>
Var<Real> attention(const Var<Real>& qkv, std::size_t heads,
                    const std::vector<AttentionSegment>& segments) {
  const std::size_t n = qkv->value.rows();
  const std::size_t d = qkv->value.cols() / 3;
  require(d * 3 == qkv->value.cols() && heads > 0 && d % heads == 0, "attention: bad widths");
  const std::size_t dh = d / heads;
  const Real inv_sqrt = Real(1) / std::sqrt(Real(dh));
  const Eigen::Index stride = Eigen::Index(3 * d);

  auto probs = std::make_shared<std::vector<RowMat<Real>>>();
  probs->reserve(segments.size() * heads);
  Tensor<Real> out({n, d});
  const Real* base = qkv->value.data.data();
  for (const auto& seg : segments) {
    const std::size_t len = seg.length();
    require(seg.offset + len <= n, "attention: segment exceeds batch");
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap<Real> q(base + seg.offset * 3 * d + h * dh, Eigen::Index(len),
                              Eigen::Index(dh), Eigen::OuterStride<>(stride));
      ConstStridedMap<Real> k(base + seg.offset * 3 * d + d + h * dh, Eigen::Index(len),
                              Eigen::Index(dh), Eigen::OuterStride<>(stride));
      ConstStridedMap<Real> v(base + seg.offset * 3 * d + 2 * d + h * dh, Eigen::Index(len),
                              Eigen::Index(dh), Eigen::OuterStride<>(stride));
      RowMat<Real> p = (q * k.transpose()) * inv_sqrt;
      for (std::size_t i = 0; i < len; ++i) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < len; ++j)
          if ((*seg.mask)(i, j)) mx = std::max(mx, p(Eigen::Index(i), Eigen::Index(j)));
        Real s = 0;
        for (std::size_t j = 0; j < len; ++j) {
          Real& e = p(Eigen::Index(i), Eigen::Index(j));
          e = (*seg.mask)(i, j) ? std::exp(e - mx) : Real(0);
          s += e;
        }
        p.row(Eigen::Index(i)) /= s;
      }
      StridedMap<Real> o(out.data.data() + seg.offset * d + h * dh, Eigen::Index(len),
                         Eigen::Index(dh), Eigen::OuterStride<>(Eigen::Index(d)));
      o.noalias() = p * v;
      probs->push_back(std::move(p));
    }
  }
  return make_result<Real>(
      std::move(out), {qkv}, [qkv, heads, segments, probs, d, dh, inv_sqrt](Node<Real>& self) {
        const Eigen::Index stride = Eigen::Index(3 * d);
        const Real* base = qkv->value.data.data();
        Real* gbase = qkv->grad_data();
        std::size_t idx = 0;
        for (const auto& seg : segments) {
          const auto len = Eigen::Index(seg.length());
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const RowMat<Real>& p = (*probs)[idx];
            const std::size_t at = seg.offset * 3 * d + h * dh;
            ConstStridedMap<Real> q(base + at, len, Eigen::Index(dh), Eigen::OuterStride<>(stride));
            ConstStridedMap<Real> k(base + at + d, len, Eigen::Index(dh),
                                    Eigen::OuterStride<>(stride));
            ConstStridedMap<Real> v(base + at + 2 * d, len, Eigen::Index(dh),
                                    Eigen::OuterStride<>(stride));
            StridedMap<Real> gq(gbase + at, len, Eigen::Index(dh), Eigen::OuterStride<>(stride));
            StridedMap<Real> gk(gbase + at + d, len, Eigen::Index(dh),
                                Eigen::OuterStride<>(stride));
            StridedMap<Real> gv(gbase + at + 2 * d, len, Eigen::Index(dh),
                                Eigen::OuterStride<>(stride));
            Eigen::Map<const RowMat<Real>, 0, Eigen::OuterStride<>> go(
                self.grad.data() + seg.offset * d + h * dh, len, Eigen::Index(dh),
                Eigen::OuterStride<>(Eigen::Index(d)));
            gv.noalias() += p.transpose() * go;
            RowMat<Real> dp = go * v.transpose();
            RowMat<Real> ds = p.cwiseProduct(dp);
            const auto row_dot = ds.rowwise().sum().eval();
            ds.noalias() -= (p.array().colwise() * row_dot.array()).matrix();
            ds *= inv_sqrt;
            gq.noalias() += ds * k;
            gk.noalias() += ds.transpose() * q;
          }
        }
      });
}

}  // namespace ag
}  // namespace plato
