#pragma once

// Minimal reverse-mode differentiation over Tensor2.
//
// A Graph is a tape: every op appends a node holding its forward value and a
// closure that pushes the node's adjoint into its parents. Nodes are appended
// in evaluation order, so walking the tape backwards is a reverse topological
// traversal. Graphs are built per forward pass and thrown away.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tbin/errors.hpp"
#include "tbin/tensor.hpp"

namespace tbin {

class Graph;

// Additive mask value standing in for -inf.
inline constexpr double kMaskSentinel = -1e30;

inline bool is_masked(double m) noexcept { return m <= kMaskSentinel * 0.5; }

// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor2& value() const;
  const Tensor2& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  // With record = false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor2 value) { return push(std::move(value), false, nullptr, {}); }

  // Differentiable leaf. After backward(), its gradient is added into
  // `grad_sink` when one is given.
  Var parameter(Tensor2 value, Tensor2* grad_sink = nullptr) {
    if (grad_sink != nullptr && !grad_sink->same_shape(value)) {
      throw DimensionError("parameter: grad sink " + grad_sink->shape() + " vs value " +
                           value.shape());
    }
    return push(std::move(value), record_, nullptr, grad_sink);
  }

  // Appends an op node. It requires a gradient iff recording and any parent does.
  Var make(Tensor2 value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    if (record_) {
      for (const Var& p : parents) needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr, nullptr);
  }
  Var make(Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward) {
    return make(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
  }

  const Tensor2& value(std::size_t id) const { return nodes_.at(id).value; }

  // Adjoint of a node; zeros if nothing flowed into it.
  const Tensor2& grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (!n.grad) {
      if (!n.zero_grad) n.zero_grad.emplace(n.value.rows(), n.value.cols());
      return *n.zero_grad;
    }
    return *n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Mutable adjoint buffer for use inside backward closures, allocated on demand.
  Tensor2& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value.rows(), n.value.cols());
    return *n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool recording() const noexcept { return record_; }

  // Reverse-mode sweep from a 1x1 node. Callable once per graph.
  void backward(Var loss) {
    const Tensor2& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward: loss must be 1x1, got " + lv.shape());
    }
    if (!record_) throw InvariantError("backward: graph was built without recording");
    if (backward_done_) throw InvariantError("backward: already executed on this graph");
    backward_done_ = true;
    grad_buffer(loss.id)(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.grad_sink != nullptr) *n.grad_sink += *n.grad;
    }
  }

 private:
  struct Node {
    Tensor2 value;
    std::optional<Tensor2> grad;
    mutable std::optional<Tensor2> zero_grad;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor2* grad_sink = nullptr;
  };

  Var push(Tensor2 value, bool requires_grad, BackwardFn fn, Tensor2* sink) {
    nodes_.push_back(Node{std::move(value), std::nullopt, std::nullopt, requires_grad,
                          std::move(fn), sink});
    return Var{this, nodes_.size() - 1};
  }

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

inline const Tensor2& Var::value() const { return graph->value(id); }
inline const Tensor2& Var::grad() const { return graph->grad(id); }

namespace detail {

inline void require_same_graph(Var a, Var b, const char* op) {
  if (a.graph != b.graph) throw InvariantError(std::string(op) + ": operands on different graphs");
}

inline void require_shape(bool ok, const char* op, const Tensor2& a, const Tensor2& b) {
  if (!ok) throw DimensionError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

// out += a * b
inline void gemm_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = b.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// out += a * b^T
inline void gemm_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  // b^T once so the inner loop streams contiguous rows and vectorizes.
  std::vector<double> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b(j, p);
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* br = bt.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

// out += a^T * b
inline void gemm_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* br = b.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* o = out.row(p).data();
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b, "matmul");
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  detail::require_shape(av.cols() == bv.rows(), "matmul", av, bv);
  Tensor2 out(av.rows(), bv.cols());
  detail::gemm_acc(av, bv, out);
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    if (g.requires_grad(a.id)) detail::gemm_nt_acc(go, g.value(b.id), g.grad_buffer(a.id));
    if (g.requires_grad(b.id)) detail::gemm_tn_acc(g.value(a.id), go, g.grad_buffer(b.id));
  });
}

inline Var transpose(Var x) {
  const Tensor2& xv = x.value();
  Tensor2 out(xv.cols(), xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(j, i) = xv(i, j);
  return x.graph->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += go(j, i);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_graph(a, b, "add");
  detail::require_shape(a.value().same_shape(b.value()), "add", a.value(), b.value());
  Tensor2 out = a.value();
  out += b.value();
  return a.graph->make(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    if (g.requires_grad(a.id)) g.grad_buffer(a.id) += go;
    if (g.requires_grad(b.id)) g.grad_buffer(b.id) += go;
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }

inline Var scale(Var x, double s) {
  Tensor2 out = x.value();
  for (double& v : out.data()) v *= s;
  return x.graph->make(std::move(out), {x}, [x, s](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * go[i];
  });
}

// x (n x m) plus a 1 x m bias row broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  detail::require_same_graph(x, bias, "add_bias");
  const Tensor2& xv = x.value();
  const Tensor2& bv = bias.value();
  detail::require_shape(bv.rows() == 1 && bv.cols() == xv.cols(), "add_bias", xv, bv);
  Tensor2 out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  return x.graph->make(std::move(out), {x, bias}, [x, bias](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    if (g.requires_grad(x.id)) g.grad_buffer(x.id) += go;
    if (g.requires_grad(bias.id)) {
      Tensor2& gb = g.grad_buffer(bias.id);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) gb(0, j) += go(i, j);
    }
  });
}

// x w + b, with w (in x out) and b (1 x out).
inline Var linear(Var x, Var w, Var b) {
  const Tensor2& xv = x.value();
  const Tensor2& wv = w.value();
  detail::require_shape(xv.cols() == wv.rows(), "linear", xv, wv);
  return add_bias(matmul(x, w), b);
}

inline Var relu(Var x) {
  Tensor2 out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.graph->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    const Tensor2& xv = g.value(x.id);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (xv[i] > 0.0) gx[i] += go[i];
  });
}

inline double sigmoid_scalar(double v) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return std::clamp(s, lo, hi);
}

inline Var sigmoid(Var x) {
  Tensor2 out = x.value();
  for (double& v : out.data()) v = sigmoid_scalar(v);
  return x.graph->make(std::move(out), {x}, [x](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    const Tensor2& y = g.value(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var concat_cols(Var a, Var b) {
  detail::require_same_graph(a, b, "concat_cols");
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  detail::require_shape(av.rows() == bv.rows(), "concat_cols", av, bv);
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor2 out(av.rows(), ca + cb);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    std::copy_n(av.row(i).begin(), ca, out.row(i).begin());
    std::copy_n(bv.row(i).begin(), cb, out.row(i).begin() + ca);
  }
  return a.graph->make(std::move(out), {a, b}, [a, b, ca, cb](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    if (g.requires_grad(a.id)) {
      Tensor2& ga = g.grad_buffer(a.id);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < ca; ++j) ga(i, j) += go(i, j);
    }
    if (g.requires_grad(b.id)) {
      Tensor2& gb = g.grad_buffer(b.id);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < cb; ++j) gb(i, j) += go(i, ca + j);
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require_same_graph(parts.front(), p, "concat_rows");
    detail::require_shape(p.cols() == cols, "concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Tensor2 out(rows, cols);
  std::size_t r = 0;
  for (const Var& p : parts) {
    const Tensor2& pv = p.value();
    std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + r * cols);
    r += pv.rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts.front().graph->make(std::move(out), parts, [ps](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t n = g.value(p.id).size();
      if (g.requires_grad(p.id)) {
        Tensor2& gp = g.grad_buffer(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
      }
      off += n;
    }
  });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor2& xv = x.value();
  if (begin + count > xv.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + xv.shape());
  }
  const std::size_t cols = xv.cols();
  Tensor2 out(count, cols);
  std::copy_n(xv.data().begin() + begin * cols, count * cols, out.data().begin());
  return x.graph->make(std::move(out), {x}, [x, begin, cols](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * cols + i] += go[i];
  });
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor2& xv = x.value();
  if (begin + count > xv.cols()) throw DimensionError("slice_cols: range out of " + xv.shape());
  Tensor2 out(xv.rows(), count);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, begin + j);
  return x.graph->make(std::move(out), {x}, [x, begin](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) gx(i, begin + j) += go(i, j);
  });
}

// Output row k is input row index[k]; adjoints scatter-add back.
inline Var gather_rows(Var x, std::span<const std::size_t> index) {
  Tensor2 out = gather_rows(x.value(), index);
  std::vector<std::size_t> idx(index.begin(), index.end());
  return x.graph->make(std::move(out), {x}, [x, idx = std::move(idx)](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto src = go.row(k);
      auto dst = gx.row(idx[k]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

// 1 x cols average of all rows.
inline Var mean_rows(Var x) {
  const Tensor2& xv = x.value();
  if (xv.rows() == 0) throw DimensionError("mean_rows: no rows");
  Tensor2 out(1, xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out(0, j) += xv(i, j);
  const double inv = 1.0 / static_cast<double>(xv.rows());
  for (double& v : out.data()) v *= inv;
  return x.graph->make(std::move(out), {x}, [x, inv](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    Tensor2& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < gx.cols(); ++j) gx(i, j) += go(0, j) * inv;
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph->make(Tensor2(1, 1, s), {x}, [x](Graph& g, std::size_t self) {
    const double go = g.grad(self)(0, 0);
    Tensor2& gx = g.grad_buffer(x.id);
    for (double& v : gx.data()) v += go;
  });
}

// Row-wise softmax of scores + mask. Entries with a sentinel mask come out
// exactly zero; every row must keep at least one unmasked entry.
inline Var masked_softmax_rows(Var scores, const Tensor2& mask) {
  const Tensor2& sv = scores.value();
  detail::require_shape(sv.same_shape(mask), "masked_softmax_rows", sv, mask);
  Tensor2 out(sv.rows(), sv.cols());
  for (std::size_t i = 0; i < sv.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < sv.cols(); ++j) {
      if (is_masked(mask(i, j))) continue;
      any = true;
      mx = std::max(mx, sv(i, j) + mask(i, j));
    }
    if (!any) {
      throw InvariantError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < sv.cols(); ++j) {
      if (is_masked(mask(i, j))) continue;
      const double e = std::exp(sv(i, j) + mask(i, j) - mx);
      out(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < sv.cols(); ++j) out(i, j) /= total;
  }
  return scores.graph->make(std::move(out), {scores}, [scores](Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    const Tensor2& p = g.value(self);
    Tensor2& gs = g.grad_buffer(scores.id);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += go(i, j) * p(i, j);
      for (std::size_t j = 0; j < p.cols(); ++j) gs(i, j) += p(i, j) * (go(i, j) - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row standardization (population variance, eps inside the root), then
// gain * xhat + bias with 1 x cols gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps) {
  const Tensor2& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  if (m == 0) throw DimensionError("layer_norm: zero columns");
  const Tensor2& gv = gain.value();
  const Tensor2& bv = bias.value();
  detail::require_shape(gv.rows() == 1 && gv.cols() == m, "layer_norm gain", xv, gv);
  detail::require_shape(bv.rows() == 1 && bv.cols() == m, "layer_norm bias", xv, bv);

  Tensor2 xhat(n, m);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += xv(i, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(m);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
  }
  Tensor2 out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);

  auto fn = [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                Graph& g, std::size_t self) {
    const Tensor2& go = g.grad(self);
    const Tensor2& gv = g.value(gain.id);
    const std::size_t n = go.rows(), m = go.cols();
    if (g.requires_grad(gain.id) || g.requires_grad(bias.id)) {
      Tensor2& gg = g.grad_buffer(gain.id);
      Tensor2& gb = g.grad_buffer(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          gg(0, j) += go(i, j) * xhat(i, j);
          gb(0, j) += go(i, j);
        }
    }
    if (!g.requires_grad(x.id)) return;
    Tensor2& gx = g.grad_buffer(x.id);
    std::vector<double> dxhat(m);
    for (std::size_t i = 0; i < n; ++i) {
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        dxhat[j] = go(i, j) * gv(0, j);
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xhat(i, j);
      }
      mean_d /= static_cast<double>(m);
      mean_dx /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j)
        gx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
    }
  };
  return x.graph->make(std::move(out), {x, gain, bias}, std::move(fn));
}

// Result of comparing reverse-mode gradients to central differences.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_param_max_rel_error;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

inline double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Checks d f / d params by central differences with step h. `f` receives a
// fresh graph and one parameter Var per tensor and returns a 1x1 Var. The
// tensors in `params` are perturbed in place and restored.
template <class F>
GradCheckReport grad_check(F&& f, std::span<Tensor2* const> params, double h, double tol) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw ConfigError("grad_check: h must lie in [1e-6, 1e-3]");

  std::vector<Tensor2> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (Tensor2* p : params) vars.push_back(g.parameter(*p));
    Var out = f(g, std::span<const Var>(vars));
    g.backward(out);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  auto eval = [&]() {
    Graph g(false);
    std::vector<Var> vars;
    for (Tensor2* p : params) vars.push_back(g.parameter(*p));
    return f(g, std::span<const Var>(vars)).value()(0, 0);
  };

  GradCheckReport report;
  report.per_param_max_rel_error.assign(params.size(), 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor2& p = *params[pi];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + h;
      const double up = eval();
      p[k] = saved - h;
      const double down = eval();
      p[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = grad_rel_error(analytic[pi][k], numeric);
      report.per_param_max_rel_error[pi] = std::max(report.per_param_max_rel_error[pi], err);
      if (err > report.max_rel_error || (pi == 0 && k == 0)) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_index = k;
        report.worst_analytic = analytic[pi][k];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace tbin
