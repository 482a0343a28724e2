#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "deco/tensor.hpp"

namespace deco {

template <typename T>
class Graph;

/// Handle to a node recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const basic_tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (M x N) = op(A) * op(B), optionally accumulating into C. All row-major.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a, bool trans_b,
          bool accumulate) {
  using Map = Eigen::Map<const RowMat<T>>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::Map<RowMat<T>> cm(c, mi, ni);
  Map am(a, trans_a ? ki : mi, trans_a ? mi : ki);
  Map bm(b, trans_b ? ni : ki, trans_b ? ki : ni);
  if (!accumulate) cm.setZero();
  if (trans_a && trans_b) {
    cm.noalias() += am.transpose() * bm.transpose();
  } else if (trans_a) {
    cm.noalias() += am.transpose() * bm;
  } else if (trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am * bm;
  }
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
    const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
    const std::size_t da = ia >= 0 ? a[ia] : 1;
    const std::size_t db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw shape_error(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
    if (da == 0 || db == 0) p.out[i] = 0;
    p.stride_a[i] = (ia >= 0 && da != 1) ? sa[ia] : 0;
    p.stride_b[i] = (ib >= 0 && db != 1) ? sb[ib] : 0;
  }
  return p;
}

/// Calls f(out_index, a_offset, b_offset) for every output element in row-major order.
template <typename F>
void broadcast_for_each(const BroadcastPlan& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (total == 0) return;
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  const std::size_t inner = p.out[r - 1];
  const std::size_t ia_step = p.stride_a[r - 1];
  const std::size_t ib_step = p.stride_b[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, oa + k * ia_step, ob + k * ib_step);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      oa += p.stride_a[ax];
      ob += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      oa -= p.stride_a[ax] * idx[ax];
      ob -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

/// Computation record for reverse-mode differentiation.
///
/// Every primitive evaluates eagerly and appends one node holding its value, the ids of its
/// operands, and a closure that pushes the node's gradient back onto those operands. Nodes are
/// appended in evaluation order, so reverse id order is a valid reverse topological order.
/// Gradient buffers are only materialized for nodes that depend on a variable.
template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    basic_tensor<T> value;
    basic_tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Var<T> constant(basic_tensor<T> value) { return push("constant", std::move(value), {}, false, {}); }

  Var<T> variable(basic_tensor<T> value) { return push("variable", std::move(value), {}, true, {}); }

  /// Appends the result of a primitive. The backward closure runs only if some operand requires grad.
  Var<T> record(std::string op, basic_tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    bool req = false;
    for (const auto& v : inputs) {
      if (v.graph != this) throw std::invalid_argument(op + ": operand belongs to a different graph");
      ids.push_back(v.id);
      req = req || nodes_[v.id].requires_grad;
    }
    return push(std::move(op), std::move(value), std::move(ids), req, req ? std::move(backward) : Backward{});
  }

  const basic_tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  std::vector<std::string> op_names() const {
    std::vector<std::string> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) out.push_back(n.op);
    return out;
  }

  /// Gradient buffer of a node, zero-initialized on first access.
  basic_tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = basic_tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const basic_tensor<T>& upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  basic_tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : basic_tensor<T>(n.value.shape());
  }

  /// Reverse sweep from a rank-0 output.
  void backward(Var<T> out) {
    if (out.graph != this) throw std::invalid_argument("backward: output belongs to a different graph");
    if (value(out).rank() != 0) {
      throw shape_error("backward: output must be a scalar of shape [], got " + shape_str(value(out).shape()));
    }
    grad_buffer(out.id)[0] = T(1);
    for (std::size_t id = out.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, id);
    }
  }

 private:
  Var<T> push(std::string op, basic_tensor<T> value, std::vector<std::size_t> inputs, bool req, Backward bw) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = req;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Var<T> binary(const char* op, Var<T> a, Var<T> b, Fwd fwd, Bwd bwd) {
  Graph<T>& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  auto plan = plan_broadcast(av.shape(), bv.shape(), op);
  basic_tensor<T> out(plan.out);
  {
    const T* pa = av.data().data();
    const T* pb = bv.data().data();
    T* po = out.data().data();
    broadcast_for_each(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { po[i] = fwd(pa[ia], pb[ib]); });
  }
  const std::size_t ida = a.id;
  const std::size_t idb = b.id;
  return g.record(op, std::move(out), {a, b}, [plan = std::move(plan), ida, idb, bwd](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    const T* pa = gr.node(ida).value.data().data();
    const T* pb = gr.node(idb).value.data().data();
    T* ga = gr.requires_grad(ida) ? gr.grad_buffer(ida).data().data() : nullptr;
    T* gb = gr.requires_grad(idb) ? gr.grad_buffer(idb).data().data() : nullptr;
    if (plan.same && ga && gb && ga != gb) {
      const std::size_t total = numel(plan.out);
      for (std::size_t i = 0; i < total; ++i) {
        T da = 0, db = 0;
        bwd(pa[i], pb[i], up[i], da, db);
        ga[i] += da;
        gb[i] += db;
      }
      return;
    }
    broadcast_for_each(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      T da = 0, db = 0;
      bwd(pa[ia], pb[ib], up[i], da, db);
      if (ga) ga[ia] += da;
      if (gb) gb[ib] += db;
    });
  });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const char* op, Var<T> a, Fwd fwd, Deriv deriv) {
  const auto& av = a.value();
  basic_tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ida = a.id;
  return a.graph->record(op, std::move(out), {a}, [ida, deriv](Graph<T>& gr, std::size_t self) {
    const auto& up = gr.upstream(self);
    const auto& x = gr.node(ida).value;
    auto& ga = gr.grad_buffer(ida);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += up[i] * deriv(x[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return sub(a, b);
}
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return mul(a, b);
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

template <typename T>
Var<T> silu(Var<T> a) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto& av = a.value();
  const auto n = static_cast<Eigen::Index>(av.size());
  basic_tensor<T> out(av.shape());
  Eigen::Map<const Arr> x(av.data().data(), n);
  Eigen::Map<Arr>(out.data().data(), n) = x / (T(1) + (-x).exp());
  const std::size_t ida = a.id;
  return a.graph->record("silu", std::move(out), {a}, [ida, n](Graph<T>& gr, std::size_t self) {
    Eigen::Map<const Arr> up(gr.upstream(self).data().data(), n);
    Eigen::Map<const Arr> xv(gr.node(ida).value.data().data(), n);
    Eigen::Map<Arr> ga(gr.grad_buffer(ida).data().data(), n);
    const Arr sg = T(1) / (T(1) + (-xv).exp());
    ga += up * sg * (T(1) + xv * (T(1) - sg));
  });
}

// ---------------------------------------------------------------------------
// Contractions

/// a [..., M, K] x b [K, N] -> [..., M, N], or batched a [B..., M, K] x b [B..., K, N].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto fail = [&] { throw shape_error("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs)); };
  if (as.size() < 2 || bs.size() < 2) fail();
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  if (bs[bs.size() - 2] != k) fail();
  const std::size_t n = bs.back();
  std::size_t batch = 1;
  bool shared_rhs = bs.size() == 2;
  if (shared_rhs) {
    batch = numel(as) / (m * k == 0 ? 1 : m * k);
  } else {
    if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) fail();
    batch = numel(Shape(as.begin(), as.end() - 2));
  }
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  basic_tensor<T> out(out_shape);
  const T* pa = a.value().data().data();
  const T* pb = b.value().data().data();
  T* po = out.data().data();
  if (shared_rhs) {
    detail::gemm(pa, pb, po, batch * m, k, n, false, false, false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) detail::gemm(pa + i * m * k, pb + i * k * n, po + i * m * n, m, k, n, false, false, false);
  }
  const std::size_t ida = a.id, idb = b.id;
  return a.graph->record("matmul", std::move(out), {a, b}, [=](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    const T* va = gr.node(ida).value.data().data();
    const T* vb = gr.node(idb).value.data().data();
    if (gr.requires_grad(ida)) {
      T* ga = gr.grad_buffer(ida).data().data();
      if (shared_rhs) {
        detail::gemm(up, vb, ga, batch * m, n, k, false, true, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) detail::gemm(up + i * m * n, vb + i * k * n, ga + i * m * k, m, n, k, false, true, true);
      }
    }
    if (gr.requires_grad(idb)) {
      T* gb = gr.grad_buffer(idb).data().data();
      if (shared_rhs) {
        detail::gemm(va, up, gb, k, batch * m, n, true, false, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) detail::gemm(va + i * m * k, up + i * m * n, gb + i * k * n, k, m, n, true, false, true);
      }
    }
  });
}

/// x [..., in] * weight [in, out] + bias [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const auto& bs = bias.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0] || bs.size() != 1 || bs[0] != ws[1]) {
    throw shape_error("linear: incompatible shapes x" + shape_str(xs) + " weight" + shape_str(ws) + " bias" + shape_str(bs));
  }
  const std::size_t in = ws[0], outd = ws[1];
  const std::size_t rows = in ? numel(xs) / in : 0;
  Shape out_shape = xs;
  out_shape.back() = outd;
  basic_tensor<T> out(out_shape);
  T* po = out.data().data();
  const T* pb = bias.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) std::copy(pb, pb + outd, po + r * outd);
  detail::gemm(x.value().data().data(), weight.value().data().data(), po, rows, in, outd, false, false, true);
  const std::size_t idx = x.id, idw = weight.id, idb = bias.id;
  return x.graph->record("linear", std::move(out), {x, weight, bias}, [=](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    if (gr.requires_grad(idx)) {
      detail::gemm(up, gr.node(idw).value.data().data(), gr.grad_buffer(idx).data().data(), rows, outd, in, false, true, true);
    }
    if (gr.requires_grad(idw)) {
      detail::gemm(gr.node(idx).value.data().data(), up, gr.grad_buffer(idw).data().data(), in, rows, outd, true, false, true);
    }
    if (gr.requires_grad(idb)) {
      T* gb = gr.grad_buffer(idb).data().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outd; ++j) gb[j] += up[r * outd + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and attention

/// Parameter-free RMS normalization over the last axis: x / sqrt(mean(x^2) + eps).
template <typename T>
Var<T> rms_norm(Var<T> x, T eps = T(1e-6)) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw shape_error("rms_norm: needs rank >= 1, got " + shape_str(xv.shape()));
  const std::size_t n = xv.shape().back();
  const std::size_t rows = n ? xv.size() / n : 0;
  basic_tensor<T> out(xv.shape());
  aligned_vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* px = xv.data().data() + r * n;
    T ms = 0;
    for (std::size_t j = 0; j < n; ++j) ms += px[j] * px[j];
    ms /= T(n);
    inv[r] = T(1) / std::sqrt(ms + eps);
    T* po = out.data().data() + r * n;
    for (std::size_t j = 0; j < n; ++j) po[j] = px[j] * inv[r];
  }
  const std::size_t idx = x.id;
  return x.graph->record("rms_norm", std::move(out), {x}, [idx, n, rows, inv = std::move(inv)](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    const T* y = gr.node(self).value.data().data();
    T* gx = gr.grad_buffer(idx).data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += up[r * n + j] * y[r * n + j];
      dot /= T(n);
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += (up[r * n + j] - y[r * n + j] * dot) * inv[r];
    }
  });
}

/// Scaled dot-product attention over full token sets. q [..., N, dh], k and v [..., M, dh].
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v) {
  const auto& qs = q.shape();
  const auto& ks = k.shape();
  const auto& vs = v.shape();
  if (qs.size() < 2 || ks.size() != qs.size() || vs != ks || qs.back() != ks.back() ||
      !std::equal(qs.begin(), qs.end() - 2, ks.begin())) {
    throw shape_error("attention: incompatible shapes q" + shape_str(qs) + " k" + shape_str(ks) + " v" + shape_str(vs));
  }
  const std::size_t n = qs[qs.size() - 2], m = ks[ks.size() - 2], dh = qs.back();
  const std::size_t batch = numel(Shape(qs.begin(), qs.end() - 2));
  const T sc = T(1) / std::sqrt(T(dh));
  aligned_vector<T> probs(batch * n * m);
  basic_tensor<T> out(qs);
  const T* pq = q.value().data().data();
  const T* pk = k.value().data().data();
  const T* pv = v.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    T* p = probs.data() + b * n * m;
    detail::gemm(pq + b * n * dh, pk + b * m * dh, p, n, dh, m, false, true, false);
    for (std::size_t i = 0; i < n; ++i) {
      T* row = p + i * m;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, row[j] * sc);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> r(row, static_cast<Eigen::Index>(m));
      r = (r * sc - mx).exp();
      T z = 0;
      for (std::size_t j = 0; j < m; ++j) z += row[j];
      r /= z;
    }
    detail::gemm(p, pv + b * m * dh, out.data().data() + b * n * dh, n, m, dh, false, false, false);
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return q.graph->record("attention", std::move(out), {q, k, v}, [=, probs = std::move(probs)](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    const T* vq = gr.node(iq).value.data().data();
    const T* vk = gr.node(ik).value.data().data();
    const T* vv = gr.node(iv).value.data().data();
    T* gq = gr.requires_grad(iq) ? gr.grad_buffer(iq).data().data() : nullptr;
    T* gk = gr.requires_grad(ik) ? gr.grad_buffer(ik).data().data() : nullptr;
    T* gv = gr.requires_grad(iv) ? gr.grad_buffer(iv).data().data() : nullptr;
    aligned_vector<T> dp(n * m);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* p = probs.data() + b * n * m;
      const T* dout = up + b * n * dh;
      if (gv) detail::gemm(p, dout, gv + b * m * dh, m, n, dh, true, false, true);
      if (!gq && !gk) continue;
      detail::gemm(dout, vv + b * m * dh, dp.data(), n, dh, m, false, true, false);
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += dp[i * m + j] * p[i * m + j];
        for (std::size_t j = 0; j < m; ++j) dp[i * m + j] = p[i * m + j] * (dp[i * m + j] - dot) * sc;
      }
      if (gq) detail::gemm(dp.data(), vk + b * m * dh, gq + b * n * dh, n, m, dh, false, false, true);
      if (gk) detail::gemm(dp.data(), vq + b * n * dh, gk + b * m * dh, m, n, dh, true, false, true);
    }
  });
}

/// 2-D rotary position encoding on x [..., grid_h * grid_w, dh]. The first half of each head
/// rotates with the token row, the second half with the token column.
template <typename T>
Var<T> rope2d(Var<T> x, std::size_t grid_h, std::size_t grid_w, T base = T(10000)) {
  const auto& xs = x.shape();
  if (xs.size() < 2 || xs[xs.size() - 2] != grid_h * grid_w || xs.back() % 4 != 0) {
    throw shape_error("rope2d: shape " + shape_str(xs) + " does not fit grid " + std::to_string(grid_h) + "x" +
                      std::to_string(grid_w) + " with head dim divisible by 4");
  }
  const std::size_t dh = xs.back();
  const std::size_t ntok = grid_h * grid_w;
  const std::size_t quarter = dh / 4;
  // cos/sin per (token, pair) where pairs 0..quarter-1 use row, quarter..2*quarter-1 use column.
  aligned_vector<T> cs(ntok * dh / 2), sn(ntok * dh / 2);
  for (std::size_t tok = 0; tok < ntok; ++tok) {
    const T row = T(tok / grid_w), col = T(tok % grid_w);
    for (std::size_t pidx = 0; pidx < dh / 2; ++pidx) {
      const std::size_t mi = pidx % quarter;
      const T theta = std::pow(base, -T(mi) / T(quarter));
      const T ang = (pidx < quarter ? row : col) * theta;
      cs[tok * dh / 2 + pidx] = std::cos(ang);
      sn[tok * dh / 2 + pidx] = std::sin(ang);
    }
  }
  const std::size_t rows = x.value().size() / dh;
  basic_tensor<T> out(xs);
  const T* px = x.value().data().data();
  T* po = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t tok = r % ntok;
    for (std::size_t pidx = 0; pidx < dh / 2; ++pidx) {
      const T c = cs[tok * dh / 2 + pidx], s = sn[tok * dh / 2 + pidx];
      const T x0 = px[r * dh + 2 * pidx], x1 = px[r * dh + 2 * pidx + 1];
      po[r * dh + 2 * pidx] = x0 * c - x1 * s;
      po[r * dh + 2 * pidx + 1] = x0 * s + x1 * c;
    }
  }
  const std::size_t idx = x.id;
  return x.graph->record("rope2d", std::move(out), {x}, [=, cs = std::move(cs), sn = std::move(sn)](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    T* gx = gr.grad_buffer(idx).data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t tok = r % ntok;
      for (std::size_t pidx = 0; pidx < dh / 2; ++pidx) {
        const T c = cs[tok * dh / 2 + pidx], s = sn[tok * dh / 2 + pidx];
        const T g0 = up[r * dh + 2 * pidx], g1 = up[r * dh + 2 * pidx + 1];
        gx[r * dh + 2 * pidx] += g0 * c + g1 * s;
        gx[r * dh + 2 * pidx + 1] += -g0 * s + g1 * c;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  basic_tensor<T> out(std::move(shape), x.value().storage());
  const std::size_t idx = x.id;
  return x.graph->record("reshape", std::move(out), {x}, [idx](Graph<T>& gr, std::size_t self) {
    const auto& up = gr.upstream(self);
    auto& gx = gr.grad_buffer(idx);
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
  });
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<std::size_t> axes) {
  basic_tensor<T> out = permute(x.value(), axes);
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  const std::size_t idx = x.id;
  return x.graph->record("permute", std::move(out), {x}, [idx, inv = std::move(inv)](Graph<T>& gr, std::size_t self) {
    auto back = permute(gr.upstream(self), inv);
    gr.grad_buffer(idx) += back;
  });
}

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw shape_error("concat: no operands");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw shape_error("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw shape_error("concat: " + shape_str(s0) + " and " + shape_str(s) + " differ off axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = numel(Shape(s0.begin(), s0.begin() + axis));
  const std::size_t inner = numel(Shape(s0.begin() + axis + 1, s0.end()));
  const std::size_t out_row = out_shape[axis] * inner;
  basic_tensor<T> out(out_shape);
  std::vector<std::size_t> widths, ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const T* src = p.value().data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy(src + o * w, src + (o + 1) * w, out.data().data() + o * out_row + off);
    widths.push_back(w);
    ids.push_back(p.id);
    off += w;
  }
  return parts[0].graph->record("concat", std::move(out), parts, [=](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    std::size_t o2 = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      if (gr.requires_grad(ids[pi])) {
        T* gp = gr.grad_buffer(ids[pi]).data().data();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[pi]; ++j) gp[o * widths[pi] + j] += up[o * out_row + o2 + j];
      }
      o2 += widths[pi];
    }
  });
}

/// Half-open slice [begin, end) along `axis`.
template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw shape_error("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " + std::to_string(axis) +
                      " of " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t in_row = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  basic_tensor<T> out(out_shape);
  const T* src = x.value().data().data();
  for (std::size_t o = 0; o < outer; ++o) std::copy(src + o * in_row + off, src + o * in_row + off + w, out.data().data() + o * w);
  const std::size_t idx = x.id;
  return x.graph->record("slice", std::move(out), {x}, [=](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    T* gx = gr.grad_buffer(idx).data().data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) gx[o * in_row + off + j] += up[o * w + j];
  });
}

/// Row lookup: table [V, D], indices in [0, V) -> [n, D].
template <typename T>
Var<T> gather_rows(Var<T> table, std::vector<int> indices) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw shape_error("gather_rows: table must be rank 2, got " + shape_str(s));
  const std::size_t d = s[1];
  basic_tensor<T> out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || static_cast<std::size_t>(indices[i]) >= s[0]) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) + " outside table " + shape_str(s));
    }
    const T* src = table.value().data().data() + indices[i] * d;
    std::copy(src, src + d, out.data().data() + i * d);
  }
  const std::size_t idt = table.id;
  return table.graph->record("gather_rows", std::move(out), {table}, [=, indices = std::move(indices)](Graph<T>& gr, std::size_t self) {
    const T* up = gr.upstream(self).data().data();
    T* gt = gr.grad_buffer(idt).data().data();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[indices[i] * d + j] += up[i * d + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const std::size_t idx = x.id;
  return x.graph->record("sum", basic_tensor<T>::scalar(acc), {x}, [idx](Graph<T>& gr, std::size_t self) {
    const T g = gr.upstream(self)[0];
    for (auto& v : gr.grad_buffer(idx).data()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw shape_error("mean: empty tensor");
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  const std::size_t idx = x.id;
  return x.graph->record("mean", basic_tensor<T>::scalar(acc / T(n)), {x}, [idx, n](Graph<T>& gr, std::size_t self) {
    const T g = gr.upstream(self)[0] / T(n);
    for (auto& v : gr.grad_buffer(idx).data()) v += g;
  });
}

}  // namespace deco
