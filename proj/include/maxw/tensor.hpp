#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "maxw/error.hpp"

namespace maxw {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void check_shape_valid(const Shape& s) {
  if (s.empty()) throw DimensionError("empty shape");
  for (int d : s)
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
}

class Graph;

// Lightweight handle into a Graph node. Value-semantic; cheap to copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}

  bool defined() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }

  const Shape& shape() const;
  int dim(int i) const { return shape()[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t size() const { return numel(shape()); }

  const std::vector<double>& value() const;
  // Gradient after backward(); zeros if this node was not reached.
  std::vector<double> grad() const;
  bool needs_grad() const;

  double item() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  std::vector<int> parents;
  std::function<void(Graph&, int)> backward;
  bool needs_grad = false;
};

}  // namespace detail

// Records operations in construction order; construction order is a valid
// topological order (every operation's inputs precede it), so backward is a
// single reverse sweep.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable leaf (a parameter or any input whose gradient is wanted).
  Tensor leaf(Shape shape, std::vector<double> data) {
    return make_leaf(std::move(shape), std::move(data), true);
  }

  // Non-differentiable input (ground truth, fixed weights).
  Tensor constant(Shape shape, std::vector<double> data) {
    return make_leaf(std::move(shape), std::move(data), false);
  }

  Tensor scalar(double v) { return constant({1}, {v}); }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  const detail::Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  detail::Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  int add_node(Shape shape, std::vector<double> value, std::vector<int> parents,
               std::function<void(Graph&, int)> backward) {
    detail::Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.parents = std::move(parents);
    bool needs = false;
    for (int p : n.parents) needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<double>& ensure_grad(int id) {
    detail::Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad.assign(numel(n.shape), 0.0);
    return n.grad;
  }

  bool grad_ready(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  // Reverse-mode sweep from a scalar loss. Every differentiable leaf reachable
  // from the loss receives its gradient; unreached leaves read back as zeros.
  void backward(const Tensor& loss) {
    if (loss.graph() != this) throw ContractError("backward: loss belongs to a different graph");
    const detail::Node& ln = node(loss.id());
    if (numel(ln.shape) != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.shape));
    for (auto& n : nodes_) n.grad.clear();
    if (!ln.needs_grad) return;
    ensure_grad(loss.id())[0] = 1.0;
    for (int id = loss.id(); id >= 0; --id) {
      detail::Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.grad.empty() && n.backward) n.backward(*this, id);
    }
  }

 private:
  Tensor make_leaf(Shape shape, std::vector<double> data, bool needs) {
    check_shape_valid(shape);
    if (numel(shape) != data.size())
      throw ContractError("leaf: shape " + shape_str(shape) + " needs " +
                          std::to_string(numel(shape)) + " values, got " +
                          std::to_string(data.size()));
    detail::Node n;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<detail::Node> nodes_;
};

inline const Shape& Tensor::shape() const { return graph_->node(id_).shape; }
inline const std::vector<double>& Tensor::value() const { return graph_->node(id_).value; }
inline bool Tensor::needs_grad() const { return graph_->node(id_).needs_grad; }

inline std::vector<double> Tensor::grad() const {
  const auto& n = graph_->node(id_);
  if (n.grad.empty()) return std::vector<double>(numel(n.shape), 0.0);
  return n.grad;
}

inline double Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape()));
  return value()[0];
}

inline void backward(const Tensor& loss) { loss.graph()->backward(loss); }

// ---------------------------------------------------------------------------
// gemm kernels (row-major, accumulate into C)
// ---------------------------------------------------------------------------

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * K;
    double* c = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const double aik = a[k];
      if (aik == 0.0) continue;
      const double* b = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * K;
    double* c = C + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * K;
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int k = 0; k < K; ++k) {
    const double* a = A + static_cast<std::size_t>(k) * M;
    const double* b = B + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const double aki = a[i];
      if (aki == 0.0) continue;
      double* c = C + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += aki * b[j];
    }
  }
}

inline void check_same_graph(const Tensor& a, const Tensor& b, const char* op) {
  if (a.graph() != b.graph()) throw ContractError(std::string(op) + ": operands from different graphs");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

namespace detail {

template <class Fwd, class Bwd>
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name, Fwd f, Bwd makebw) {
  check_same_graph(a, b, name);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Graph& g = *a.graph();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  int id = g.add_node(a.shape(), std::move(out), {a.id(), b.id()}, makebw(a.id(), b.id()));
  return Tensor(&g, id);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; },
      [](int ai, int bi) {
        return [ai, bi](Graph& g, int self) {
          const auto& dy = g.node(self).grad;
          if (g.node(ai).needs_grad) {
            auto& da = g.ensure_grad(ai);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
          }
          if (g.node(bi).needs_grad) {
            auto& db = g.ensure_grad(bi);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
          }
        };
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](int ai, int bi) {
        return [ai, bi](Graph& g, int self) {
          const auto& dy = g.node(self).grad;
          if (g.node(ai).needs_grad) {
            auto& da = g.ensure_grad(ai);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
          }
          if (g.node(bi).needs_grad) {
            auto& db = g.ensure_grad(bi);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
          }
        };
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_same_shape(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](int ai, int bi) {
        return [ai, bi](Graph& g, int self) {
          const auto& dy = g.node(self).grad;
          const auto& av = g.node(ai).value;
          const auto& bv = g.node(bi).value;
          if (g.node(ai).needs_grad) {
            auto& da = g.ensure_grad(ai);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
          }
          if (g.node(bi).needs_grad) {
            auto& db = g.ensure_grad(bi);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
          }
        };
      });
}

// Denominator clamped to >= 1e-12 (probabilities and norms feed divisions).
inline constexpr double kDivClamp = 1e-12;

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_same_shape(
      a, b, "div", [](double x, double y) { return x / std::max(y, kDivClamp); },
      [](int ai, int bi) {
        return [ai, bi](Graph& g, int self) {
          const auto& dy = g.node(self).grad;
          const auto& av = g.node(ai).value;
          const auto& bv = g.node(bi).value;
          if (g.node(ai).needs_grad) {
            auto& da = g.ensure_grad(ai);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / std::max(bv[i], kDivClamp);
          }
          if (g.node(bi).needs_grad) {
            auto& db = g.ensure_grad(bi);
            for (std::size_t i = 0; i < dy.size(); ++i) {
              if (bv[i] > kDivClamp) {
                const double be = bv[i];
                db[i] -= dy[i] * av[i] / (be * be);
              }
            }
          }
        };
      });
}

namespace detail {

template <class Fwd, class Dfdx>
Tensor unary_op(const Tensor& a, Fwd f, Dfdx dfdx) {
  Graph& g = *a.graph();
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  int ai = a.id();
  int id = g.add_node(a.shape(), std::move(out), {ai}, [ai, dfdx](Graph& gg, int self) {
    const auto& dy = gg.node(self).grad;
    const auto& av2 = gg.node(ai).value;
    if (!gg.node(ai).needs_grad) return;
    auto& da = gg.ensure_grad(ai);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * dfdx(av2[i]);
  });
  return Tensor(&g, id);
}

}  // namespace detail

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary_op(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  return detail::unary_op(a, [c](double x) { return x * c; }, [c](double) { return c; });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::exp(x); },
                          [](double x) { return std::exp(x); });
}

// Input clamped to >= 1e-12 before the log; gradient is zero below the clamp.
inline constexpr double kLogClamp = 1e-12;

inline Tensor log(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::log(std::max(x, kLogClamp)); },
                          [](double x) { return x > kLogClamp ? 1.0 / x : 0.0; });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary_op(
      a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

// Returns the value, blocks gradient flow (a fresh constant leaf).
inline Tensor stop_gradient(const Tensor& a) {
  return a.graph()->constant(a.shape(), a.value());
}

// ---------------------------------------------------------------------------
// Shape operations
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  check_shape_valid(shape);
  if (numel(shape) != a.size())
    throw DimensionError("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                         shape_str(shape));
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node(std::move(shape), a.value(), {ai}, [ai](Graph& gg, int self) {
    const auto& dy = gg.node(self).grad;
    if (!gg.node(ai).needs_grad) return;
    auto& da = gg.ensure_grad(ai);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
  });
  return Tensor(&g, id);
}

namespace detail {

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] =
        st[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(s[static_cast<std::size_t>(i + 1)]);
  return st;
}

}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const Shape& in = a.shape();
  if (axes.size() != in.size()) throw DimensionError("permute: axes rank mismatch");
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    int ax = axes[i];
    if (ax < 0 || ax >= static_cast<int>(in.size()) || seen[static_cast<std::size_t>(ax)])
      throw DimensionError("permute: invalid axes");
    seen[static_cast<std::size_t>(ax)] = true;
    out_shape[i] = in[static_cast<std::size_t>(ax)];
  }
  // src index for each dst index, computed once and captured for backward
  auto in_strides = detail::row_major_strides(in);
  auto out_strides = detail::row_major_strides(out_shape);
  const std::size_t n = a.size();
  std::vector<std::size_t> src_of(n);
  for (std::size_t dst = 0; dst < n; ++dst) {
    std::size_t rem = dst, src = 0;
    for (std::size_t d = 0; d < out_shape.size(); ++d) {
      std::size_t coord = rem / out_strides[d];
      rem %= out_strides[d];
      src += coord * in_strides[static_cast<std::size_t>(axes[d])];
    }
    src_of[dst] = src;
  }
  const auto& av = a.value();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[src_of[i]];
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node(std::move(out_shape), std::move(out), {ai},
                      [ai, src_of](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (!gg.node(ai).needs_grad) return;
                        auto& da = gg.ensure_grad(ai);
                        for (std::size_t i = 0; i < dy.size(); ++i) da[src_of[i]] += dy[i];
                      });
  return Tensor(&g, id);
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

inline Tensor slice(const Tensor& a, int axis, int start, int len) {
  const Shape& in = a.shape();
  if (axis < 0 || axis >= a.rank()) throw DimensionError("slice: bad axis");
  if (start < 0 || len < 1 || start + len > in[static_cast<std::size_t>(axis)])
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " + shape_str(in));
  Shape out_shape = in;
  out_shape[static_cast<std::size_t>(axis)] = len;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(in[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= static_cast<std::size_t>(in[static_cast<std::size_t>(i)]);
  const std::size_t in_len = static_cast<std::size_t>(in[static_cast<std::size_t>(axis)]);
  const auto& av = a.value();
  std::vector<double> out(outer * static_cast<std::size_t>(len) * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (int l = 0; l < len; ++l)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * in_len + static_cast<std::size_t>(start + l)) * inner),
                  inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * static_cast<std::size_t>(len) + static_cast<std::size_t>(l)) * inner));
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node(std::move(out_shape), std::move(out), {ai},
                      [ai, outer, inner, in_len, start, len](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (!gg.node(ai).needs_grad) return;
                        auto& da = gg.ensure_grad(ai);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (int l = 0; l < len; ++l) {
                            const double* src = dy.data() + (o * static_cast<std::size_t>(len) + static_cast<std::size_t>(l)) * inner;
                            double* dst = da.data() + (o * in_len + static_cast<std::size_t>(start + l)) * inner;
                            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                          }
                      });
  return Tensor(&g, id);
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size())) throw DimensionError("concat: bad axis");
  Shape out_shape = first;
  int total = 0;
  for (const Tensor& t : parts) {
    detail::check_same_graph(parts[0], t, "concat");
    const Shape& s = t.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != first[d])
        throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(first[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < first.size(); ++i)
    inner *= static_cast<std::size_t>(first[i]);
  std::vector<double> out(numel(out_shape));
  std::vector<int> parents;
  std::vector<int> lens;
  for (const Tensor& t : parts) {
    parents.push_back(t.id());
    lens.push_back(t.shape()[static_cast<std::size_t>(axis)]);
  }
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].value();
    const std::size_t plen = static_cast<std::size_t>(lens[p]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * plen), plen,
                  out.begin() + static_cast<std::ptrdiff_t>(o * static_cast<std::size_t>(total) * inner + off));
    off += plen;
  }
  Graph& g = *parts[0].graph();
  int id = g.add_node(std::move(out_shape), std::move(out), parents,
                      [parents, lens, outer, inner, total](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        std::size_t off2 = 0;
                        for (std::size_t p = 0; p < parents.size(); ++p) {
                          const std::size_t plen = static_cast<std::size_t>(lens[p]) * inner;
                          if (gg.node(parents[p]).needs_grad) {
                            auto& dp = gg.ensure_grad(parents[p]);
                            for (std::size_t o = 0; o < outer; ++o) {
                              const double* src = dy.data() + o * static_cast<std::size_t>(total) * inner + off2;
                              double* dst = dp.data() + o * plen;
                              for (std::size_t i = 0; i < plen; ++i) dst[i] += src[i];
                            }
                          }
                          off2 += plen;
                        }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline void axis_extents(const Shape& s, int axis, std::size_t& outer, std::size_t& len,
                         std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  len = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
    inner *= static_cast<std::size_t>(s[i]);
}

inline Shape drop_axis(const Shape& s, int axis) {
  if (s.size() == 1) return {1};
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != axis) out.push_back(s[i]);
  return out;
}

}  // namespace detail

inline Tensor sum(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw DimensionError("sum: bad axis for " + shape_str(a.shape()));
  std::size_t outer, len, inner;
  detail::axis_extents(a.shape(), axis, outer, len, inner);
  const auto& av = a.value();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = av.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node(detail::drop_axis(a.shape(), axis), std::move(out), {ai},
                      [ai, outer, len, inner](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (!gg.node(ai).needs_grad) return;
                        auto& da = gg.ensure_grad(ai);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t l = 0; l < len; ++l) {
                            const double* src = dy.data() + o * inner;
                            double* dst = da.data() + (o * len + l) * inner;
                            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                          }
                      });
  return Tensor(&g, id);
}

inline Tensor mean(const Tensor& a, int axis) {
  const double inv = 1.0 / a.shape()[static_cast<std::size_t>(axis)];
  return mul_scalar(sum(a, axis), inv);
}

inline Tensor sum(const Tensor& a) {
  const auto& av = a.value();
  double acc = 0.0;
  for (double v : av) acc += v;
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node({1}, {acc}, {ai}, [ai](Graph& gg, int self) {
    const double d = gg.node(self).grad[0];
    if (!gg.node(ai).needs_grad) return;
    auto& da = gg.ensure_grad(ai);
    for (double& v : da) v += d;
  });
  return Tensor(&g, id);
}

inline Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// softmax with max-subtraction stabilization
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank())
    throw DimensionError("softmax: bad axis for " + shape_str(a.shape()));
  std::size_t outer, len, inner;
  detail::axis_extents(a.shape(), axis, outer, len, inner);
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double m = av[base];
      for (std::size_t l = 1; l < len; ++l) m = std::max(m, av[base + l * inner]);
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double e = std::exp(av[base + l * inner] - m);
        out[base + l * inner] = e;
        s += e;
      }
      const double invs = 1.0 / s;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= invs;
    }
  Graph& g = *a.graph();
  int ai = a.id();
  int id = g.add_node(a.shape(), std::move(out), {ai},
                      [ai, outer, len, inner](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        const auto& y = gg.node(self).value;
                        if (!gg.node(ai).needs_grad) return;
                        auto& da = gg.ensure_grad(ai);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < inner; ++i) {
                            const std::size_t base = o * len * inner + i;
                            double dot = 0.0;
                            for (std::size_t l = 0; l < len; ++l)
                              dot += dy[base + l * inner] * y[base + l * inner];
                            for (std::size_t l = 0; l < len; ++l) {
                              const std::size_t k = base + l * inner;
                              da[k] += y[k] * (dy[k] - dot);
                            }
                          }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// matmul (rank >= 2; equal leading batch dims)
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_same_graph(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as.size() != bs.size())
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t r = as.size();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (as[i] != bs[i])
      throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
    batch *= static_cast<std::size_t>(as[i]);
  }
  const int M = as[r - 2], K = as[r - 1], K2 = bs[r - 2], P = bs[r - 1];
  if (K != K2)
    throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(P);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<double> out(batch * static_cast<std::size_t>(M) * static_cast<std::size_t>(P), 0.0);
  for (std::size_t t = 0; t < batch; ++t)
    detail::gemm_nn(M, P, K, av.data() + t * static_cast<std::size_t>(M) * K,
                    bv.data() + t * static_cast<std::size_t>(K) * P,
                    out.data() + t * static_cast<std::size_t>(M) * P);
  Graph& g = *a.graph();
  int ai = a.id(), bi = b.id();
  int id = g.add_node(std::move(out_shape), std::move(out), {ai, bi},
                      [ai, bi, batch, M, K, P](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        const auto& av2 = gg.node(ai).value;
                        const auto& bv2 = gg.node(bi).value;
                        if (gg.node(ai).needs_grad) {
                          auto& da = gg.ensure_grad(ai);
                          for (std::size_t t = 0; t < batch; ++t)
                            detail::gemm_nt(M, K, P,
                                            dy.data() + t * static_cast<std::size_t>(M) * P,
                                            bv2.data() + t * static_cast<std::size_t>(K) * P,
                                            da.data() + t * static_cast<std::size_t>(M) * K);
                        }
                        if (gg.node(bi).needs_grad) {
                          auto& db = gg.ensure_grad(bi);
                          for (std::size_t t = 0; t < batch; ++t)
                            detail::gemm_tn(K, P, M,
                                            av2.data() + t * static_cast<std::size_t>(M) * K,
                                            dy.data() + t * static_cast<std::size_t>(M) * P,
                                            db.data() + t * static_cast<std::size_t>(K) * P);
                        }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// Bias broadcast along one axis
// ---------------------------------------------------------------------------

inline Tensor add_bias(const Tensor& x, const Tensor& b, int axis) {
  detail::check_same_graph(x, b, "add_bias");
  if (b.rank() != 1 || b.dim(0) != x.shape()[static_cast<std::size_t>(axis)])
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  const auto& xv = x.value();
  const auto& bv = b.value();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      const double bb = bv[l];
      const std::size_t base = (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] + bb;
    }
  Graph& g = *x.graph();
  int xi = x.id(), bi = b.id();
  int id = g.add_node(x.shape(), std::move(out), {xi, bi},
                      [xi, bi, outer, len, inner](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (gg.node(xi).needs_grad) {
                          auto& dx = gg.ensure_grad(xi);
                          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                        }
                        if (gg.node(bi).needs_grad) {
                          auto& db = gg.ensure_grad(bi);
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t l = 0; l < len; ++l) {
                              const std::size_t base = (o * len + l) * inner;
                              double acc = 0.0;
                              for (std::size_t i = 0; i < inner; ++i) acc += dy[base + i];
                              db[l] += acc;
                            }
                        }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// 3x3 im2col (pad 1, stride 1 or 2) and the conv composite
// ---------------------------------------------------------------------------

inline Tensor im2col3x3(const Tensor& x, int stride) {
  if (x.rank() != 3) throw DimensionError("im2col3x3: expected [C,H,W], got " + shape_str(x.shape()));
  if (stride != 1 && stride != 2) throw ContractError("im2col3x3: stride must be 1 or 2");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = (H + 2 - 3) / stride + 1;
  const int Wo = (W + 2 - 3) / stride + 1;
  const std::size_t cols = static_cast<std::size_t>(Ho) * static_cast<std::size_t>(Wo);
  const auto& xv = x.value();
  std::vector<double> out(static_cast<std::size_t>(C) * 9 * cols, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* plane = xv.data() + static_cast<std::size_t>(c) * H * W;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = out.data() + (static_cast<std::size_t>(c) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * cols;
        for (int oy = 0; oy < Ho; ++oy) {
          const int sy = oy * stride + ky - 1;
          if (sy < 0 || sy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int sx = ox * stride + kx - 1;
            if (sx < 0 || sx >= W) continue;
            row[oy * Wo + ox] = plane[sy * W + sx];
          }
        }
      }
  }
  Graph& g = *x.graph();
  int xi = x.id();
  int id = g.add_node({C * 9, Ho * Wo}, std::move(out), {xi},
                      [xi, C, H, W, Ho, Wo, stride](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (!gg.node(xi).needs_grad) return;
                        auto& dx = gg.ensure_grad(xi);
                        const std::size_t cols2 = static_cast<std::size_t>(Ho) * Wo;
                        for (int c = 0; c < C; ++c) {
                          double* plane = dx.data() + static_cast<std::size_t>(c) * H * W;
                          for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                              const double* row = dy.data() +
                                  (static_cast<std::size_t>(c) * 9 + static_cast<std::size_t>(ky * 3 + kx)) * cols2;
                              for (int oy = 0; oy < Ho; ++oy) {
                                const int sy = oy * stride + ky - 1;
                                if (sy < 0 || sy >= H) continue;
                                for (int ox = 0; ox < Wo; ++ox) {
                                  const int sx = ox * stride + kx - 1;
                                  if (sx < 0 || sx >= W) continue;
                                  plane[sy * W + sx] += row[oy * Wo + ox];
                                }
                              }
                            }
                        }
                      });
  return Tensor(&g, id);
}

// Pointwise channel mixing: x [C,H,W], w [Cout,C], b [Cout] -> [Cout,H,W].
inline Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 3) throw DimensionError("conv1x1: expected [C,H,W], got " + shape_str(x.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (w.rank() != 2 || w.dim(1) != C)
    throw DimensionError("conv1x1: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
  Tensor y = add_bias(matmul(w, reshape(x, {C, H * W})), b, 0);
  return reshape(y, {w.dim(0), H, W});
}

// w: [Cout, Cin*9], b: [Cout]. Output [Cout, ceil(H/stride), ceil(W/stride)].
inline Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const int C = x.dim(0);
  if (w.rank() != 2 || w.dim(1) != C * 9)
    throw DimensionError("conv3x3: weight " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
  Tensor cols = im2col3x3(x, stride);
  Tensor y = matmul(w, cols);  // [Cout, Ho*Wo]
  y = add_bias(y, b, 0);
  const int H = x.dim(1), W = x.dim(2);
  const int Ho = (H + 2 - 3) / stride + 1;
  const int Wo = (W + 2 - 3) / stride + 1;
  return reshape(y, {w.dim(0), Ho, Wo});
}

// ---------------------------------------------------------------------------
// Bilinear resize (align-corners-false), differentiable
// ---------------------------------------------------------------------------

inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3)
    throw DimensionError("bilinear_resize: expected [C,H,W], got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1)
    throw DimensionError("bilinear_resize: output size " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " must be at least 1x1");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto make_axis = [](int in, int out, std::vector<int>& i0, std::vector<int>& i1,
                      std::vector<double>& f) {
    i0.resize(static_cast<std::size_t>(out));
    i1.resize(static_cast<std::size_t>(out));
    f.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      if (src < 0.0) src = 0.0;
      if (src > in - 1) src = in - 1;
      const int lo = static_cast<int>(std::floor(src));
      i0[static_cast<std::size_t>(o)] = lo;
      i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
      f[static_cast<std::size_t>(o)] = src - lo;
    }
  };
  std::vector<int> y0, y1, x0, x1;
  std::vector<double> fy, fx;
  make_axis(H, out_h, y0, y1, fy);
  make_axis(W, out_w, x0, x1, fx);
  const auto& xv = x.value();
  std::vector<double> out(static_cast<std::size_t>(C) * out_h * out_w);
  for (int c = 0; c < C; ++c) {
    const double* plane = xv.data() + static_cast<std::size_t>(c) * H * W;
    double* oplane = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const int a0 = y0[static_cast<std::size_t>(oy)], a1 = y1[static_cast<std::size_t>(oy)];
      const double gy = fy[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const int b0 = x0[static_cast<std::size_t>(ox)], b1 = x1[static_cast<std::size_t>(ox)];
        const double gx = fx[static_cast<std::size_t>(ox)];
        const double v00 = plane[a0 * W + b0], v01 = plane[a0 * W + b1];
        const double v10 = plane[a1 * W + b0], v11 = plane[a1 * W + b1];
        oplane[oy * out_w + ox] = (1 - gy) * ((1 - gx) * v00 + gx * v01) +
                                  gy * ((1 - gx) * v10 + gx * v11);
      }
    }
  }
  Graph& g = *x.graph();
  int xi = x.id();
  int id = g.add_node({C, out_h, out_w}, std::move(out), {xi},
                      [xi, C, H, W, out_h, out_w, y0, y1, x0, x1, fy, fx](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        if (!gg.node(xi).needs_grad) return;
                        auto& dx = gg.ensure_grad(xi);
                        for (int c = 0; c < C; ++c) {
                          double* plane = dx.data() + static_cast<std::size_t>(c) * H * W;
                          const double* oplane = dy.data() + static_cast<std::size_t>(c) * out_h * out_w;
                          for (int oy = 0; oy < out_h; ++oy) {
                            const int a0 = y0[static_cast<std::size_t>(oy)], a1 = y1[static_cast<std::size_t>(oy)];
                            const double gy = fy[static_cast<std::size_t>(oy)];
                            for (int ox = 0; ox < out_w; ++ox) {
                              const int b0 = x0[static_cast<std::size_t>(ox)], b1 = x1[static_cast<std::size_t>(ox)];
                              const double gx = fx[static_cast<std::size_t>(ox)];
                              const double d = oplane[oy * out_w + ox];
                              plane[a0 * W + b0] += (1 - gy) * (1 - gx) * d;
                              plane[a0 * W + b1] += (1 - gy) * gx * d;
                              plane[a1 * W + b0] += gy * (1 - gx) * d;
                              plane[a1 * W + b1] += gy * gx * d;
                            }
                          }
                        }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// Per-channel standardization (learnable scale/offset)
// ---------------------------------------------------------------------------

namespace detail {

// Shared forward for both stat sources. mean/invstd are per-channel.
inline std::vector<double> standardize_value(const std::vector<double>& xv, std::size_t outer,
                                             std::size_t len, std::size_t inner,
                                             const std::vector<double>& mean,
                                             const std::vector<double>& invstd,
                                             const std::vector<double>& gamma,
                                             const std::vector<double>& beta) {
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      const double m = mean[l], is = invstd[l], gmm = gamma[l], bt = beta[l];
      const std::size_t base = (o * len + l) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = (xv[base + i] - m) * is * gmm + bt;
    }
  return out;
}

}  // namespace detail

// Training-mode standardization: statistics from x itself (biased variance),
// reduced over every axis except `channel_axis`. Observed per-channel stats
// are written to obs_mean/obs_var for the caller's running estimates.
inline Tensor standardize_batch(const Tensor& x, int channel_axis, const Tensor& gamma,
                                const Tensor& beta, double eps,
                                std::vector<double>* obs_mean = nullptr,
                                std::vector<double>* obs_var = nullptr) {
  detail::check_same_graph(x, gamma, "standardize");
  detail::check_same_graph(x, beta, "standardize");
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), channel_axis, outer, len, inner);
  if (gamma.size() != len || beta.size() != len)
    throw DimensionError("standardize: scale/offset must have length " + std::to_string(len));
  const auto& xv = x.value();
  const double m_count = static_cast<double>(outer * inner);
  std::vector<double> mean(len, 0.0), var(len, 0.0), invstd(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      const std::size_t base = (o * len + l) * inner;
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) acc += xv[base + i];
      mean[l] += acc;
    }
  for (std::size_t l = 0; l < len; ++l) mean[l] /= m_count;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      const std::size_t base = (o * len + l) * inner;
      const double m = mean[l];
      double acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = xv[base + i] - m;
        acc += d * d;
      }
      var[l] += acc;
    }
  for (std::size_t l = 0; l < len; ++l) {
    var[l] /= m_count;
    invstd[l] = 1.0 / std::sqrt(var[l] + eps);
  }
  if (obs_mean) *obs_mean = mean;
  if (obs_var) *obs_var = var;
  std::vector<double> out =
      detail::standardize_value(xv, outer, len, inner, mean, invstd, gamma.value(), beta.value());
  Graph& g = *x.graph();
  int xi = x.id(), gi = gamma.id(), bi = beta.id();
  int id = g.add_node(
      x.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, outer, len, inner, mean, invstd, m_count](Graph& gg, int self) {
        const auto& dy = gg.node(self).grad;
        const auto& xv2 = gg.node(xi).value;
        const auto& gv = gg.node(gi).value;
        // per-channel sums of dy and dy*xhat
        std::vector<double> sum_dy(len, 0.0), sum_dyx(len, 0.0);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t base = (o * len + l) * inner;
            const double m = mean[l], is = invstd[l];
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < inner; ++i) {
              const double xh = (xv2[base + i] - m) * is;
              s1 += dy[base + i];
              s2 += dy[base + i] * xh;
            }
            sum_dy[l] += s1;
            sum_dyx[l] += s2;
          }
        if (gg.node(bi).needs_grad) {
          auto& db = gg.ensure_grad(bi);
          for (std::size_t l = 0; l < len; ++l) db[l] += sum_dy[l];
        }
        if (gg.node(gi).needs_grad) {
          auto& dg = gg.ensure_grad(gi);
          for (std::size_t l = 0; l < len; ++l) dg[l] += sum_dyx[l];
        }
        if (gg.node(xi).needs_grad) {
          auto& dx = gg.ensure_grad(xi);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t base = (o * len + l) * inner;
              const double m = mean[l], is = invstd[l];
              const double k1 = sum_dy[l] / m_count, k2 = sum_dyx[l] / m_count;
              const double gis = gv[l] * is;
              for (std::size_t i = 0; i < inner; ++i) {
                const double xh = (xv2[base + i] - m) * is;
                dx[base + i] += gis * (dy[base + i] - k1 - xh * k2);
              }
            }
        }
      });
  return Tensor(&g, id);
}

// Inference-mode standardization with fixed per-channel statistics.
inline Tensor standardize_given(const Tensor& x, int channel_axis, const Tensor& gamma,
                                const Tensor& beta, const std::vector<double>& mean,
                                const std::vector<double>& var, double eps) {
  detail::check_same_graph(x, gamma, "standardize");
  detail::check_same_graph(x, beta, "standardize");
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), channel_axis, outer, len, inner);
  if (gamma.size() != len || beta.size() != len || mean.size() != len || var.size() != len)
    throw DimensionError("standardize: per-channel vectors must have length " + std::to_string(len));
  std::vector<double> invstd(len);
  for (std::size_t l = 0; l < len; ++l) invstd[l] = 1.0 / std::sqrt(var[l] + eps);
  const auto& xv = x.value();
  std::vector<double> out =
      detail::standardize_value(xv, outer, len, inner, mean, invstd, gamma.value(), beta.value());
  Graph& g = *x.graph();
  int xi = x.id(), gi = gamma.id(), bi = beta.id();
  int id = g.add_node(x.shape(), std::move(out), {xi, gi, bi},
                      [xi, gi, bi, outer, len, inner, mean, invstd](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        const auto& xv2 = gg.node(xi).value;
                        const auto& gv = gg.node(gi).value;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t l = 0; l < len; ++l) {
                            const std::size_t base = (o * len + l) * inner;
                            const double m = mean[l], is = invstd[l];
                            if (gg.node(xi).needs_grad) {
                              auto& dx = gg.ensure_grad(xi);
                              const double gis = gv[l] * is;
                              for (std::size_t i = 0; i < inner; ++i) dx[base + i] += gis * dy[base + i];
                            }
                            if (gg.node(gi).needs_grad) {
                              auto& dg = gg.ensure_grad(gi);
                              double acc = 0.0;
                              for (std::size_t i = 0; i < inner; ++i)
                                acc += dy[base + i] * (xv2[base + i] - m) * is;
                              dg[l] += acc;
                            }
                            if (gg.node(bi).needs_grad) {
                              auto& db = gg.ensure_grad(bi);
                              double acc = 0.0;
                              for (std::size_t i = 0; i < inner; ++i) acc += dy[base + i];
                              db[l] += acc;
                            }
                          }
                      });
  return Tensor(&g, id);
}

// ---------------------------------------------------------------------------
// L2 normalization along one axis (each fiber scaled to unit norm)
// ---------------------------------------------------------------------------

inline Tensor l2_normalize(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("l2_normalize: bad axis for " + shape_str(x.shape()));
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  const auto& xv = x.value();
  std::vector<double> out(xv.size());
  std::vector<double> norms(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double acc = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const double v = xv[base + l * inner];
        acc += v * v;
      }
      const double n = std::max(std::sqrt(acc), kDivClamp);
      norms[o * inner + i] = n;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] = xv[base + l * inner] / n;
    }
  Graph& g = *x.graph();
  int xi = x.id();
  int id = g.add_node(x.shape(), std::move(out), {xi},
                      [xi, outer, len, inner, norms](Graph& gg, int self) {
                        const auto& dy = gg.node(self).grad;
                        const auto& y = gg.node(self).value;
                        if (!gg.node(xi).needs_grad) return;
                        auto& dx = gg.ensure_grad(xi);
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < inner; ++i) {
                            const std::size_t base = o * len * inner + i;
                            const double n = norms[o * inner + i];
                            double dot = 0.0;
                            for (std::size_t l = 0; l < len; ++l)
                              dot += dy[base + l * inner] * y[base + l * inner];
                            for (std::size_t l = 0; l < len; ++l) {
                              const std::size_t k = base + l * inner;
                              dx[k] += (dy[k] - y[k] * dot) / n;
                            }
                          }
                      });
  return Tensor(&g, id);
}

}  // namespace maxw
