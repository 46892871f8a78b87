// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "sesw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace sesw::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

int64_t shape_numel(const Shape &s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape &s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

std::vector<int64_t> row_strides(const Shape &s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = int(s.size()) - 2; i >= 0; --i) st[size_t(i)] = st[size_t(i) + 1] * s[size_t(i) + 1];
  return st;
}

void check_shape(const Shape &s) {
  if (s.empty()) throw ShapeError("rank-0 tensors are not supported");
  for (int64_t d : s)
    if (d < 1) throw ShapeError("non-positive dimension in " + shape_str(s));
}

// Decomposes an axis into (outer, len, inner) for the canonical
// [outer, len, inner] view used by slice/pad/concat/flip/dilate.
struct AxisView {
  int64_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape &s, int axis) {
  if (axis < 0 || axis >= int(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[size_t(i)];
  v.len = s[size_t(axis)];
  for (int i = axis + 1; i < int(s.size()); ++i) v.inner *= s[size_t(i)];
  return v;
}

}  // namespace

const Shape &Tensor::shape() const { return g->node(*this).shape; }
int64_t Tensor::numel() const { return g->node(*this).numel; }
int Tensor::rank() const { return int(shape().size()); }
int64_t Tensor::dim(int axis) const {
  const Shape &s = shape();
  if (axis < 0) axis += int(s.size());
  if (axis < 0 || axis >= int(s.size())) throw ShapeError("dim out of range");
  return s[size_t(axis)];
}
const double *Tensor::data() const { return g->node(*this).value.data(); }
double *Tensor::mutable_data() { return g->node(*this).value.data(); }

Tensor Graph::make_node(Shape shape, bool needs_grad, bool zeroed) {
  check_shape(shape);
  Node n;
  n.numel = shape_numel(shape);
  n.shape = std::move(shape);
  if (zeroed)
    n.value.assign(size_t(n.numel), 0.0);
  else
    n.value.resize(size_t(n.numel));  // uninitialized: caller overwrites all
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Tensor{this, int32_t(nodes_.size() - 1)};
}

void Graph::check_same_graph(Tensor t) const {
  if (t.g != this || t.id < 0 || size_t(t.id) >= nodes_.size())
    throw ShapeError("tensor does not belong to this graph");
}

double *Graph::grad_ptr(Tensor t) {
  Node &n = node(t);
  if (!n.needs_grad) return nullptr;
  if (n.ext_grad) return n.ext_grad;
  if (n.grad.size() != size_t(n.numel)) n.grad.assign(size_t(n.numel), 0.0);
  return n.grad.data();
}

// ---- leaves ----

Tensor Graph::input(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (int64_t(data.size()) != shape_numel(shape))
    throw ShapeError("input data size does not match " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.numel = int64_t(data.size());
  n.value.assign(data.begin(), data.end());
  nodes_.push_back(std::move(n));
  return Tensor{this, int32_t(nodes_.size() - 1)};
}

Tensor Graph::input(Shape shape, const double *data) {
  const int64_t n = shape_numel(shape);
  return input(std::move(shape), std::vector<double>(data, data + n));
}

Tensor Graph::zeros(Shape shape) { return make_node(std::move(shape), false); }

Tensor Graph::full(Shape shape, double fill) {
  Tensor t = make_node(std::move(shape), false);
  auto &v = node(t).value;
  std::fill(v.begin(), v.end(), fill);
  return t;
}

Tensor Graph::param(Param &p) {
  if (p.value.empty() || int64_t(p.value.size()) != shape_numel(p.shape))
    throw ShapeError("param " + p.name + " has inconsistent storage");
  if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
  Tensor t = input(p.shape, p.value.data());
  Node &n = node(t);
  n.needs_grad = true;
  n.ext_grad = p.grad.data();
  return t;
}

// ---- movement ----

Tensor Graph::reshape(Tensor t, Shape shape) {
  check_same_graph(t);
  check_shape(shape);
  if (shape_numel(shape) != t.numel())
    throw ShapeError("reshape " + shape_str(t.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor out = make_node(shape, node(t).needs_grad, /*zeroed=*/false);
  node(out).value = node(t).value;
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, o = out.id;
    node(out).backward = [g, a, o] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, o});
      const int64_t n = g->nodes_[size_t(o)].numel;
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
    };
  }
  return out;
}

Tensor Graph::permute(Tensor t, std::vector<int> axes) {
  check_same_graph(t);
  const Shape &in = t.shape();
  const int r = int(in.size());
  if (int(axes.size()) != r) throw ShapeError("permute rank mismatch");
  std::vector<char> seen(size_t(r), 0);
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (axes[size_t(i)] < 0 || axes[size_t(i)] >= r || seen[size_t(axes[size_t(i)])])
      throw ShapeError("bad permutation");
    seen[size_t(axes[size_t(i)])] = 1;
    out_shape[size_t(i)] = in[size_t(axes[size_t(i)])];
  }
  // compute strides before make_node: push_back may reallocate the node
  // vector and invalidate the `in` reference
  const auto in_st = row_strides(in);
  // stride of output axis i in the INPUT buffer
  std::vector<int64_t> src_st(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) src_st[size_t(i)] = in_st[size_t(axes[size_t(i)])];
  Tensor out = make_node(out_shape, node(t).needs_grad, /*zeroed=*/false);

  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  // odometer walk over the output index: the source offset is maintained
  // incrementally instead of recomputed with divisions per element
  const auto walk = [r, n, &out_shape](const std::vector<int64_t> &src_st,
                                       auto &&emit) {
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t s = 0;
    for (int64_t o = 0; o < n; ++o) {
      emit(o, s);
      for (int i = r - 1; i >= 0; --i) {
        s += src_st[size_t(i)];
        if (++idx[size_t(i)] < out_shape[size_t(i)]) break;
        s -= src_st[size_t(i)] * out_shape[size_t(i)];
        idx[size_t(i)] = 0;
      }
    }
  };
  walk(src_st, [&](int64_t o, int64_t s) { dst[o] = src[s]; });

  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    Shape oshape = out_shape;
    node(out).backward = [g, a, oid, oshape, src_st, r] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      std::vector<int64_t> idx(static_cast<size_t>(r), 0);
      int64_t s = 0;
      for (int64_t o = 0; o < n2; ++o) {
        ga[s] += go[o];
        for (int i = r - 1; i >= 0; --i) {
          s += src_st[size_t(i)];
          if (++idx[size_t(i)] < oshape[size_t(i)]) break;
          s -= src_st[size_t(i)] * oshape[size_t(i)];
          idx[size_t(i)] = 0;
        }
      }
    };
  }
  return out;
}

Tensor Graph::slice(Tensor t, int axis, int64_t start, int64_t len) {
  check_same_graph(t);
  const Shape &in = t.shape();
  const AxisView v = axis_view(in, axis);
  if (start < 0 || len < 1 || start + len > v.len)
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of range for axis length " + std::to_string(v.len));
  Shape out_shape = in;
  out_shape[size_t(axis)] = len;
  Tensor out = make_node(out_shape, node(t).needs_grad, /*zeroed=*/false);

  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  for (int64_t o = 0; o < v.outer; ++o)
    std::memcpy(dst + o * len * v.inner, src + (o * v.len + start) * v.inner,
                size_t(len * v.inner) * sizeof(double));

  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, v, start, len] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      for (int64_t o = 0; o < v.outer; ++o) {
        double *dst_g = ga + (o * v.len + start) * v.inner;
        const double *src_g = go + o * len * v.inner;
        for (int64_t i = 0; i < len * v.inner; ++i) dst_g[i] += src_g[i];
      }
    };
  }
  return out;
}

Tensor Graph::pad_axis(Tensor t, int axis, int64_t before, int64_t after) {
  check_same_graph(t);
  if (before < 0 || after < 0) throw ShapeError("negative padding");
  if (before == 0 && after == 0) return t;
  const Shape &in = t.shape();
  const AxisView v = axis_view(in, axis);
  Shape out_shape = in;
  out_shape[size_t(axis)] = v.len + before + after;
  Tensor out = make_node(out_shape, node(t).needs_grad);

  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t out_len = v.len + before + after;
  for (int64_t o = 0; o < v.outer; ++o)
    std::memcpy(dst + (o * out_len + before) * v.inner, src + o * v.len * v.inner,
                size_t(v.len * v.inner) * sizeof(double));

  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, v, before, out_len] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      for (int64_t o = 0; o < v.outer; ++o) {
        const double *src_g = go + (o * out_len + before) * v.inner;
        double *dst_g = ga + o * v.len * v.inner;
        for (int64_t i = 0; i < v.len * v.inner; ++i) dst_g[i] += src_g[i];
      }
    };
  }
  return out;
}

Tensor Graph::concat(const std::vector<Tensor> &ts, int axis) {
  if (ts.empty()) throw ShapeError("concat of nothing");
  for (Tensor t : ts) check_same_graph(t);
  const Shape &first = ts[0].shape();
  int64_t total = 0;
  bool needs = false;
  for (Tensor t : ts) {
    const Shape &s = t.shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (int i = 0; i < int(s.size()); ++i)
      if (i != axis && s[size_t(i)] != first[size_t(i)])
        throw ShapeError("concat shape mismatch at axis " + std::to_string(i));
    total += t.dim(axis);
    needs = needs || node(t).needs_grad;
  }
  Shape out_shape = first;
  const AxisView v0 = axis_view(first, axis);
  out_shape[size_t(axis)] = total;
  Tensor out = make_node(out_shape, needs, /*zeroed=*/false);

  double *dst = node(out).value.data();
  int64_t off = 0;
  for (Tensor t : ts) {
    const int64_t len = t.dim(axis);
    const double *src = node(t).value.data();
    for (int64_t o = 0; o < v0.outer; ++o)
      std::memcpy(dst + (o * total + off) * v0.inner, src + o * len * v0.inner,
                  size_t(len * v0.inner) * sizeof(double));
    off += len;
  }

  if (needs) {
    Graph *g = this;
    std::vector<int32_t> ids;
    std::vector<int64_t> lens;
    for (Tensor t : ts) {
      ids.push_back(t.id);
      lens.push_back(t.dim(axis));
    }
    int32_t oid = out.id;
    node(out).backward = [g, ids, lens, oid, v0, total] {
      const double *go = g->grad_ptr(Tensor{g, oid});
      int64_t off2 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        double *ga = g->grad_ptr(Tensor{g, ids[k]});
        if (ga) {
          for (int64_t o = 0; o < v0.outer; ++o) {
            const double *src_g = go + (o * total + off2) * v0.inner;
            double *dst_g = ga + o * lens[k] * v0.inner;
            for (int64_t i = 0; i < lens[k] * v0.inner; ++i) dst_g[i] += src_g[i];
          }
        }
        off2 += lens[k];
      }
    };
  }
  return out;
}

Tensor Graph::flip(Tensor t, int axis) {
  check_same_graph(t);
  const AxisView v = axis_view(t.shape(), axis);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t l = 0; l < v.len; ++l)
      std::memcpy(dst + (o * v.len + (v.len - 1 - l)) * v.inner,
                  src + (o * v.len + l) * v.inner, size_t(v.inner) * sizeof(double));

  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, v] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t l = 0; l < v.len; ++l) {
          const double *src_g = go + (o * v.len + (v.len - 1 - l)) * v.inner;
          double *dst_g = ga + (o * v.len + l) * v.inner;
          for (int64_t i = 0; i < v.inner; ++i) dst_g[i] += src_g[i];
        }
    };
  }
  return out;
}

Tensor Graph::dilate_axis(Tensor t, int axis, int64_t stride) {
  check_same_graph(t);
  if (stride < 1) throw ShapeError("dilate stride must be >= 1");
  if (stride == 1) return t;
  const AxisView v = axis_view(t.shape(), axis);
  Shape out_shape = t.shape();
  const int64_t out_len = (v.len - 1) * stride + 1;
  out_shape[size_t(axis)] = out_len;
  Tensor out = make_node(out_shape, node(t).needs_grad);

  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t l = 0; l < v.len; ++l)
      std::memcpy(dst + (o * out_len + l * stride) * v.inner,
                  src + (o * v.len + l) * v.inner, size_t(v.inner) * sizeof(double));

  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, v, stride, out_len] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t l = 0; l < v.len; ++l) {
          const double *src_g = go + (o * out_len + l * stride) * v.inner;
          double *dst_g = ga + (o * v.len + l) * v.inner;
          for (int64_t i = 0; i < v.inner; ++i) dst_g[i] += src_g[i];
        }
    };
  }
  return out;
}

// ---- broadcast binary ops ----

namespace {

// For b broadcasting onto a (right-aligned), returns per-axis-of-a strides
// into b's buffer (0 where b's dim is 1 or absent).
std::vector<int64_t> broadcast_strides(const Shape &a, const Shape &b) {
  const int ra = int(a.size()), rb = int(b.size());
  if (rb > ra)
    throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  const auto b_st = row_strides(b);
  std::vector<int64_t> st(size_t(ra), 0);
  for (int i = 0; i < rb; ++i) {
    const int ia = ra - 1 - i, ib = rb - 1 - i;
    const int64_t db = b[size_t(ib)];
    if (db == a[size_t(ia)]) {
      st[size_t(ia)] = b_st[size_t(ib)];
    } else if (db == 1) {
      st[size_t(ia)] = 0;
    } else {
      throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
    }
  }
  return st;
}

/// When the broadcast of b onto a reduces to j = i mod m (b is a contiguous
/// trailing block of a, the bias/mask case), returns m; otherwise 0. The
/// element order of the blocked loops below matches the generic loop, so the
/// fast path is bit-identical.
int64_t suffix_period(const Shape &sa, const std::vector<int64_t> &a_st,
                      const std::vector<int64_t> &bb_st) {
  const int r = int(sa.size());
  int64_t m = 1;
  int k = r - 1;
  for (; k >= 0; --k) {
    if (bb_st[size_t(k)] != a_st[size_t(k)]) break;
    m *= sa[size_t(k)];
  }
  for (; k >= 0; --k)
    if (bb_st[size_t(k)] != 0) return 0;
  return m;
}

}  // namespace

Tensor Graph::add(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  const Shape sa = a.shape(), sb = b.shape();  // copies: make_node may realloc
  const bool needs = node(a).needs_grad || node(b).needs_grad;
  const auto a_st = row_strides(sa);
  const auto bb_st = broadcast_strides(sa, sb);
  const bool same = sa == sb;
  Tensor out = make_node(sa, needs, /*zeroed=*/false);

  const double *pa = node(a).value.data();
  const double *pb = node(b).value.data();
  double *po = node(out).value.data();
  const int64_t n = node(out).numel;
  const int r = int(sa.size());
  const int64_t period = same ? 0 : suffix_period(sa, a_st, bb_st);
  if (same) {
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  } else if (period > 0) {
    for (int64_t base = 0; base < n; base += period)
      for (int64_t k = 0; k < period; ++k) po[base + k] = pa[base + k] + pb[k];
  } else {
    for (int64_t i = 0; i < n; ++i) {
      int64_t rem = i, j = 0;
      for (int k = 0; k < r; ++k) {
        const int64_t q = rem / a_st[size_t(k)];
        rem -= q * a_st[size_t(k)];
        j += q * bb_st[size_t(k)];
      }
      po[i] = pa[i] + pb[j];
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ia = a.id, ib = b.id, io = out.id;
    node(out).backward = [g, ia, ib, io, a_st, bb_st, same, r, period] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const int64_t n2 = g->nodes_[size_t(io)].numel;
      if (double *ga = g->grad_ptr(Tensor{g, ia}))
        for (int64_t i = 0; i < n2; ++i) ga[i] += go[i];
      if (double *gb = g->grad_ptr(Tensor{g, ib})) {
        if (same) {
          for (int64_t i = 0; i < n2; ++i) gb[i] += go[i];
        } else if (period > 0) {
          for (int64_t base = 0; base < n2; base += period)
            for (int64_t k = 0; k < period; ++k) gb[k] += go[base + k];
        } else {
          for (int64_t i = 0; i < n2; ++i) {
            int64_t rem = i, j = 0;
            for (int k = 0; k < r; ++k) {
              const int64_t q = rem / a_st[size_t(k)];
              rem -= q * a_st[size_t(k)];
              j += q * bb_st[size_t(k)];
            }
            gb[j] += go[i];
          }
        }
      }
    };
  }
  return out;
}

Tensor Graph::sub(Tensor a, Tensor b) { return add(a, scale(b, -1.0)); }

Tensor Graph::mul(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  const Shape sa = a.shape(), sb = b.shape();  // copies: make_node may realloc
  const bool needs = node(a).needs_grad || node(b).needs_grad;
  const auto a_st = row_strides(sa);
  const auto bb_st = broadcast_strides(sa, sb);
  const bool same = sa == sb;
  Tensor out = make_node(sa, needs, /*zeroed=*/false);

  const double *pa = node(a).value.data();
  const double *pb = node(b).value.data();
  double *po = node(out).value.data();
  const int64_t n = node(out).numel;
  const int r = int(sa.size());
  const int64_t period = same ? 0 : suffix_period(sa, a_st, bb_st);
  if (same) {
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  } else if (period > 0) {
    for (int64_t base = 0; base < n; base += period)
      for (int64_t k = 0; k < period; ++k) po[base + k] = pa[base + k] * pb[k];
  } else {
    for (int64_t i = 0; i < n; ++i) {
      int64_t rem = i, j = 0;
      for (int k = 0; k < r; ++k) {
        const int64_t q = rem / a_st[size_t(k)];
        rem -= q * a_st[size_t(k)];
        j += q * bb_st[size_t(k)];
      }
      po[i] = pa[i] * pb[j];
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ia = a.id, ib = b.id, io = out.id;
    node(out).backward = [g, ia, ib, io, a_st, bb_st, same, r, period] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *pa2 = g->nodes_[size_t(ia)].value.data();
      const double *pb2 = g->nodes_[size_t(ib)].value.data();
      const int64_t n2 = g->nodes_[size_t(io)].numel;
      double *ga = g->grad_ptr(Tensor{g, ia});
      double *gb = g->grad_ptr(Tensor{g, ib});
      if (same) {
        for (int64_t i = 0; i < n2; ++i) {
          if (ga) ga[i] += go[i] * pb2[i];
          if (gb) gb[i] += go[i] * pa2[i];
        }
      } else if (period > 0) {
        for (int64_t base = 0; base < n2; base += period)
          for (int64_t k = 0; k < period; ++k) {
            if (ga) ga[base + k] += go[base + k] * pb2[k];
            if (gb) gb[k] += go[base + k] * pa2[base + k];
          }
      } else {
        for (int64_t i = 0; i < n2; ++i) {
          int64_t rem = i, j = 0;
          for (int k = 0; k < r; ++k) {
            const int64_t q = rem / a_st[size_t(k)];
            rem -= q * a_st[size_t(k)];
            j += q * bb_st[size_t(k)];
          }
          if (ga) ga[i] += go[i] * pb2[j];
          if (gb) gb[j] += go[i] * pa2[i];
        }
      }
    };
  }
  return out;
}

Tensor Graph::scale(Tensor t, double c) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] * c;
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, c] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) ga[i] += go[i] * c;
    };
  }
  return out;
}

Tensor Graph::add_scalar(Tensor t, double c) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] + c;
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) ga[i] += go[i];
    };
  }
  return out;
}

Tensor Graph::pow_clamped(Tensor t, double p, double floor) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = std::pow(std::max(src[i], floor), p);
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, p, floor] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const double *src2 = g->nodes_[size_t(a)].value.data();
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) {
        if (src2[i] > floor)
          ga[i] += go[i] * p * std::pow(src2[i], p - 1.0);
        // clamped region: derivative 0
      }
    };
  }
  return out;
}

Tensor Graph::sigmoid(Tensor t) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = 1.0 / (1.0 + std::exp(-src[i]));
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const double *y = g->nodes_[size_t(oid)].value.data();
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
    };
  }
  return out;
}

Tensor Graph::tanh_(Tensor t) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = std::tanh(src[i]);
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const double *y = g->nodes_[size_t(oid)].value.data();
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
    };
  }
  return out;
}

Tensor Graph::silu(Tensor t) {
  check_same_graph(t);
  Tensor out = make_node(t.shape(), node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  const int64_t n = node(out).numel;
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] / (1.0 + std::exp(-src[i]));
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const double *x = g->nodes_[size_t(a)].value.data();
      const int64_t n2 = g->nodes_[size_t(oid)].numel;
      for (int64_t i = 0; i < n2; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x[i]));
        ga[i] += go[i] * (s + x[i] * s * (1.0 - s));
      }
    };
  }
  return out;
}

// ---- matmul ----

Tensor Graph::matmul(Tensor a, Tensor b) {
  check_same_graph(a);
  check_same_graph(b);
  const Shape &sa = a.shape(), &sb = b.shape();
  if (sa.size() < 2) throw ShapeError("matmul lhs must have rank >= 2");
  const int64_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];

  const bool b_is_weight = sb.size() == 2;
  int64_t N;
  if (b_is_weight) {
    if (sb[0] != K)
      throw ShapeError("matmul inner mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    N = sb[1];
  } else {
    if (sb.size() != sa.size())
      throw ShapeError("batched matmul rank mismatch");
    for (size_t i = 0; i + 2 < sa.size(); ++i)
      if (sb[i] != sa[i]) throw ShapeError("batched matmul leading-dim mismatch");
    if (sb[sb.size() - 2] != K)
      throw ShapeError("matmul inner mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    N = sb[sb.size() - 1];
  }

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(N);
  const bool needs = node(a).needs_grad || node(b).needs_grad;
  Tensor out = make_node(out_shape, needs, /*zeroed=*/false);

  const double *pa = node(a).value.data();
  const double *pb = node(b).value.data();
  double *po = node(out).value.data();
  if (b_is_weight) {
    MapC A(pa, batch * M, K);
    MapC B(pb, K, N);
    MapM C(po, batch * M, N);
    C.noalias() = A * B;
  } else {
    for (int64_t g = 0; g < batch; ++g) {
      MapC A(pa + g * M * K, M, K);
      MapC B(pb + g * K * N, K, N);
      MapM C(po + g * M * N, M, N);
      C.noalias() = A * B;
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ia = a.id, ib = b.id, io = out.id;
    node(out).backward = [g, ia, ib, io, batch, M, K, N, b_is_weight] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *pa2 = g->nodes_[size_t(ia)].value.data();
      const double *pb2 = g->nodes_[size_t(ib)].value.data();
      double *ga = g->grad_ptr(Tensor{g, ia});
      double *gb = g->grad_ptr(Tensor{g, ib});
      if (b_is_weight) {
        MapC Gc(go, batch * M, N);
        if (ga) {
          MapC B(pb2, K, N);
          MapM Ga(ga, batch * M, K);
          Ga.noalias() += Gc * B.transpose();
        }
        if (gb) {
          MapC A(pa2, batch * M, K);
          MapM Gb(gb, K, N);
          Gb.noalias() += A.transpose() * Gc;
        }
      } else {
        for (int64_t q = 0; q < batch; ++q) {
          MapC Gc(go + q * M * N, M, N);
          if (ga) {
            MapC B(pb2 + q * K * N, K, N);
            MapM Ga(ga + q * M * K, M, K);
            Ga.noalias() += Gc * B.transpose();
          }
          if (gb) {
            MapC A(pa2 + q * M * K, M, K);
            MapM Gb(gb + q * K * N, K, N);
            Gb.noalias() += A.transpose() * Gc;
          }
        }
      }
    };
  }
  return out;
}

// ---- normalization / reductions ----

Tensor Graph::softmax_lastdim(Tensor t) {
  check_same_graph(t);
  const Shape &s = t.shape();
  const int64_t d = s.back();
  const int64_t rows = t.numel() / d;
  Tensor out = make_node(s, node(t).needs_grad, /*zeroed=*/false);
  const double *src = node(t).value.data();
  double *dst = node(out).value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double *x = src + r * d;
    double *y = dst + r * d;
    double mx = x[0];
    for (int64_t i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const double inv = 1.0 / sum;
    for (int64_t i = 0; i < d; ++i) y[i] *= inv;
  }
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid, rows, d] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      const double *y = g->nodes_[size_t(oid)].value.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double *yr = y + r * d;
        const double *gr = go + r * d;
        double dot = 0.0;
        for (int64_t i = 0; i < d; ++i) dot += gr[i] * yr[i];
        double *gx = ga + r * d;
        for (int64_t i = 0; i < d; ++i) gx[i] += yr[i] * (gr[i] - dot);
      }
    };
  }
  return out;
}

Tensor Graph::layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps) {
  check_same_graph(x);
  check_same_graph(gamma);
  check_same_graph(beta);
  const Shape &s = x.shape();
  const int64_t d = s.back();
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layer_norm affine params must match the last dim");
  const int64_t rows = x.numel() / d;
  const bool needs =
      node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  Tensor out = make_node(s, needs, /*zeroed=*/false);

  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> rstd(static_cast<size_t>(rows));
  const double *px = node(x).value.data();
  const double *pg = node(gamma).value.data();
  const double *pbeta = node(beta).value.data();
  double *po = node(out).value.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double *xr = px + r * d;
    double mean = 0.0;
    for (int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= double(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= double(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[size_t(r)] = rs;
    double *h = xhat.data() + r * d;
    double *yr = po + r * d;
    for (int64_t i = 0; i < d; ++i) {
      h[i] = (xr[i] - mean) * rs;
      yr[i] = h[i] * pg[i] + pbeta[i];
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ix = x.id, ig = gamma.id, ibt = beta.id, io = out.id;
    node(out).backward = [g, ix, ig, ibt, io, rows, d, xhat = std::move(xhat),
                          rstd = std::move(rstd)] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *pg2 = g->nodes_[size_t(ig)].value.data();
      double *gx = g->grad_ptr(Tensor{g, ix});
      double *gg = g->grad_ptr(Tensor{g, ig});
      double *gbets = g->grad_ptr(Tensor{g, ibt});
      for (int64_t r = 0; r < rows; ++r) {
        const double *gr = go + r * d;
        const double *h = xhat.data() + r * d;
        if (gg || gbets) {
          for (int64_t i = 0; i < d; ++i) {
            if (gg) gg[i] += gr[i] * h[i];
            if (gbets) gbets[i] += gr[i];
          }
        }
        if (gx) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (int64_t i = 0; i < d; ++i) {
            const double dh = gr[i] * pg2[i];
            mean_dh += dh;
            mean_dh_h += dh * h[i];
          }
          mean_dh /= double(d);
          mean_dh_h /= double(d);
          const double rs = rstd[size_t(r)];
          double *gxr = gx + r * d;
          for (int64_t i = 0; i < d; ++i) {
            const double dh = gr[i] * pg2[i];
            gxr[i] += rs * (dh - mean_dh - h[i] * mean_dh_h);
          }
        }
      }
    };
  }
  return out;
}

Tensor Graph::sum_all(Tensor t) {
  check_same_graph(t);
  Tensor out = make_node(Shape{1}, node(t).needs_grad);
  const double *src = node(t).value.data();
  double acc = 0.0;
  const int64_t n = node(t).numel;
  for (int64_t i = 0; i < n; ++i) acc += src[i];
  node(out).value[0] = acc;
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = t.id, oid = out.id;
    node(out).backward = [g, a, oid] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double go = g->grad_ptr(Tensor{g, oid})[0];
      const int64_t n2 = g->nodes_[size_t(a)].numel;
      for (int64_t i = 0; i < n2; ++i) ga[i] += go;
    };
  }
  return out;
}

Tensor Graph::mean_all(Tensor t) {
  return scale(sum_all(t), 1.0 / double(t.numel()));
}

Tensor Graph::embedding_rows(Tensor table, std::vector<int64_t> indices) {
  check_same_graph(table);
  const Shape &s = table.shape();
  if (s.size() != 2) throw ShapeError("embedding table must be 2-D");
  const int64_t rows = s[0], width = s[1];
  for (int64_t ix : indices)
    if (ix < 0 || ix >= rows) throw ShapeError("embedding index out of range");
  Tensor out =
      make_node(Shape{int64_t(indices.size()), width}, node(table).needs_grad);
  const double *src = node(table).value.data();
  double *dst = node(out).value.data();
  for (size_t i = 0; i < indices.size(); ++i)
    std::memcpy(dst + int64_t(i) * width, src + indices[i] * width,
                size_t(width) * sizeof(double));
  if (node(out).needs_grad) {
    Graph *g = this;
    int32_t a = table.id, oid = out.id;
    node(out).backward = [g, a, oid, indices = std::move(indices), width] {
      double *ga = g->grad_ptr(Tensor{g, a});
      if (!ga) return;
      const double *go = g->grad_ptr(Tensor{g, oid});
      for (size_t i = 0; i < indices.size(); ++i) {
        const double *src_g = go + int64_t(i) * width;
        double *dst_g = ga + indices[i] * width;
        for (int64_t j = 0; j < width; ++j) dst_g[j] += src_g[j];
      }
    };
  }
  return out;
}

// ---- fused recurrent kernels ----

namespace {

struct SeqDims {
  int64_t N, L, C, H;
};

SeqDims rnn_dims(const Shape &x, const Shape &w_ih, const Shape &w_hh, int gates) {
  if (x.size() != 3) throw ShapeError("rnn input must be [N, L, C]");
  if (w_ih.size() != 2 || w_hh.size() != 2) throw ShapeError("rnn weights must be 2-D");
  SeqDims d{x[0], x[1], x[2], w_hh[0]};
  if (w_ih[0] != d.C || w_ih[1] != gates * d.H || w_hh[1] != gates * d.H)
    throw ShapeError("rnn weight shapes inconsistent: x " + shape_str(x) + " w_ih " +
                     shape_str(w_ih) + " w_hh " + shape_str(w_hh));
  return d;
}

}  // namespace

Tensor Graph::gru_seq(Tensor x, Tensor w_ih, Tensor w_hh, Tensor b_ih, Tensor b_hh,
                      bool reverse) {
  check_same_graph(x);
  check_same_graph(w_ih);
  check_same_graph(w_hh);
  check_same_graph(b_ih);
  check_same_graph(b_hh);
  const SeqDims d = rnn_dims(x.shape(), w_ih.shape(), w_hh.shape(), 3);
  if (b_ih.numel() != 3 * d.H || b_hh.numel() != 3 * d.H)
    throw ShapeError("gru bias size mismatch");
  const bool needs = node(x).needs_grad || node(w_ih).needs_grad ||
                     node(w_hh).needs_grad || node(b_ih).needs_grad ||
                     node(b_hh).needs_grad;
  Tensor out = make_node(Shape{d.N, d.L, d.H}, needs);

  const int64_t G = 3 * d.H;
  // all input projections in one GEMM: [N*L, C] x [C, 3H]
  std::vector<double> gx(size_t(d.N * d.L * G));
  {
    MapC X(node(x).value.data(), d.N * d.L, d.C);
    MapC Wi(node(w_ih).value.data(), d.C, G);
    MapM Gx(gx.data(), d.N * d.L, G);
    Gx.noalias() = X * Wi;
  }
  const double *bi = node(b_ih).value.data();
  const double *bh = node(b_hh).value.data();
  const double *whh = node(w_hh).value.data();

  // saved activations for backward: r, z, n and the pre-gate hn = Whh_n h + bhh_n
  std::vector<double> sr(size_t(d.N * d.L * d.H)), sz(sr.size()), sn(sr.size()),
      shn(sr.size());
  std::vector<double> hstate(size_t(d.N * (d.L + 1) * d.H), 0.0);  // h_{-1} = 0

  std::vector<double> gh(size_t(d.N * G));
  double *po = node(out).value.data();
  for (int64_t step = 0; step < d.L; ++step) {
    const int64_t l = reverse ? d.L - 1 - step : step;
    const double *hprev = hstate.data() + step * d.N * d.H;
    double *hcur = hstate.data() + (step + 1) * d.N * d.H;
    {
      MapC Hp(hprev, d.N, d.H);
      MapC Wh(whh, d.H, G);
      MapM Gh(gh.data(), d.N, G);
      Gh.noalias() = Hp * Wh;
    }
    for (int64_t nrow = 0; nrow < d.N; ++nrow) {
      const double *gxr = gx.data() + (nrow * d.L + l) * G;
      const double *ghr = gh.data() + nrow * G;
      const double *hp = hprev + nrow * d.H;
      double *hc = hcur + nrow * d.H;
      double *yo = po + (nrow * d.L + l) * d.H;
      const int64_t base = (nrow * d.L + l) * d.H;
      for (int64_t j = 0; j < d.H; ++j) {
        const double r = 1.0 / (1.0 + std::exp(-(gxr[j] + bi[j] + ghr[j] + bh[j])));
        const double z =
            1.0 / (1.0 + std::exp(-(gxr[d.H + j] + bi[d.H + j] + ghr[d.H + j] + bh[d.H + j])));
        const double hn = ghr[2 * d.H + j] + bh[2 * d.H + j];
        const double nn = std::tanh(gxr[2 * d.H + j] + bi[2 * d.H + j] + r * hn);
        const double h = (1.0 - z) * nn + z * hp[j];
        sr[size_t(base + j)] = r;
        sz[size_t(base + j)] = z;
        sn[size_t(base + j)] = nn;
        shn[size_t(base + j)] = hn;
        hc[j] = h;
        yo[j] = h;
      }
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ix = x.id, iwi = w_ih.id, iwh = w_hh.id, ibi = b_ih.id, ibh = b_hh.id,
            io = out.id;
    node(out).backward = [g, ix, iwi, iwh, ibi, ibh, io, d, G, reverse,
                          gx = std::move(gx), sr = std::move(sr), sz = std::move(sz),
                          sn = std::move(sn), shn = std::move(shn),
                          hstate = std::move(hstate)] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *whh2 = g->nodes_[size_t(iwh)].value.data();
      std::vector<double> dgx(size_t(d.N * d.L * G), 0.0);
      double *gx_grad_store = dgx.data();
      std::vector<double> dh(size_t(d.N * d.H), 0.0);
      std::vector<double> dgates(size_t(d.N * G));
      double *gwh = g->grad_ptr(Tensor{g, iwh});
      double *gbi = g->grad_ptr(Tensor{g, ibi});
      double *gbh = g->grad_ptr(Tensor{g, ibh});

      for (int64_t step = d.L - 1; step >= 0; --step) {
        const int64_t l = reverse ? d.L - 1 - step : step;
        const double *hprev = hstate.data() + step * d.N * d.H;
        for (int64_t nrow = 0; nrow < d.N; ++nrow) {
          const int64_t base = (nrow * d.L + l) * d.H;
          const double *hp = hprev + nrow * d.H;
          double *dgr = dgates.data() + nrow * G;
          double *dhr = dh.data() + nrow * d.H;
          double *dgxr = gx_grad_store + (nrow * d.L + l) * G;
          for (int64_t j = 0; j < d.H; ++j) {
            const double dout = go[base + j] + dhr[j];
            const double r = sr[size_t(base + j)], z = sz[size_t(base + j)],
                         nn = sn[size_t(base + j)], hn = shn[size_t(base + j)];
            const double dz = dout * (hp[j] - nn);
            const double dn = dout * (1.0 - z);
            double dh_prev = dout * z;
            const double dn_pre = dn * (1.0 - nn * nn);
            const double dr = dn_pre * hn;
            const double dhn = dn_pre * r;
            const double dr_pre = dr * r * (1.0 - r);
            const double dz_pre = dz * z * (1.0 - z);
            dgr[j] = dr_pre;
            dgr[d.H + j] = dz_pre;
            dgr[2 * d.H + j] = dhn;
            dgxr[j] += dr_pre;
            dgxr[d.H + j] += dz_pre;
            dgxr[2 * d.H + j] += dn_pre;
            if (gbi) {
              gbi[j] += dr_pre;
              gbi[d.H + j] += dz_pre;
              gbi[2 * d.H + j] += dn_pre;
            }
            if (gbh) {
              gbh[j] += dr_pre;
              gbh[d.H + j] += dz_pre;
              gbh[2 * d.H + j] += dhn;
            }
            dhr[j] = dh_prev;  // part 1; GEMM part added below
          }
        }
        // dh_prev += dgates x w_hh^T; dw_hh += h_prev^T x dgates
        {
          MapC Dg(dgates.data(), d.N, G);
          MapC Wh(whh2, d.H, G);
          MapM Dh(dh.data(), d.N, d.H);
          Dh.noalias() += Dg * Wh.transpose();
          if (gwh) {
            MapC Hp(hprev, d.N, d.H);
            MapM Gwh(gwh, d.H, G);
            Gwh.noalias() += Hp.transpose() * Dg;
          }
        }
      }
      // input-side GEMMs
      if (double *gxp = g->grad_ptr(Tensor{g, ix})) {
        MapC Dgx(gx_grad_store, d.N * d.L, G);
        MapC Wi(g->nodes_[size_t(iwi)].value.data(), d.C, G);
        MapM Gx2(gxp, d.N * d.L, d.C);
        Gx2.noalias() += Dgx * Wi.transpose();
      }
      if (double *gwi = g->grad_ptr(Tensor{g, iwi})) {
        MapC X(g->nodes_[size_t(ix)].value.data(), d.N * d.L, d.C);
        MapC Dgx(gx_grad_store, d.N * d.L, G);
        MapM Gwi(gwi, d.C, G);
        Gwi.noalias() += X.transpose() * Dgx;
      }
    };
  }
  return out;
}

Tensor Graph::lstm_seq(Tensor x, Tensor w_ih, Tensor w_hh, Tensor b_ih, Tensor b_hh,
                       bool reverse) {
  check_same_graph(x);
  check_same_graph(w_ih);
  check_same_graph(w_hh);
  check_same_graph(b_ih);
  check_same_graph(b_hh);
  const SeqDims d = rnn_dims(x.shape(), w_ih.shape(), w_hh.shape(), 4);
  if (b_ih.numel() != 4 * d.H || b_hh.numel() != 4 * d.H)
    throw ShapeError("lstm bias size mismatch");
  const bool needs = node(x).needs_grad || node(w_ih).needs_grad ||
                     node(w_hh).needs_grad || node(b_ih).needs_grad ||
                     node(b_hh).needs_grad;
  Tensor out = make_node(Shape{d.N, d.L, d.H}, needs);

  const int64_t G = 4 * d.H;
  std::vector<double> gx(size_t(d.N * d.L * G));
  {
    MapC X(node(x).value.data(), d.N * d.L, d.C);
    MapC Wi(node(w_ih).value.data(), d.C, G);
    MapM Gx(gx.data(), d.N * d.L, G);
    Gx.noalias() = X * Wi;
  }
  const double *bi = node(b_ih).value.data();
  const double *bh = node(b_hh).value.data();
  const double *whh = node(w_hh).value.data();

  std::vector<double> si(size_t(d.N * d.L * d.H)), sf(si.size()), sg(si.size()),
      so(si.size());
  std::vector<double> hstate(size_t(d.N * (d.L + 1) * d.H), 0.0);
  std::vector<double> cstate(size_t(d.N * (d.L + 1) * d.H), 0.0);

  std::vector<double> gh(size_t(d.N * G));
  double *po = node(out).value.data();
  for (int64_t step = 0; step < d.L; ++step) {
    const int64_t l = reverse ? d.L - 1 - step : step;
    const double *hprev = hstate.data() + step * d.N * d.H;
    const double *cprev = cstate.data() + step * d.N * d.H;
    double *hcur = hstate.data() + (step + 1) * d.N * d.H;
    double *ccur = cstate.data() + (step + 1) * d.N * d.H;
    {
      MapC Hp(hprev, d.N, d.H);
      MapC Wh(whh, d.H, G);
      MapM Gh(gh.data(), d.N, G);
      Gh.noalias() = Hp * Wh;
    }
    for (int64_t nrow = 0; nrow < d.N; ++nrow) {
      const double *gxr = gx.data() + (nrow * d.L + l) * G;
      const double *ghr = gh.data() + nrow * G;
      const double *cp = cprev + nrow * d.H;
      double *hc = hcur + nrow * d.H;
      double *cc = ccur + nrow * d.H;
      double *yo = po + (nrow * d.L + l) * d.H;
      const int64_t base = (nrow * d.L + l) * d.H;
      for (int64_t j = 0; j < d.H; ++j) {
        const double pi = gxr[j] + bi[j] + ghr[j] + bh[j];
        const double pf = gxr[d.H + j] + bi[d.H + j] + ghr[d.H + j] + bh[d.H + j];
        const double pg = gxr[2 * d.H + j] + bi[2 * d.H + j] + ghr[2 * d.H + j] + bh[2 * d.H + j];
        const double pn = gxr[3 * d.H + j] + bi[3 * d.H + j] + ghr[3 * d.H + j] + bh[3 * d.H + j];
        const double ig = 1.0 / (1.0 + std::exp(-pi));
        const double fg = 1.0 / (1.0 + std::exp(-pf));
        const double gg = std::tanh(pg);
        const double og = 1.0 / (1.0 + std::exp(-pn));
        const double c = fg * cp[j] + ig * gg;
        const double h = og * std::tanh(c);
        si[size_t(base + j)] = ig;
        sf[size_t(base + j)] = fg;
        sg[size_t(base + j)] = gg;
        so[size_t(base + j)] = og;
        cc[j] = c;
        hc[j] = h;
        yo[j] = h;
      }
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ix = x.id, iwi = w_ih.id, iwh = w_hh.id, ibi = b_ih.id, ibh = b_hh.id,
            io = out.id;
    node(out).backward = [g, ix, iwi, iwh, ibi, ibh, io, d, G, reverse,
                          gx = std::move(gx), si = std::move(si), sf = std::move(sf),
                          sg = std::move(sg), so = std::move(so),
                          hstate = std::move(hstate), cstate = std::move(cstate)] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *whh2 = g->nodes_[size_t(iwh)].value.data();
      std::vector<double> dgx(size_t(d.N * d.L * G), 0.0);
      std::vector<double> dh(size_t(d.N * d.H), 0.0);
      std::vector<double> dc(size_t(d.N * d.H), 0.0);
      std::vector<double> dgates(size_t(d.N * G));
      double *gwh = g->grad_ptr(Tensor{g, iwh});
      double *gbi = g->grad_ptr(Tensor{g, ibi});
      double *gbh = g->grad_ptr(Tensor{g, ibh});

      for (int64_t step = d.L - 1; step >= 0; --step) {
        const int64_t l = reverse ? d.L - 1 - step : step;
        const double *hprev = hstate.data() + step * d.N * d.H;
        const double *cprev = cstate.data() + step * d.N * d.H;
        const double *ccur = cstate.data() + (step + 1) * d.N * d.H;
        (void)hprev;
        for (int64_t nrow = 0; nrow < d.N; ++nrow) {
          const int64_t base = (nrow * d.L + l) * d.H;
          const double *cp = cprev + nrow * d.H;
          const double *cc = ccur + nrow * d.H;
          double *dgr = dgates.data() + nrow * G;
          double *dhr = dh.data() + nrow * d.H;
          double *dcr = dc.data() + nrow * d.H;
          double *dgxr = dgx.data() + (nrow * d.L + l) * G;
          for (int64_t j = 0; j < d.H; ++j) {
            const double dout = go[base + j] + dhr[j];
            const double ig = si[size_t(base + j)], fg = sf[size_t(base + j)],
                         gg = sg[size_t(base + j)], og = so[size_t(base + j)];
            const double tc = std::tanh(cc[j]);
            const double do_ = dout * tc;
            double dcj = dcr[j] + dout * og * (1.0 - tc * tc);
            const double di = dcj * gg;
            const double dg = dcj * ig;
            const double df = dcj * cp[j];
            const double dc_prev = dcj * fg;
            const double di_pre = di * ig * (1.0 - ig);
            const double df_pre = df * fg * (1.0 - fg);
            const double dg_pre = dg * (1.0 - gg * gg);
            const double do_pre = do_ * og * (1.0 - og);
            dgr[j] = di_pre;
            dgr[d.H + j] = df_pre;
            dgr[2 * d.H + j] = dg_pre;
            dgr[3 * d.H + j] = do_pre;
            dgxr[j] += di_pre;
            dgxr[d.H + j] += df_pre;
            dgxr[2 * d.H + j] += dg_pre;
            dgxr[3 * d.H + j] += do_pre;
            if (gbi) {
              gbi[j] += di_pre;
              gbi[d.H + j] += df_pre;
              gbi[2 * d.H + j] += dg_pre;
              gbi[3 * d.H + j] += do_pre;
            }
            if (gbh) {
              gbh[j] += di_pre;
              gbh[d.H + j] += df_pre;
              gbh[2 * d.H + j] += dg_pre;
              gbh[3 * d.H + j] += do_pre;
            }
            dcr[j] = dc_prev;
            dhr[j] = 0.0;  // replaced by the GEMM below
          }
        }
        {
          MapC Dg(dgates.data(), d.N, G);
          MapC Wh(whh2, d.H, G);
          MapM Dh(dh.data(), d.N, d.H);
          Dh.noalias() += Dg * Wh.transpose();
          if (gwh) {
            MapC Hp(hstate.data() + step * d.N * d.H, d.N, d.H);
            MapM Gwh(gwh, d.H, G);
            Gwh.noalias() += Hp.transpose() * Dg;
          }
        }
      }
      if (double *gxp = g->grad_ptr(Tensor{g, ix})) {
        MapC Dgx(dgx.data(), d.N * d.L, G);
        MapC Wi(g->nodes_[size_t(iwi)].value.data(), d.C, G);
        MapM Gx2(gxp, d.N * d.L, d.C);
        Gx2.noalias() += Dgx * Wi.transpose();
      }
      if (double *gwi = g->grad_ptr(Tensor{g, iwi})) {
        MapC X(g->nodes_[size_t(ix)].value.data(), d.N * d.L, d.C);
        MapC Dgx(dgx.data(), d.N * d.L, G);
        MapM Gwi(gwi, d.C, G);
        Gwi.noalias() += X.transpose() * Dgx;
      }
    };
  }
  return out;
}

// ---- fused convolutions ----

Tensor Graph::conv_freq(Tensor x, Tensor w, Tensor b, int stride, int pad_lo,
                        int pad_hi) {
  check_same_graph(x);
  check_same_graph(w);
  check_same_graph(b);
  const Shape &sx = x.shape(), &sw = w.shape();
  if (sx.size() != 4) throw ShapeError("conv_freq input must be [B, T, F, C]");
  if (sw.size() != 3) throw ShapeError("conv_freq weight must be [K, C_in, C_out]");
  const int64_t B = sx[0], T = sx[1], F = sx[2], Cin = sx[3];
  const int64_t K = sw[0], Cout = sw[2];
  if (sw[1] != Cin) throw ShapeError("conv_freq channel mismatch");
  if (b.numel() != Cout) throw ShapeError("conv_freq bias mismatch");
  if (stride < 1 || pad_lo < 0 || pad_hi < 0) throw ShapeError("bad conv_freq geometry");
  const int64_t Fp = F + pad_lo + pad_hi;
  if (Fp < K) throw ShapeError("conv_freq kernel wider than padded input");
  const int64_t Fout = (Fp - K) / stride + 1;

  const bool needs = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  Tensor out = make_node(Shape{B, T, Fout, Cout}, needs);

  // im2col: [B*T*Fout, K*Cin]
  const int64_t rows = B * T * Fout, cols = K * Cin;
  std::vector<double> im(size_t(rows * cols), 0.0);
  const double *px = node(x).value.data();
  for (int64_t bt = 0; bt < B * T; ++bt) {
    const double *xf = px + bt * F * Cin;
    for (int64_t fo = 0; fo < Fout; ++fo) {
      double *row = im.data() + (bt * Fout + fo) * cols;
      const int64_t f0 = fo * stride - pad_lo;
      for (int64_t k = 0; k < K; ++k) {
        const int64_t f = f0 + k;
        if (f >= 0 && f < F)
          std::memcpy(row + k * Cin, xf + f * Cin, size_t(Cin) * sizeof(double));
      }
    }
  }
  {
    MapC Im(im.data(), rows, cols);
    MapC W(node(w).value.data(), cols, Cout);
    MapM Y(node(out).value.data(), rows, Cout);
    Y.noalias() = Im * W;
    const double *pb = node(b).value.data();
    double *py = node(out).value.data();
    for (int64_t rr = 0; rr < rows; ++rr)
      for (int64_t c = 0; c < Cout; ++c) py[rr * Cout + c] += pb[c];
  }

  if (needs) {
    Graph *g = this;
    int32_t ix = x.id, iw = w.id, ib = b.id, io = out.id;
    node(out).backward = [g, ix, iw, ib, io, B, T, F, Cin, K, Cout, stride, pad_lo,
                          Fout, rows, cols, im = std::move(im)] {
      const double *go = g->grad_ptr(Tensor{g, io});
      if (double *gb = g->grad_ptr(Tensor{g, ib})) {
        for (int64_t rr = 0; rr < rows; ++rr)
          for (int64_t c = 0; c < Cout; ++c) gb[c] += go[rr * Cout + c];
      }
      if (double *gw = g->grad_ptr(Tensor{g, iw})) {
        MapC Im(im.data(), rows, cols);
        MapC Gy(go, rows, Cout);
        MapM Gw(gw, cols, Cout);
        Gw.noalias() += Im.transpose() * Gy;
      }
      if (double *gx = g->grad_ptr(Tensor{g, ix})) {
        // dcols = dy x W^T, then col2im scatter
        std::vector<double> dim(size_t(rows * cols));
        {
          MapC Gy(go, rows, Cout);
          MapC W(g->nodes_[size_t(iw)].value.data(), cols, Cout);
          MapM Di(dim.data(), rows, cols);
          Di.noalias() = Gy * W.transpose();
        }
        for (int64_t bt = 0; bt < B * T; ++bt) {
          double *xf = gx + bt * F * Cin;
          for (int64_t fo = 0; fo < Fout; ++fo) {
            const double *row = dim.data() + (bt * Fout + fo) * cols;
            const int64_t f0 = fo * stride - pad_lo;
            for (int64_t k = 0; k < K; ++k) {
              const int64_t f = f0 + k;
              if (f >= 0 && f < F) {
                double *dst = xf + f * Cin;
                const double *src = row + k * Cin;
                for (int64_t c = 0; c < Cin; ++c) dst[c] += src[c];
              }
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor Graph::conv_time_depthwise(Tensor x, Tensor w, Tensor b, bool causal) {
  check_same_graph(x);
  check_same_graph(w);
  check_same_graph(b);
  const Shape &sx = x.shape(), &sw = w.shape();
  if (sx.size() != 4) throw ShapeError("conv_time input must be [B, T, F, C]");
  if (sw.size() != 2) throw ShapeError("depthwise weight must be [K, C]");
  const int64_t B = sx[0], T = sx[1], F = sx[2], C = sx[3];
  const int64_t K = sw[0];
  if (sw[1] != C || b.numel() != C) throw ShapeError("depthwise channel mismatch");
  const int64_t pad_lo = causal ? K - 1 : (K - 1) / 2;

  const bool needs = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  Tensor out = make_node(sx, needs);

  const double *px = node(x).value.data();
  const double *pw = node(w).value.data();
  const double *pb = node(b).value.data();
  double *py = node(out).value.data();
  const int64_t FC = F * C;
  for (int64_t bb = 0; bb < B; ++bb) {
    const double *xb = px + bb * T * FC;
    double *yb = py + bb * T * FC;
    for (int64_t t = 0; t < T; ++t) {
      double *yt = yb + t * FC;
      for (int64_t i = 0; i < FC; ++i) yt[i] = pb[i % C];
      for (int64_t k = 0; k < K; ++k) {
        const int64_t tin = t + k - pad_lo;
        if (tin < 0 || tin >= T) continue;
        const double *xt = xb + tin * FC;
        const double *wk = pw + k * C;
        for (int64_t f = 0; f < F; ++f)
          for (int64_t c = 0; c < C; ++c) yt[f * C + c] += wk[c] * xt[f * C + c];
      }
    }
  }

  if (needs) {
    Graph *g = this;
    int32_t ix = x.id, iw = w.id, ib = b.id, io = out.id;
    node(out).backward = [g, ix, iw, ib, io, B, T, F, C, K, pad_lo, FC] {
      const double *go = g->grad_ptr(Tensor{g, io});
      const double *px2 = g->nodes_[size_t(ix)].value.data();
      const double *pw2 = g->nodes_[size_t(iw)].value.data();
      double *gx = g->grad_ptr(Tensor{g, ix});
      double *gw = g->grad_ptr(Tensor{g, iw});
      double *gb = g->grad_ptr(Tensor{g, ib});
      if (gb) {
        const int64_t n = B * T * FC;
        for (int64_t i = 0; i < n; ++i) gb[i % C] += go[i];
      }
      for (int64_t bb = 0; bb < B; ++bb) {
        const double *gyb = go + bb * T * FC;
        const double *xb = px2 + bb * T * FC;
        double *gxb = gx ? gx + bb * T * FC : nullptr;
        for (int64_t t = 0; t < T; ++t) {
          const double *gyt = gyb + t * FC;
          for (int64_t k = 0; k < K; ++k) {
            const int64_t tin = t + k - pad_lo;
            if (tin < 0 || tin >= T) continue;
            const double *wk = pw2 + k * C;
            if (gxb) {
              double *gxt = gxb + tin * FC;
              for (int64_t f = 0; f < F; ++f)
                for (int64_t c = 0; c < C; ++c)
                  gxt[f * C + c] += wk[c] * gyt[f * C + c];
            }
            if (gw) {
              const double *xt = xb + tin * FC;
              double *gwk = gw + k * C;
              for (int64_t f = 0; f < F; ++f)
                for (int64_t c = 0; c < C; ++c)
                  gwk[c] += xt[f * C + c] * gyt[f * C + c];
            }
          }
        }
      }
    };
  }
  return out;
}

// ---- episode ----

void Graph::backward(Tensor loss) {
  check_same_graph(loss);
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss");
  const double lv = node(loss).value[0];
  if (!std::isfinite(lv)) throw NumericalError("non-finite loss value");
  if (!node(loss).needs_grad)
    throw NumericalError("loss does not depend on any parameter");

  // pre-allocate internal grad buffers (params accumulate externally)
  for (Node &n : nodes_) {
    if (n.needs_grad && !n.ext_grad) n.grad.assign(size_t(n.numel), 0.0);
  }
  node(loss).grad[0] = 1.0;

  for (int64_t i = int64_t(nodes_.size()) - 1; i >= 0; --i) {
    Node &n = nodes_[size_t(i)];
    if (n.needs_grad && n.backward) n.backward();
  }

  for (const Node &n : nodes_) {
    if (!n.needs_grad || !n.ext_grad) continue;
    for (int64_t i = 0; i < n.numel; ++i)
      if (!std::isfinite(n.ext_grad[i]))
        throw NumericalError("non-finite parameter gradient");
  }
}

double max_rel_err(const std::vector<double> &analytic,
                   const std::vector<double> &numeric) {
  if (analytic.size() != numeric.size())
    throw ShapeError("gradient size mismatch in max_rel_err");
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace sesw::nn
