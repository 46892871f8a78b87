// Copyright 2026 sesw authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <new>
#include <string>
#include <vector>

#include "sesw/errors.hpp"

namespace sesw::nn {

using Shape = std::vector<int64_t>;

/// std::allocator whose no-argument construct is a no-op, so resize() on a
/// vector of doubles allocates without the zero-fill pass. Explicit fills
/// (assign(n, v), fill constructors) behave normally.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U, typename... Args>
  void construct(U *p, Args &&...args) {
    if constexpr (sizeof...(Args) > 0)
      ::new (static_cast<void *>(p)) U(std::forward<Args>(args)...);
    else
      ::new (static_cast<void *>(p)) U;
  }
};

/// Tape value buffer: contents are uninitialized after resize(); ops that
/// need zeroed output must ask make_node for it.
using ValueBuf = std::vector<double, default_init_allocator<double>>;

int64_t shape_numel(const Shape &s);
std::string shape_str(const Shape &s);

/// A named, persistent weight buffer. Lives outside any Graph; gradients
/// accumulate here across a backward pass and are consumed by the optimizer.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)) {
    value.assign(size_t(shape_numel(shape)), 0.0);
    grad.assign(value.size(), 0.0);
  }
  int64_t numel() const { return int64_t(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Graph;

/// Lightweight handle to a node on a Graph's tape.
struct Tensor {
  Graph *g = nullptr;
  int32_t id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Shape &shape() const;
  int64_t numel() const;
  int64_t dim(int axis) const;
  int rank() const;
  const double *data() const;
  double *mutable_data();
};

/// Reverse-mode automatic differentiation over dense row-major double
/// tensors. Ops evaluate eagerly; backward() replays the tape in reverse.
/// One Graph instance is one forward/backward episode (single-threaded).
class Graph {
 public:
  Graph() = default;
  Graph(const Graph &) = delete;
  Graph &operator=(const Graph &) = delete;

  // ---- leaves ----
  Tensor input(Shape shape, std::vector<double> data);   // constant, no grad
  Tensor input(Shape shape, const double *data);          // copies
  Tensor zeros(Shape shape);
  Tensor full(Shape shape, double fill);
  Tensor param(Param &p);  // leaf whose gradient accumulates into p.grad

  // ---- shape / movement ----
  Tensor reshape(Tensor t, Shape shape);
  Tensor permute(Tensor t, std::vector<int> axes);
  Tensor slice(Tensor t, int axis, int64_t start, int64_t len);
  Tensor pad_axis(Tensor t, int axis, int64_t before, int64_t after);
  Tensor concat(const std::vector<Tensor> &ts, int axis);
  Tensor flip(Tensor t, int axis);
  /// Inserts (stride-1) zeros between neighbors along axis:
  /// new length = (len-1)*stride + 1.
  Tensor dilate_axis(Tensor t, int axis, int64_t stride);

  // ---- arithmetic ----
  /// b broadcasts onto a: rank(b) <= rank(a), right-aligned, every aligned
  /// dim of b equal to a's or 1.
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);
  Tensor scale(Tensor t, double c);
  Tensor add_scalar(Tensor t, double c);
  /// max(t, floor)^p with zero gradient where the clamp is active.
  Tensor pow_clamped(Tensor t, double p, double floor);
  Tensor sigmoid(Tensor t);
  Tensor tanh_(Tensor t);
  Tensor silu(Tensor t);

  /// a: [..., M, K]; b: [K, N] or [..., K, N] with identical leading dims.
  Tensor matmul(Tensor a, Tensor b);

  Tensor softmax_lastdim(Tensor t);
  /// Normalizes over the last dim; gamma/beta shaped [last_dim].
  Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps = 1e-5);
  Tensor sum_all(Tensor t);   // -> scalar, shape {1}
  Tensor mean_all(Tensor t);  // -> scalar, shape {1}

  /// Gathers rows of a [rows, width] table: output [indices.size(), width].
  Tensor embedding_rows(Tensor table, std::vector<int64_t> indices);

  // ---- fused sequence / convolution kernels ----
  /// Gated recurrent unit over x [N, L, C]; weights w_ih [C, 3H],
  /// w_hh [H, 3H], biases [3H] with gate order (r, z, n). reverse scans the
  /// sequence right-to-left (output stays aligned with the input).
  Tensor gru_seq(Tensor x, Tensor w_ih, Tensor w_hh, Tensor b_ih, Tensor b_hh,
                 bool reverse = false);
  /// LSTM over x [N, L, C]; w_ih [C, 4H], w_hh [H, 4H], biases [4H],
  /// gate order (i, f, g, o).
  Tensor lstm_seq(Tensor x, Tensor w_ih, Tensor w_hh, Tensor b_ih, Tensor b_hh,
                  bool reverse = false);
  /// 1-D convolution along the F axis of x [B, T, F, C_in]; w [K, C_in,
  /// C_out], b [C_out]. Output F' = (F + pad_lo + pad_hi - K)/stride + 1.
  Tensor conv_freq(Tensor x, Tensor w, Tensor b, int stride, int pad_lo,
                   int pad_hi);
  /// Depthwise 1-D convolution along the T axis of x [B, T, F, C];
  /// w [K, C], b [C]; stride 1; causal pads (K-1, 0), else ((K-1)/2, K/2).
  Tensor conv_time_depthwise(Tensor x, Tensor w, Tensor b, bool causal);

  // ---- episode control ----
  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. loss must be
  /// scalar. Non-finite values anywhere raise NumericalError.
  void backward(Tensor loss);

  size_t node_count() const { return nodes_.size(); }

 private:
  friend struct Tensor;

  struct Node {
    Shape shape;
    int64_t numel = 0;
    ValueBuf value;
    std::vector<double> grad;      // allocated lazily when needs_grad
    double *ext_grad = nullptr;    // param leaves accumulate here instead
    bool needs_grad = false;
    std::function<void()> backward;  // empty for leaves
  };

  /// zeroed=false skips the zero-fill of the value buffer; only ops that
  /// overwrite every output element may pass it.
  Tensor make_node(Shape shape, bool needs_grad, bool zeroed = true);
  Node &node(Tensor t) { return nodes_[size_t(t.id)]; }
  const Node &node(Tensor t) const { return nodes_[size_t(t.id)]; }
  double *grad_ptr(Tensor t);
  void check_same_graph(Tensor t) const;

  std::vector<Node> nodes_;
};

/// Elementwise check helpers shared by tests and grad_check.
double max_rel_err(const std::vector<double> &analytic,
                   const std::vector<double> &numeric);

}  // namespace sesw::nn
