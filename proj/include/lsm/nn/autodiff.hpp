#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <type_traits>
#include <span>
#include <vector>

namespace lsm::nn {

inline constexpr std::size_t kBufferAlignment = 64;

/// Allocator for node buffers: 64-byte aligned so vectorized kernels take the
/// same path on every run, and doubles are left uninitialized on resize since
/// the op that creates a buffer writes all of it.
template <class T>
struct DefaultInitAllocator {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  template <class U>
  bool operator==(const DefaultInitAllocator<U>&) const noexcept {
    return true;
  }
};
using Buffer = std::vector<double, DefaultInitAllocator<double>>;

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over row-major 2-D tensors. Nodes are appended in
/// evaluation order; backward() walks them in reverse, so gradient
/// accumulation order is fixed for a given graph.
class Tape {
public:
  /// A tape built with record=false only evaluates (no gradient closures).
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
  /// Leaf whose value aliases `values` (must outlive the tape).
  Var constant_view(std::size_t rows, std::size_t cols, std::span<const double> values);
  /// Leaf that receives a gradient.
  Var parameter(std::size_t rows, std::size_t cols, std::span<const double> values);

  std::size_t rows(Var v) const { return nodes_[v.id].rows; }
  std::size_t cols(Var v) const { return nodes_[v.id].cols; }
  std::span<const double> value(Var v) const;
  double scalar(Var v) const { return value(v)[0]; }
  /// Empty until backward() has reached the node.
  std::span<const double> grad(Var v) const { return nodes_[v.id].grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 node and back-propagates.
  void backward(Var out);

  // Internal interface used by the op functions.
  Var push(std::size_t rows, std::size_t cols, Buffer value, std::vector<std::size_t> parents);
  void set_backprop(Var v, std::function<void(Tape&)> fn);
  Buffer& grad_buffer(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Buffer value;
    const double* view = nullptr;
    Buffer grad;
    bool needs_grad = false;
    std::function<void(Tape&)> backprop;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// Matrix products (Eigen kernels). trans_b computes a * b^T.
Var matmul(Tape& t, Var a, Var b, bool trans_b = false);

Var add(Tape& t, Var a, Var b);
/// a [r,c] + bias [1,c] broadcast over rows.
Var add_row(Tape& t, Var a, Var bias);
/// a [r,c] * gain [1,c] broadcast over rows.
Var mul_row(Tape& t, Var a, Var gain);
Var scale(Tape& t, Var a, double s);

Var relu(Tape& t, Var a);
/// Exact (erf) GELU.
Var gelu(Tape& t, Var a);

/// out[i] = a[index[i]], or 0 where index[i] < 0. Backward scatters.
Var gather(Tape& t, Var a, std::size_t rows, std::size_t cols, std::vector<long> index);

Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t count);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, Var top, Var bottom);
Var row(Tape& t, Var a, std::size_t r);

/// [r,c] -> [1,c] column means.
Var mean_rows(Tape& t, Var a);
/// Per-row (x - mean) / sqrt(var + eps), population variance.
Var layernorm_rows(Tape& t, Var a, double eps = 1e-5);
Var softmax_rows(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);

/// Binary cross-entropy of sigmoid(logit) against `label`, computed stably
/// from the 1x1 logit.
Var bce_with_logit(Tape& t, Var logit, double label);

} // namespace lsm::nn
