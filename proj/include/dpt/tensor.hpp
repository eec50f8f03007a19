#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <vector>

#include "dpt/common.hpp"

namespace dpt {

struct TensorImpl;

// Allocator that over-aligns every buffer to a fixed boundary. Tensor math is
// backed by SIMD kernels whose instruction sequence (and therefore floating
// point summation order) depends on pointer alignment; pinning the alignment
// makes results reproducible run-to-run regardless of heap layout.
template <typename T, std::size_t Alignment>
struct AlignedAllocator {
  using value_type = T;
  static_assert(Alignment >= alignof(T) && (Alignment & (Alignment - 1)) == 0,
                "Alignment must be a power of two covering alignof(T)");

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) noexcept {}

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Alignment));
  }

  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
  friend bool operator!=(const AlignedAllocator&, const AlignedAllocator&) { return false; }
};

// Backing storage for tensor data and gradients: 64-byte aligned doubles.
using DataVec = std::vector<double, AlignedAllocator<double, 64>>;

// One recorded operation on the tape. Construction order (seq) is a valid
// topological order because an op's inputs always exist before its output.
struct Node {
  const char* op = "?";
  uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;   // kept alive for backward
  std::function<void(const TensorImpl& out)> backward;  // accumulates into input grads
};

struct TensorImpl {
  Shape shape;
  DataVec data;
  DataVec grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // creator op; null for leaves
};

// Dense fp64 row-major tensor with reverse-mode autodiff. Copies share the
// underlying impl (shallow, PyTorch-style handles).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return from_data({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  size_t dim() const { return shape().size(); }
  size_t numel() const;
  size_t size(size_t axis) const;

  double* data();
  const double* data() const;
  DataVec& vec();
  const DataVec& vec() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  // Gradient accumulated by backward(); empty tensor if none yet.
  Tensor grad() const;
  double* grad_data();
  void zero_grad();

  double item() const;                     // scalar tensors only
  double at(std::initializer_list<size_t> idx) const;  // test convenience

  Tensor detach() const;  // same data buffer, no tape history
  Tensor clone() const;   // deep copy, no tape history

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// --- autograd driver ---------------------------------------------------------

// Reverse replay from a scalar loss. Gradients of leaf tensors with
// requires_grad accumulate (+=) across calls; intermediate gradients are
// cleared at the start of each call.
void backward(const Tensor& loss);

bool grad_enabled();

// RAII scope that disables tape recording (evaluation-mode forwards).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- helpers for op implementations ------------------------------------------

namespace detail {
bool tape_needed(std::initializer_list<const Tensor*> inputs);
void attach_node(Tensor& out, const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                 std::function<void(const TensorImpl&)> backward_fn);
DataVec& ensure_grad(TensorImpl& t);
}  // namespace detail

}  // namespace dpt
