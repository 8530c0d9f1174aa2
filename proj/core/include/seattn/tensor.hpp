#pragma once

#include <memory>
#include <span>
#include <vector>

#include "seattn/common.hpp"
#include "seattn/rng.hpp"

namespace seattn {

class Node;

namespace detail {

struct TensorImpl {
  Shape shape;
  DType dtype = DType::Float32;
  std::vector<float> f32;
  std::vector<double> f64;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;     // same shape, set by backward()
  std::shared_ptr<Node> grad_fn;        // null for leaves

  int64_t numel() const { return numel_of(shape); }
};

}  // namespace detail

// Dense row-major tensor handle with reverse-mode autodiff participation.
// Copies are shallow (shared storage); taped tensors are treated as immutable.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dt = DType::Float32, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, DType dt = DType::Float32);
  static Tensor ones(const Shape& shape, DType dt = DType::Float32);
  static Tensor from_data(const Shape& shape, const std::vector<double>& values, DType dt = DType::Float32);
  static Tensor randn(const Shape& shape, Rng& rng, DType dt = DType::Float32, double stddev = 1.0);
  static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi, DType dt = DType::Float32);
  static Tensor scalar(double value, DType dt = DType::Float32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  DType dtype() const;
  int64_t numel() const;
  int64_t dim(int i) const;
  size_t rank() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  Tensor grad() const;  // undefined Tensor when no grad accumulated
  void zero_grad();
  bool has_grad_fn() const;
  std::shared_ptr<Node> grad_fn() const;

  // Typed element access. T must match dtype.
  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  // Value access regardless of dtype (reads/writes with conversion).
  double at(int64_t flat_index) const;
  void set(int64_t flat_index, double v);
  double item() const;  // numel()==1 only

  std::vector<double> to_vector() const;

  // New handle detached from the tape (shares storage).
  Tensor detach() const;
  // Deep copy of the data (leaf, no tape).
  Tensor clone_data() const;
  Tensor to_dtype_copy(DType dt) const;  // untaped conversion copy

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Throws NumericError naming `op` if any element of t is NaN/Inf.
void check_finite(const Tensor& t, const char* op);
// Global toggle for the per-op finite checks (on by default).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <typename T>
std::span<T> Tensor::data() {
  if constexpr (std::is_same_v<T, float>) {
    if (impl_->dtype != DType::Float32) throw ContractError("Tensor::data<float> on f64 tensor");
    return std::span<T>(impl_->f32.data(), impl_->f32.size());
  } else {
    if (impl_->dtype != DType::Float64) throw ContractError("Tensor::data<double> on f32 tensor");
    return std::span<T>(impl_->f64.data(), impl_->f64.size());
  }
}

template <typename T>
std::span<const T> Tensor::data() const {
  if constexpr (std::is_same_v<T, float>) {
    if (impl_->dtype != DType::Float32) throw ContractError("Tensor::data<float> on f64 tensor");
    return std::span<const T>(impl_->f32.data(), impl_->f32.size());
  } else {
    if (impl_->dtype != DType::Float64) throw ContractError("Tensor::data<double> on f64 tensor");
    return std::span<const T>(impl_->f64.data(), impl_->f64.size());
  }
}

}  // namespace seattn
