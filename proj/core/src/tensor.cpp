#include "seattn/tensor.hpp"

#include <atomic>
#include <cmath>

#include "seattn/autodiff.hpp"

namespace seattn {

namespace {
std::atomic<bool> g_finite_checks{true};

std::shared_ptr<detail::TensorImpl> make_impl(const Shape& shape, DType dt) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->dtype = dt;
  const auto n = static_cast<size_t>(impl->numel());
  if (dt == DType::Float32)
    impl->f32.assign(n, 0.0f);
  else
    impl->f64.assign(n, 0.0);
  return impl;
}
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_checks.load()) return;
  if (t.dtype() == DType::Float32) {
    for (float v : t.data<float>())
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  } else {
    for (double v : t.data<double>())
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

Tensor Tensor::zeros(const Shape& shape, DType dt, bool requires_grad) {
  Tensor t = wrap(make_impl(shape, dt));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, DType dt) {
  Tensor t = wrap(make_impl(shape, dt));
  if (dt == DType::Float32)
    for (auto& v : t.impl_->f32) v = static_cast<float>(value);
  else
    for (auto& v : t.impl_->f64) v = value;
  return t;
}

Tensor Tensor::ones(const Shape& shape, DType dt) { return full(shape, 1.0, dt); }

Tensor Tensor::scalar(double value, DType dt) { return full(Shape{}, value, dt); }

Tensor Tensor::from_data(const Shape& shape, const std::vector<double>& values, DType dt) {
  if (static_cast<int64_t>(values.size()) != numel_of(shape))
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  Tensor t = wrap(make_impl(shape, dt));
  if (dt == DType::Float32)
    for (size_t i = 0; i < values.size(); ++i) t.impl_->f32[i] = static_cast<float>(values[i]);
  else
    t.impl_->f64 = values;
  return t;
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, DType dt, double stddev) {
  Tensor t = wrap(make_impl(shape, dt));
  const int64_t n = t.numel();
  if (dt == DType::Float32)
    for (int64_t i = 0; i < n; ++i) t.impl_->f32[i] = static_cast<float>(rng.normal() * stddev);
  else
    for (int64_t i = 0; i < n; ++i) t.impl_->f64[i] = rng.normal() * stddev;
  return t;
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi, DType dt) {
  Tensor t = wrap(make_impl(shape, dt));
  const int64_t n = t.numel();
  if (dt == DType::Float32)
    for (int64_t i = 0; i < n; ++i) t.impl_->f32[i] = static_cast<float>(rng.uniform(lo, hi));
  else
    for (int64_t i = 0; i < n; ++i) t.impl_->f64[i] = rng.uniform(lo, hi);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
DType Tensor::dtype() const { return impl_->dtype; }
int64_t Tensor::numel() const { return impl_->numel(); }
size_t Tensor::rank() const { return impl_->shape.size(); }

int64_t Tensor::dim(int i) const {
  if (i < 0) i += static_cast<int>(impl_->shape.size());
  return impl_->shape.at(static_cast<size_t>(i));
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && impl_->grad_fn)
    throw ContractError("set_requires_grad: cannot mark a non-leaf tensor; detach first");
  impl_->requires_grad = v;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return Tensor();
  return wrap(impl_->grad);
}

void Tensor::zero_grad() { impl_->grad.reset(); }

bool Tensor::has_grad_fn() const { return impl_->grad_fn != nullptr; }
std::shared_ptr<Node> Tensor::grad_fn() const { return impl_->grad_fn; }

double Tensor::at(int64_t i) const {
  return impl_->dtype == DType::Float32 ? static_cast<double>(impl_->f32[static_cast<size_t>(i)])
                                        : impl_->f64[static_cast<size_t>(i)];
}

void Tensor::set(int64_t i, double v) {
  if (impl_->dtype == DType::Float32)
    impl_->f32[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    impl_->f64[static_cast<size_t>(i)] = v;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = at(static_cast<int64_t>(i));
  return out;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->f32 = impl_->f32;  // value copy keeps detached views immune to later updates
  impl->f64 = impl_->f64;
  return wrap(impl);
}

Tensor Tensor::clone_data() const { return detach(); }

Tensor Tensor::to_dtype_copy(DType dt) const {
  Tensor t = wrap(make_impl(impl_->shape, dt));
  const int64_t n = numel();
  for (int64_t i = 0; i < n; ++i) t.set(i, at(i));
  return t;
}

}  // namespace seattn
