#pragma once

#include <vector>

#include "seattn/autodiff.hpp"
#include "seattn/tensor.hpp"

namespace seattn::ops {

// ---- elementwise (broadcasting follows trailing-dimension alignment) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor pow_scalar(const Tensor& x, double p);

// ---- reductions ----
Tensor sum(const Tensor& x);                                        // scalar
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdims);
Tensor mean(const Tensor& x);                                       // scalar
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims);

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
// Adjoint of slice: place x into a zero tensor of extent `full` along axis.
Tensor embed_slice(const Tensor& x, int axis, int64_t start, int64_t full);
Tensor transpose2d(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<int>& dims);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- convolution (cross-correlation semantics, zero padding) ----
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding);
// Adjoints, exposed because they are differentiable primitives in their own
// right (the gradient-penalty path runs backward through them).
Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int padding,
                         int64_t in_h, int64_t in_w);
Tensor conv2d_grad_weight(const Tensor& x, const Tensor& gy, int stride, int padding,
                          int64_t kernel);

// ---- spatial resampling ----
Tensor upsample_nearest2x(const Tensor& x);
Tensor downsample_avg2x(const Tensor& x);

enum class PadMode { Zero, Replicate };
// Pads the two trailing (spatial) dims of an NCHW tensor by `pad` on each side.
Tensor pad2d(const Tensor& x, int pad, PadMode mode);

// ---- softmax (max-subtracted), reduced along `axis` ----
Tensor softmax(const Tensor& x, int axis);

// ---- lookup ----
// weight: (V, E); ids: flat index list. Result: (ids.size(), E).
// Backward is a raw scatter-add; create_graph through it is a hard error.
Tensor embedding(const Tensor& weight, const std::vector<int64_t>& ids);

// ---- conversion ----
Tensor to_dtype(const Tensor& x, DType dt);

// ---- composite helpers (built from primitives, fully differentiable) ----
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x:(N,I) w:(I,O) b:(O)
Tensor sum_rows_l2norm(const Tensor& x, double eps = 0.0);  // (N,D) -> (N,) row L2 norms

}  // namespace seattn::ops
