#include <Eigen/Core>
#include <vector>

#include "seattn/ops.hpp"

// conv2d and its two adjoints, all first-class differentiable primitives.
// The three form a closed family under differentiation (conv2d is bilinear in
// x and w), which is what gives the gradient penalty its second-order path:
//   d conv2d            -> conv2d_grad_input, conv2d_grad_weight
//   d conv2d_grad_input -> conv2d,            conv2d_grad_weight
//   d conv2d_grad_weight-> conv2d_grad_input, conv2d

namespace seattn::ops {

namespace {

struct ConvGeom {
  int64_t n, c, h, w;   // input
  int64_t o, k;         // kernel
  int64_t oh, ow;       // output
  int stride, pad;
};

ConvGeom conv_geometry(const Shape& xs, const Shape& ws, int stride, int pad, const char* op) {
  if (xs.size() != 4) throw ShapeError(std::string(op) + ": input must be NCHW, got " + shape_str(xs));
  if (ws.size() != 4) throw ShapeError(std::string(op) + ": weight must be OCKK, got " + shape_str(ws));
  if (ws[2] != ws[3]) throw ConfigError(std::string(op) + ": non-square kernel " + shape_str(ws));
  ConvGeom g;
  g.n = xs[0];
  g.c = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.o = ws[0];
  g.k = ws[2];
  g.stride = stride;
  g.pad = pad;
  if (ws[1] != g.c)
    throw ShapeError(std::string(op) + ": channel mismatch, input " + shape_str(xs) + " weight " +
                     shape_str(ws));
  if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ConfigError(std::string(op) + ": negative padding");
  if (pad > 0 && g.k % 2 == 0)
    throw ConfigError(std::string(op) + ": even kernel with nonzero padding");
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k)
    throw ConfigError(std::string(op) + ": spatial extent smaller than kernel for " + shape_str(xs));
  if ((g.h + 2 * pad - g.k) % stride != 0 || (g.w + 2 * pad - g.k) % stride != 0)
    throw ConfigError(std::string(op) + ": non-integral output extent for input " + shape_str(xs) +
                      " kernel " + std::to_string(g.k) + " stride " + std::to_string(stride) +
                      " pad " + std::to_string(pad));
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Scatter one sample (C,H,W) into column matrix (C*K*K, OH*OW).
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t ohow = g.oh * g.ow;
  std::fill(cols, cols + ckk * ohow, T(0));
  for (int64_t c = 0; c < g.c; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.k; ++ki)
      for (int64_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * ohow;
        for (int64_t oi = 0; oi < g.oh; ++oi) {
          const int64_t si = oi * g.stride + ki - g.pad;
          if (si < 0 || si >= g.h) continue;
          const T* xr = xc + si * g.w;
          T* rr = row + oi * g.ow;
          for (int64_t oj = 0; oj < g.ow; ++oj) {
            const int64_t sj = oj * g.stride + kj - g.pad;
            if (sj >= 0 && sj < g.w) rr[oj] = xr[sj];
          }
        }
      }
  }
}

// Adjoint of im2col: accumulate columns back into the (C,H,W) sample.
template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
  const int64_t ohow = g.oh * g.ow;
  for (int64_t c = 0; c < g.c; ++c) {
    T* xc = x + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.k; ++ki)
      for (int64_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * ohow;
        for (int64_t oi = 0; oi < g.oh; ++oi) {
          const int64_t si = oi * g.stride + ki - g.pad;
          if (si < 0 || si >= g.h) continue;
          T* xr = xc + si * g.w;
          const T* rr = row + oi * g.ow;
          for (int64_t oj = 0; oj < g.ow; ++oj) {
            const int64_t sj = oj * g.stride + kj - g.pad;
            if (sj >= 0 && sj < g.w) xr[sj] += rr[oj];
          }
        }
      }
  }
}

template <typename T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

template <typename T>
void conv2d_kernel(const Tensor& x, const Tensor& w, Tensor& out, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t ohow = g.oh * g.ow;
  auto& cols = scratch<T>();
  cols.resize(static_cast<size_t>(ckk * ohow));
  const T* px = x.data<T>().data();
  const T* pw = w.data<T>().data();
  T* po = out.data<T>().data();
  Eigen::Map<const Mat<T>> W(pw, g.o, ckk);
  for (int64_t s = 0; s < g.n; ++s) {
    im2col<T>(px + s * g.c * g.h * g.w, g, cols.data());
    Eigen::Map<const Mat<T>> C(cols.data(), ckk, ohow);
    Eigen::Map<Mat<T>> O(po + s * g.o * ohow, g.o, ohow);
    O.noalias() = W * C;
  }
}

template <typename T>
void conv2d_grad_input_kernel(const Tensor& gy, const Tensor& w, Tensor& gx, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t ohow = g.oh * g.ow;
  auto& cols = scratch<T>();
  cols.resize(static_cast<size_t>(ckk * ohow));
  const T* pg = gy.data<T>().data();
  const T* pw = w.data<T>().data();
  T* px = gx.data<T>().data();
  Eigen::Map<const Mat<T>> W(pw, g.o, ckk);
  for (int64_t s = 0; s < g.n; ++s) {
    Eigen::Map<const Mat<T>> GY(pg + s * g.o * ohow, g.o, ohow);
    Eigen::Map<Mat<T>> C(cols.data(), ckk, ohow);
    C.noalias() = W.transpose() * GY;
    col2im_add<T>(cols.data(), g, px + s * g.c * g.h * g.w);
  }
}

template <typename T>
void conv2d_grad_weight_kernel(const Tensor& x, const Tensor& gy, Tensor& gw, const ConvGeom& g) {
  const int64_t ckk = g.c * g.k * g.k;
  const int64_t ohow = g.oh * g.ow;
  auto& cols = scratch<T>();
  cols.resize(static_cast<size_t>(ckk * ohow));
  const T* px = x.data<T>().data();
  const T* pg = gy.data<T>().data();
  T* pw = gw.data<T>().data();
  Eigen::Map<Mat<T>> GW(pw, g.o, ckk);
  for (int64_t s = 0; s < g.n; ++s) {
    im2col<T>(px + s * g.c * g.h * g.w, g, cols.data());
    Eigen::Map<const Mat<T>> C(cols.data(), ckk, ohow);
    Eigen::Map<const Mat<T>> GY(pg + s * g.o * ohow, g.o, ohow);
    GW.noalias() += GY * C.transpose();
  }
}

struct Conv2dNode final : Node {
  int stride, pad;
  Conv2dNode(int s, int p) : Node("conv2d"), stride(s), pad(p) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Tensor& x = inputs()[0];
    const Tensor& w = inputs()[1];
    Tensor gx = conv2d_grad_input(gy, w, stride, pad, x.shape()[2], x.shape()[3]);
    Tensor gw = conv2d_grad_weight(x, gy, stride, pad, w.shape()[2]);
    return {gx, gw};
  }
};

struct Conv2dGradInputNode final : Node {
  int stride, pad;
  Conv2dGradInputNode(int s, int p) : Node("conv2d_grad_input"), stride(s), pad(p) {}
  std::vector<Tensor> backward(const Tensor& ggx) override {
    const Tensor& gy = inputs()[0];
    const Tensor& w = inputs()[1];
    Tensor g_gy = conv2d(ggx, w, stride, pad);
    Tensor g_w = conv2d_grad_weight(ggx, gy, stride, pad, w.shape()[2]);
    return {g_gy, g_w};
  }
};

struct Conv2dGradWeightNode final : Node {
  int stride, pad;
  Conv2dGradWeightNode(int s, int p) : Node("conv2d_grad_weight"), stride(s), pad(p) {}
  std::vector<Tensor> backward(const Tensor& ggw) override {
    const Tensor& x = inputs()[0];
    const Tensor& gy = inputs()[1];
    Tensor g_x = conv2d_grad_input(gy, ggw, stride, pad, x.shape()[2], x.shape()[3]);
    Tensor g_gy = conv2d(x, ggw, stride, pad);
    return {g_x, g_gy};
  }
};

bool tape_wanted(const Tensor& a, const Tensor& b) {
  return grad_recording() && (a.requires_grad() || b.requires_grad());
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int padding) {
  if (x.dtype() != w.dtype()) throw ContractError("conv2d: dtype mismatch");
  ConvGeom g = conv_geometry(x.shape(), w.shape(), stride, padding, "conv2d");
  Tensor out = Tensor::zeros({g.n, g.o, g.oh, g.ow}, x.dtype());
  if (x.dtype() == DType::Float32)
    conv2d_kernel<float>(x, w, out, g);
  else
    conv2d_kernel<double>(x, w, out, g);
  check_finite(out, "conv2d");
  if (tape_wanted(x, w))
    detail::attach_node(out, std::make_shared<Conv2dNode>(stride, padding), {x, w});
  return out;
}

Tensor conv2d_grad_input(const Tensor& gy, const Tensor& w, int stride, int padding,
                         int64_t in_h, int64_t in_w) {
  if (gy.dtype() != w.dtype()) throw ContractError("conv2d_grad_input: dtype mismatch");
  Shape xs{gy.shape()[0], w.shape()[1], in_h, in_w};
  ConvGeom g = conv_geometry(xs, w.shape(), stride, padding, "conv2d_grad_input");
  if (g.oh != gy.shape()[2] || g.ow != gy.shape()[3] || g.o != gy.shape()[1])
    throw ShapeError("conv2d_grad_input: grad shape " + shape_str(gy.shape()) +
                     " inconsistent with declared input " + shape_str(xs));
  Tensor out = Tensor::zeros(xs, gy.dtype());
  if (gy.dtype() == DType::Float32)
    conv2d_grad_input_kernel<float>(gy, w, out, g);
  else
    conv2d_grad_input_kernel<double>(gy, w, out, g);
  check_finite(out, "conv2d_grad_input");
  if (tape_wanted(gy, w))
    detail::attach_node(out, std::make_shared<Conv2dGradInputNode>(stride, padding), {gy, w});
  return out;
}

Tensor conv2d_grad_weight(const Tensor& x, const Tensor& gy, int stride, int padding,
                          int64_t kernel) {
  if (gy.dtype() != x.dtype()) throw ContractError("conv2d_grad_weight: dtype mismatch");
  Shape ws{gy.shape()[1], x.shape()[1], kernel, kernel};
  ConvGeom g = conv_geometry(x.shape(), ws, stride, padding, "conv2d_grad_weight");
  if (g.oh != gy.shape()[2] || g.ow != gy.shape()[3])
    throw ShapeError("conv2d_grad_weight: grad shape " + shape_str(gy.shape()) +
                     " inconsistent with input " + shape_str(x.shape()));
  Tensor out = Tensor::zeros(ws, x.dtype());
  if (x.dtype() == DType::Float32)
    conv2d_grad_weight_kernel<float>(x, gy, out, g);
  else
    conv2d_grad_weight_kernel<double>(x, gy, out, g);
  check_finite(out, "conv2d_grad_weight");
  if (tape_wanted(x, gy))
    detail::attach_node(out, std::make_shared<Conv2dGradWeightNode>(stride, padding), {x, gy});
  return out;
}

}  // namespace seattn::ops
