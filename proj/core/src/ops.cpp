#include "seattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

namespace seattn::ops {

namespace {

bool needs_tape(std::initializer_list<const Tensor*> ts) {
  if (!grad_recording()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

void check_dtype_match(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ContractError(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                        dtype_name(b.dtype()) + ")");
}

// numpy-style trailing-dimension broadcast shape.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": incompatible broadcast shapes " + shape_str(a) + " and " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T, class F>
void ew_binary(const Tensor& a, const Tensor& b, Tensor& out, F f) {
  auto pa = a.data<T>();
  auto pb = b.data<T>();
  auto po = out.data<T>();
  const size_t n = po.size();
  for (size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
}

template <typename T, class F>
void ew_unary(const Tensor& x, Tensor& out, F f) {
  auto px = x.data<T>();
  auto po = out.data<T>();
  const size_t n = po.size();
  for (size_t i = 0; i < n; ++i) po[i] = f(px[i]);
}

template <class F32F, class F64F>
Tensor unary_op(const Tensor& x, const char* name, F32F f32, F64F f64,
                std::shared_ptr<Node> (*mk)(const Tensor&)) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == DType::Float32)
    ew_unary<float>(x, out, f32);
  else
    ew_unary<double>(x, out, f64);
  check_finite(out, name);
  if (needs_tape({&x})) detail::attach_node(out, mk(x), {x});
  return out;
}

// ---- node types -------------------------------------------------------

struct AddNode final : Node {
  AddNode() : Node("add") {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {gy, gy}; }
};

struct SubNode final : Node {
  SubNode() : Node("sub") {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {gy, neg(gy)}; }
};

struct MulNode final : Node {
  MulNode() : Node("mul") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {mul(gy, inputs()[1]), mul(gy, inputs()[0])};
  }
};

struct DivNode final : Node {
  DivNode() : Node("div") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Tensor& a = inputs()[0];
    const Tensor& b = inputs()[1];
    Tensor ga = div(gy, b);
    Tensor gb = neg(mul(gy, div(a, mul(b, b))));
    return {ga, gb};
  }
};

struct NegNode final : Node {
  NegNode() : Node("neg") {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {neg(gy)}; }
};

struct ScaleNode final : Node {
  double s;
  explicit ScaleNode(double s_) : Node("scale"), s(s_) {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {scale(gy, s)}; }
};

struct AddScalarNode final : Node {
  AddScalarNode() : Node("add_scalar") {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {gy}; }
};

// relu/leaky_relu masks are piecewise constant in x, so a detached mask gives
// the exact second-order behaviour (zero curvature almost everywhere).
Tensor slope_mask(const Tensor& x, double slope) {
  Tensor m = Tensor::zeros(x.shape(), x.dtype());
  const int64_t n = x.numel();
  if (x.dtype() == DType::Float32) {
    auto px = x.data<float>();
    auto pm = m.data<float>();
    for (int64_t i = 0; i < n; ++i) pm[i] = px[i] > 0.0f ? 1.0f : static_cast<float>(slope);
  } else {
    auto px = x.data<double>();
    auto pm = m.data<double>();
    for (int64_t i = 0; i < n; ++i) pm[i] = px[i] > 0.0 ? 1.0 : slope;
  }
  return m;
}

struct ReluNode final : Node {
  ReluNode() : Node("relu") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {mul(gy, slope_mask(inputs()[0], 0.0))};
  }
};

struct LeakyReluNode final : Node {
  double slope;
  explicit LeakyReluNode(double s) : Node("leaky_relu"), slope(s) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {mul(gy, slope_mask(inputs()[0], slope))};
  }
};

// Value-dependent backwards recompute from the *input* so that create_graph
// differentiates them correctly (a saved detached output would silently drop
// the second-order term).
struct TanhNode final : Node {
  TanhNode() : Node("tanh") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    Tensor y = tanh(inputs()[0]);
    return {mul(gy, add_scalar(neg(mul(y, y)), 1.0))};
  }
};

struct SigmoidNode final : Node {
  SigmoidNode() : Node("sigmoid") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    Tensor y = sigmoid(inputs()[0]);
    return {mul(gy, mul(y, add_scalar(neg(y), 1.0)))};
  }
};

struct ExpNode final : Node {
  ExpNode() : Node("exp") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {mul(gy, exp(inputs()[0]))};
  }
};

struct LogNode final : Node {
  LogNode() : Node("log") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {div(gy, inputs()[0])};
  }
};

struct SqrtNode final : Node {
  SqrtNode() : Node("sqrt") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {scale(mul(gy, pow_scalar(inputs()[0], -0.5)), 0.5)};
  }
};

struct PowScalarNode final : Node {
  double p;
  explicit PowScalarNode(double p_) : Node("pow_scalar"), p(p_) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {scale(mul(gy, pow_scalar(inputs()[0], p - 1.0)), p)};
  }
};

struct SumNode final : Node {
  SumNode() : Node("sum") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {broadcast_to(gy, inputs()[0].shape())};
  }
};

struct SumAxesNode final : Node {
  std::vector<int> axes;
  bool keepdims;
  SumAxesNode(std::vector<int> a, bool k) : Node("sum_axes"), axes(std::move(a)), keepdims(k) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Shape& in_shape = inputs()[0].shape();
    Shape keep = in_shape;
    for (int ax : axes) keep[static_cast<size_t>(ax)] = 1;
    Tensor g = keepdims ? gy : reshape(gy, keep);
    return {broadcast_to(g, in_shape)};
  }
};

struct ReshapeNode final : Node {
  ReshapeNode() : Node("reshape") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {reshape(gy, inputs()[0].shape())};
  }
};

struct BroadcastToNode final : Node {
  BroadcastToNode() : Node("broadcast_to") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Shape& src = inputs()[0].shape();
    const Shape& dst = gy.shape();
    const size_t r = dst.size(), rs = src.size();
    std::vector<int> axes;
    for (size_t i = 0; i < r; ++i) {
      const int64_t sd = i < r - rs ? 1 : src[i - (r - rs)];
      if (sd == 1 && dst[i] != 1) axes.push_back(static_cast<int>(i));
    }
    Tensor g = axes.empty() ? gy : sum(gy, axes, /*keepdims=*/true);
    return {reshape(g, src)};
  }
};

struct ConcatNode final : Node {
  int axis;
  std::vector<int64_t> lens;
  ConcatNode(int ax, std::vector<int64_t> l) : Node("concat"), axis(ax), lens(std::move(l)) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    std::vector<Tensor> out;
    int64_t off = 0;
    for (int64_t len : lens) {
      out.push_back(slice(gy, axis, off, len));
      off += len;
    }
    return out;
  }
};

struct SliceNode final : Node {
  int axis;
  int64_t start, full;
  SliceNode(int ax, int64_t s, int64_t f) : Node("slice"), axis(ax), start(s), full(f) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {embed_slice(gy, axis, start, full)};
  }
};

struct EmbedSliceNode final : Node {
  int axis;
  int64_t start, len;
  EmbedSliceNode(int ax, int64_t s, int64_t l) : Node("embed_slice"), axis(ax), start(s), len(l) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {slice(gy, axis, start, len)};
  }
};

struct Transpose2dNode final : Node {
  Transpose2dNode() : Node("transpose2d") {}
  std::vector<Tensor> backward(const Tensor& gy) override { return {transpose2d(gy)}; }
};

struct PermuteNode final : Node {
  std::vector<int> dims;
  explicit PermuteNode(std::vector<int> d) : Node("permute"), dims(std::move(d)) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    std::vector<int> inv(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) inv[static_cast<size_t>(dims[i])] = static_cast<int>(i);
    return {permute(gy, inv)};
  }
};

struct MatmulNode final : Node {
  MatmulNode() : Node("matmul") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Tensor& a = inputs()[0];
    const Tensor& b = inputs()[1];
    return {matmul(gy, transpose2d(b)), matmul(transpose2d(a), gy)};
  }
};

struct UpsampleNearest2xNode final : Node {
  UpsampleNearest2xNode() : Node("upsample_nearest2x") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {scale(downsample_avg2x(gy), 4.0)};
  }
};

struct DownsampleAvg2xNode final : Node {
  DownsampleAvg2xNode() : Node("downsample_avg2x") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {scale(upsample_nearest2x(gy), 0.25)};
  }
};

struct Pad2dZeroNode final : Node {
  int pad;
  explicit Pad2dZeroNode(int p) : Node("pad2d"), pad(p) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Shape& s = inputs()[0].shape();
    Tensor g = slice(gy, 2, pad, s[2]);
    return {slice(g, 3, pad, s[3])};
  }
};

struct Pad2dReplicateNode final : Node {
  int pad;
  explicit Pad2dReplicateNode(int p) : Node("pad2d_replicate"), pad(p) {}
  bool supports_create_graph() const override { return false; }
  std::vector<Tensor> backward(const Tensor& gy) override;
};

struct SoftmaxNode final : Node {
  int axis;
  explicit SoftmaxNode(int ax) : Node("softmax"), axis(ax) {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    Tensor y = softmax(inputs()[0], axis);
    Tensor s = sum(mul(gy, y), {axis}, /*keepdims=*/true);
    return {mul(y, sub(gy, broadcast_to(s, gy.shape())))};
  }
};

struct EmbeddingNode final : Node {
  std::vector<int64_t> ids;
  explicit EmbeddingNode(std::vector<int64_t> ids_) : Node("embedding"), ids(std::move(ids_)) {}
  bool supports_create_graph() const override { return false; }
  std::vector<Tensor> backward(const Tensor& gy) override {
    const Tensor& w = inputs()[0];
    Tensor gw = Tensor::zeros(w.shape(), w.dtype());
    const int64_t e = w.shape()[1];
    for (size_t row = 0; row < ids.size(); ++row) {
      const int64_t dst = ids[row] * e;
      const int64_t src = static_cast<int64_t>(row) * e;
      for (int64_t j = 0; j < e; ++j) gw.set(dst + j, gw.at(dst + j) + gy.at(src + j));
    }
    return {gw};
  }
};

struct ToDtypeNode final : Node {
  ToDtypeNode() : Node("to_dtype") {}
  std::vector<Tensor> backward(const Tensor& gy) override {
    return {to_dtype(gy, inputs()[0].dtype())};
  }
};

std::shared_ptr<Node> mk_relu(const Tensor&) { return std::make_shared<ReluNode>(); }
std::shared_ptr<Node> mk_tanh(const Tensor&) { return std::make_shared<TanhNode>(); }
std::shared_ptr<Node> mk_sigmoid(const Tensor&) { return std::make_shared<SigmoidNode>(); }
std::shared_ptr<Node> mk_exp(const Tensor&) { return std::make_shared<ExpNode>(); }
std::shared_ptr<Node> mk_log(const Tensor&) { return std::make_shared<LogNode>(); }
std::shared_ptr<Node> mk_sqrt(const Tensor&) { return std::make_shared<SqrtNode>(); }
std::shared_ptr<Node> mk_neg(const Tensor&) { return std::make_shared<NegNode>(); }

// Broadcast both operands to a common shape (inserting taped broadcast nodes
// only when an operand actually changes shape).
std::pair<Tensor, Tensor> broadcast_pair(const Tensor& a, const Tensor& b, const char* op) {
  check_dtype_match(a, b, op);
  if (same_shape(a.shape(), b.shape())) return {a, b};
  Shape bs = broadcast_shape(a.shape(), b.shape(), op);
  Tensor a2 = same_shape(a.shape(), bs) ? a : broadcast_to(a, bs);
  Tensor b2 = same_shape(b.shape(), bs) ? b : broadcast_to(b, bs);
  return {a2, b2};
}

template <class NodeT, class F32F, class F64F>
Tensor binary_op(const Tensor& a0, const Tensor& b0, const char* name, F32F f32, F64F f64) {
  auto [a, b] = broadcast_pair(a0, b0, name);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  if (a.dtype() == DType::Float32)
    ew_binary<float>(a, b, out, f32);
  else
    ew_binary<double>(a, b, out, f64);
  check_finite(out, name);
  if (needs_tape({&a, &b})) detail::attach_node(out, std::make_shared<NodeT>(), {a, b});
  return out;
}

}  // namespace

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op<AddNode>(a, b, "add", [](float x, float y) { return x + y; },
                            [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op<SubNode>(a, b, "sub", [](float x, float y) { return x - y; },
                            [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op<MulNode>(a, b, "mul", [](float x, float y) { return x * y; },
                            [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op<DivNode>(a, b, "div", [](float x, float y) { return x / y; },
                            [](double x, double y) { return x / y; });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, "neg", [](float v) { return -v; }, [](double v) { return -v; }, mk_neg);
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == DType::Float32) {
    const float fs = static_cast<float>(s);
    ew_unary<float>(x, out, [fs](float v) { return v * fs; });
  } else {
    ew_unary<double>(x, out, [s](double v) { return v * s; });
  }
  check_finite(out, "scale");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<ScaleNode>(s), {x});
  return out;
}

Tensor add_scalar(const Tensor& x, double s) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == DType::Float32) {
    const float fs = static_cast<float>(s);
    ew_unary<float>(x, out, [fs](float v) { return v + fs; });
  } else {
    ew_unary<double>(x, out, [s](double v) { return v + s; });
  }
  check_finite(out, "add_scalar");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<AddScalarNode>(), {x});
  return out;
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](float v) { return v > 0.0f ? v : 0.0f; },
                  [](double v) { return v > 0.0 ? v : 0.0; }, mk_relu);
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == DType::Float32) {
    const float fs = static_cast<float>(slope);
    ew_unary<float>(x, out, [fs](float v) { return v > 0.0f ? v : v * fs; });
  } else {
    ew_unary<double>(x, out, [slope](double v) { return v > 0.0 ? v : v * slope; });
  }
  check_finite(out, "leaky_relu");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<LeakyReluNode>(slope), {x});
  return out;
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, "tanh", [](float v) { return std::tanh(v); },
                  [](double v) { return std::tanh(v); }, mk_tanh);
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
                  [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, mk_sigmoid);
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](float v) { return std::exp(v); },
                  [](double v) { return std::exp(v); }, mk_exp);
}

Tensor log(const Tensor& x) {
  return unary_op(x, "log", [](float v) { return std::log(v); },
                  [](double v) { return std::log(v); }, mk_log);
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, "sqrt", [](float v) { return std::sqrt(v); },
                  [](double v) { return std::sqrt(v); }, mk_sqrt);
}

Tensor pow_scalar(const Tensor& x, double p) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  if (x.dtype() == DType::Float32) {
    const float fp = static_cast<float>(p);
    ew_unary<float>(x, out, [fp](float v) { return std::pow(v, fp); });
  } else {
    ew_unary<double>(x, out, [p](double v) { return std::pow(v, p); });
  }
  check_finite(out, "pow_scalar");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<PowScalarNode>(p), {x});
  return out;
}

// ---- reductions --------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros(Shape{}, x.dtype());
  if (x.dtype() == DType::Float32) {
    float acc = 0.0f;
    for (float v : x.data<float>()) acc += v;
    out.set(0, acc);
  } else {
    double acc = 0.0;
    for (double v : x.data<double>()) acc += v;
    out.set(0, acc);
  }
  check_finite(out, "sum");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<SumNode>(), {x});
  return out;
}

Tensor sum(const Tensor& x, const std::vector<int>& axes0, bool keepdims) {
  const Shape& s = x.shape();
  std::vector<int> axes;
  for (int a : axes0) axes.push_back(a < 0 ? a + static_cast<int>(s.size()) : a);
  std::sort(axes.begin(), axes.end());
  for (int a : axes)
    if (a < 0 || a >= static_cast<int>(s.size())) throw ShapeError("sum: axis out of range");

  Shape out_keep = s;
  for (int a : axes) out_keep[static_cast<size_t>(a)] = 1;
  Tensor out = Tensor::zeros(out_keep, x.dtype());

  const auto in_strides = strides_of(s);
  const auto out_strides = strides_of(out_keep);
  const int64_t n = x.numel();
  const size_t r = s.size();
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, oi = 0;
    for (size_t d = 0; d < r; ++d) {
      const int64_t idx = rem / in_strides[d];
      rem %= in_strides[d];
      if (out_keep[d] != 1) oi += idx * out_strides[d];
    }
    out.set(oi, out.at(oi) + x.at(i));
  }
  check_finite(out, "sum_axes");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<SumAxesNode>(axes, true), {x});
  if (!keepdims) {
    Shape squeezed;
    for (size_t d = 0; d < r; ++d)
      if (std::find(axes.begin(), axes.end(), static_cast<int>(d)) == axes.end())
        squeezed.push_back(s[d]);
    return reshape(out, squeezed);
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  Tensor s = sum(x, axes, keepdims);
  const double denom = static_cast<double>(x.numel()) / static_cast<double>(s.numel());
  return scale(s, 1.0 / denom);
}

// ---- shape -------------------------------------------------------------

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel_of(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out = x.detach();
  out.impl()->shape = shape;
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<ReshapeNode>(), {x});
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const Shape& src = x.shape();
  const size_t r = shape.size(), rs = src.size();
  if (rs > r)
    throw ShapeError("broadcast_to: rank " + std::to_string(rs) + " exceeds target " + shape_str(shape));
  for (size_t i = 0; i < rs; ++i) {
    const int64_t sd = src[i];
    const int64_t dd = shape[r - rs + i];
    if (sd != dd && sd != 1)
      throw ShapeError("broadcast_to: " + shape_str(src) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::zeros(shape, x.dtype());
  const auto out_strides = strides_of(shape);
  const auto src_strides = strides_of(src);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, si = 0;
    for (size_t d = 0; d < r; ++d) {
      const int64_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      if (d >= r - rs && src[d - (r - rs)] != 1) si += idx * src_strides[d - (r - rs)];
    }
    out.set(i, x.at(si));
  }
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<BroadcastToNode>(), {x});
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  const size_t r = xs[0].rank();
  if (axis < 0) axis += static_cast<int>(r);
  Shape out_shape = xs[0].shape();
  std::vector<int64_t> lens;
  int64_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    check_dtype_match(xs[0], t, "concat");
    for (size_t d = 0; d < r; ++d)
      if (static_cast<int>(d) != axis && t.shape()[d] != out_shape[d])
        throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(out_shape));
    lens.push_back(t.shape()[static_cast<size_t>(axis)]);
    total += lens.back();
  }
  out_shape[static_cast<size_t>(axis)] = total;
  Tensor out = Tensor::zeros(out_shape, xs[0].dtype());

  // outer = product of dims before axis, inner = product after.
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= out_shape[d];

  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const int64_t len = lens[k];
    for (int64_t o = 0; o < outer; ++o) {
      const int64_t dst = (o * total + off) * inner;
      const int64_t src = o * len * inner;
      for (int64_t j = 0; j < len * inner; ++j) out.set(dst + j, xs[k].at(src + j));
    }
    off += len;
  }
  bool tape = grad_recording();
  if (tape) {
    bool any = false;
    for (const Tensor& t : xs) any = any || t.requires_grad();
    if (any) {
      Tensor& o = out;
      detail::attach_node(o, std::make_shared<ConcatNode>(axis, lens), xs);
    }
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const size_t r = x.rank();
  if (axis < 0) axis += static_cast<int>(r);
  const Shape& s = x.shape();
  const int64_t full = s[static_cast<size_t>(axis)];
  if (start < 0 || len < 0 || start + len > full)
    throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of extent " + std::to_string(full));
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(out_shape, x.dtype());

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= s[d];
  for (int64_t o = 0; o < outer; ++o) {
    const int64_t src = (o * full + start) * inner;
    const int64_t dst = o * len * inner;
    for (int64_t j = 0; j < len * inner; ++j) out.set(dst + j, x.at(src + j));
  }
  if (needs_tape({&x}))
    detail::attach_node(out, std::make_shared<SliceNode>(axis, start, full), {x});
  return out;
}

Tensor embed_slice(const Tensor& x, int axis, int64_t start, int64_t full) {
  const size_t r = x.rank();
  if (axis < 0) axis += static_cast<int>(r);
  const Shape& s = x.shape();
  const int64_t len = s[static_cast<size_t>(axis)];
  if (start < 0 || start + len > full) throw ShapeError("embed_slice: range out of extent");
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = full;
  Tensor out = Tensor::zeros(out_shape, x.dtype());

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= s[d];
  for (int64_t o = 0; o < outer; ++o) {
    const int64_t dst = (o * full + start) * inner;
    const int64_t src = o * len * inner;
    for (int64_t j = 0; j < len * inner; ++j) out.set(dst + j, x.at(src + j));
  }
  if (needs_tape({&x}))
    detail::attach_node(out, std::make_shared<EmbedSliceNode>(axis, start, len), {x});
  return out;
}

Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(x.shape()));
  const int64_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = Tensor::zeros({n, m}, x.dtype());
  if (x.dtype() == DType::Float32) {
    auto px = x.data<float>();
    auto po = out.data<float>();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  } else {
    auto px = x.data<double>();
    auto po = out.data<double>();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  }
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<Transpose2dNode>(), {x});
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const size_t r = x.rank();
  if (dims.size() != r) throw ShapeError("permute: dims size mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    const int d = dims[i];
    if (d < 0 || d >= static_cast<int>(r) || seen[static_cast<size_t>(d)])
      throw ShapeError("permute: invalid axis list");
    seen[static_cast<size_t>(d)] = true;
    out_shape[i] = x.shape()[static_cast<size_t>(d)];
  }
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  const auto in_strides = strides_of(x.shape());
  const auto out_strides = strides_of(out_shape);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    int64_t rem = i, si = 0;
    for (size_t d = 0; d < r; ++d) {
      const int64_t idx = rem / out_strides[d];
      rem %= out_strides[d];
      si += idx * in_strides[static_cast<size_t>(dims[d])];
    }
    out.set(i, x.at(si));
  }
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<PermuteNode>(dims), {x});
  return out;
}

// ---- matmul ------------------------------------------------------------

namespace {
template <typename T>
void gemm(const Tensor& a, const Tensor& b, Tensor& out, int64_t m, int64_t k, int64_t n) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> A(a.data<T>().data(), m, k);
  Eigen::Map<const Mat> B(b.data<T>().data(), k, n);
  Eigen::Map<Mat> C(out.data<T>().data(), m, n);
  C.noalias() = A * B;
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  check_dtype_match(a, b, "matmul");
  const int64_t m = a.shape()[0], k = a.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  if (a.dtype() == DType::Float32)
    gemm<float>(a, b, out, m, k, n);
  else
    gemm<double>(a, b, out, m, k, n);
  check_finite(out, "matmul");
  if (needs_tape({&a, &b})) detail::attach_node(out, std::make_shared<MatmulNode>(), {a, b});
  return out;
}

// ---- spatial -----------------------------------------------------------

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest2x: expected NCHW, got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w}, x.dtype());
  for (int64_t img = 0; img < n * c; ++img) {
    const int64_t src0 = img * h * w;
    const int64_t dst0 = img * 4 * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const double v = x.at(src0 + i * w + j);
        const int64_t d = dst0 + 2 * i * 2 * w + 2 * j;
        out.set(d, v);
        out.set(d + 1, v);
        out.set(d + 2 * w, v);
        out.set(d + 2 * w + 1, v);
      }
  }
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<UpsampleNearest2xNode>(), {x});
  return out;
}

Tensor downsample_avg2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("downsample_avg2x: expected NCHW, got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw ConfigError("downsample_avg2x: odd spatial extent " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({n, c, h / 2, w / 2}, x.dtype());
  for (int64_t img = 0; img < n * c; ++img) {
    const int64_t src0 = img * h * w;
    const int64_t dst0 = img * (h / 2) * (w / 2);
    for (int64_t i = 0; i < h / 2; ++i)
      for (int64_t j = 0; j < w / 2; ++j) {
        const int64_t s = src0 + 2 * i * w + 2 * j;
        const double v = (x.at(s) + x.at(s + 1) + x.at(s + w) + x.at(s + w + 1)) * 0.25;
        out.set(dst0 + i * (w / 2) + j, v);
      }
  }
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<DownsampleAvg2xNode>(), {x});
  return out;
}

namespace {
Tensor pad2d_compute(const Tensor& x, int pad, PadMode mode) {
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int64_t oh = h + 2 * pad, ow = w + 2 * pad;
  Tensor out = Tensor::zeros({n, c, oh, ow}, x.dtype());
  for (int64_t img = 0; img < n * c; ++img) {
    const int64_t src0 = img * h * w;
    const int64_t dst0 = img * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      int64_t si = i - pad;
      if (mode == PadMode::Replicate) si = std::clamp<int64_t>(si, 0, h - 1);
      for (int64_t j = 0; j < ow; ++j) {
        int64_t sj = j - pad;
        if (mode == PadMode::Replicate) sj = std::clamp<int64_t>(sj, 0, w - 1);
        if (si < 0 || si >= h || sj < 0 || sj >= w) continue;  // zero mode border
        out.set(dst0 + i * ow + j, x.at(src0 + si * w + sj));
      }
    }
  }
  return out;
}
}  // namespace

std::vector<Tensor> Pad2dReplicateNode::backward(const Tensor& gy) {
  const Tensor& x = inputs()[0];
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int64_t oh = h + 2 * pad, ow = w + 2 * pad;
  Tensor gx = Tensor::zeros(x.shape(), x.dtype());
  for (int64_t img = 0; img < n * c; ++img) {
    const int64_t src0 = img * oh * ow;
    const int64_t dst0 = img * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      const int64_t si = std::clamp<int64_t>(i - pad, 0, h - 1);
      for (int64_t j = 0; j < ow; ++j) {
        const int64_t sj = std::clamp<int64_t>(j - pad, 0, w - 1);
        const int64_t d = dst0 + si * w + sj;
        gx.set(d, gx.at(d) + gy.at(src0 + i * ow + j));
      }
    }
  }
  return {gx};
}

Tensor pad2d(const Tensor& x, int pad, PadMode mode) {
  if (x.rank() != 4) throw ShapeError("pad2d: expected NCHW, got " + shape_str(x.shape()));
  if (pad < 0) throw ConfigError("pad2d: negative padding");
  if (pad == 0) return x;
  Tensor out = pad2d_compute(x, pad, mode);
  if (needs_tape({&x})) {
    if (mode == PadMode::Zero)
      detail::attach_node(out, std::make_shared<Pad2dZeroNode>(pad), {x});
    else
      detail::attach_node(out, std::make_shared<Pad2dReplicateNode>(pad), {x});
  }
  return out;
}

// ---- softmax -----------------------------------------------------------

namespace {
template <typename T>
void softmax_kernel(const Tensor& x, Tensor& out, int64_t outer, int64_t len, int64_t inner) {
  auto px = x.data<T>();
  auto po = out.data<T>();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = px[base];
      for (int64_t i = 1; i < len; ++i) mx = std::max(mx, px[base + i * inner]);
      T denom = T(0);
      for (int64_t i = 0; i < len; ++i) {
        const T e = std::exp(px[base + i * inner] - mx);
        po[base + i * inner] = e;
        denom += e;
      }
      for (int64_t i = 0; i < len; ++i) po[base + i * inner] /= denom;
    }
}
}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const size_t r = x.rank();
  if (axis < 0) axis += static_cast<int>(r);
  if (axis < 0 || axis >= static_cast<int>(r)) throw ShapeError("softmax: axis out of range");
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= s[d];
  const int64_t len = s[static_cast<size_t>(axis)];
  Tensor out = Tensor::zeros(s, x.dtype());
  if (x.dtype() == DType::Float32)
    softmax_kernel<float>(x, out, outer, len, inner);
  else
    softmax_kernel<double>(x, out, outer, len, inner);
  check_finite(out, "softmax");
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<SoftmaxNode>(axis), {x});
  return out;
}

// ---- lookup ------------------------------------------------------------

Tensor embedding(const Tensor& weight, const std::vector<int64_t>& ids) {
  if (weight.rank() != 2) throw ShapeError("embedding: weight must be (V,E)");
  const int64_t v = weight.shape()[0], e = weight.shape()[1];
  for (int64_t id : ids)
    if (id < 0 || id >= v) throw ContractError("embedding: id " + std::to_string(id) + " out of vocab");
  Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), e}, weight.dtype());
  for (size_t row = 0; row < ids.size(); ++row)
    for (int64_t j = 0; j < e; ++j)
      out.set(static_cast<int64_t>(row) * e + j, weight.at(ids[row] * e + j));
  if (needs_tape({&weight}))
    detail::attach_node(out, std::make_shared<EmbeddingNode>(ids), {weight});
  return out;
}

// ---- conversion --------------------------------------------------------

Tensor to_dtype(const Tensor& x, DType dt) {
  if (x.dtype() == dt && !x.has_grad_fn() && !x.requires_grad()) return x;
  Tensor out = x.to_dtype_copy(dt);
  if (needs_tape({&x})) detail::attach_node(out, std::make_shared<ToDtypeNode>(), {x});
  return out;
}

// ---- composites --------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

Tensor sum_rows_l2norm(const Tensor& x, double eps) {
  if (x.rank() != 2) throw ShapeError("sum_rows_l2norm: expected (N,D)");
  Tensor sq = mul(x, x);
  Tensor s = sum(sq, {1}, /*keepdims=*/false);
  if (eps > 0.0) s = add_scalar(s, eps);
  return sqrt(s);
}

}  // namespace seattn::ops
