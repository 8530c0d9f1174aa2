#include "seattn/nn.hpp"

#include <unordered_set>

namespace seattn::nn {

void validate_params(const ParamList& params) {
  std::unordered_set<std::string> seen;
  for (const auto& p : params)
    if (!seen.insert(p.name).second)
      throw ContractError("duplicate parameter name '" + p.name + "'");
}

int64_t count_params(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void zero_grads(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, DType dt, double init_std, bool bias) {
  w = Tensor::randn({in, out}, rng, dt, init_std).set_requires_grad(true);
  if (bias) b = Tensor::zeros({out}, dt, /*requires_grad=*/true);
}

Linear Linear::zero_init(int64_t in, int64_t out, DType dt, bool bias) {
  Linear l;
  l.w = Tensor::zeros({in, out}, dt, true);
  if (bias) l.b = Tensor::zeros({out}, dt, true);
  return l;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", w});
  if (b.defined()) out.push_back({prefix + ".bias", b});
}

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int stride_, int pad_, Rng& rng, DType dt,
               double init_std, bool bias)
    : stride(stride_), pad(pad_) {
  w = Tensor::randn({out_ch, in_ch, k, k}, rng, dt, init_std).set_requires_grad(true);
  if (bias) b = Tensor::zeros({out_ch}, dt, true);
}

Tensor Conv2d::forward(const Tensor& x) const {
  Tensor y = ops::conv2d(x, w, stride, pad);
  if (b.defined()) y = ops::add(y, ops::reshape(b, {b.numel(), 1, 1}));
  return y;
}

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", w});
  if (b.defined()) out.push_back({prefix + ".bias", b});
}

}  // namespace seattn::nn
