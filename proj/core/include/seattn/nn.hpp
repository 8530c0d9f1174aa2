#pragma once

#include <string>
#include <vector>

#include "seattn/ops.hpp"
#include "seattn/rng.hpp"
#include "seattn/tensor.hpp"

namespace seattn::nn {

// Named trainable tensor. Names are hierarchical paths such as
// "gen.upblock2.conv1.weight" and must be unique within a model.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

void validate_params(const ParamList& params);  // throws on duplicate names
int64_t count_params(const ParamList& params);
void zero_grads(ParamList& params);

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out); undefined when bias disabled

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, DType dt, double init_std = 0.02, bool bias = true);
  static Linear zero_init(int64_t in, int64_t out, DType dt, bool bias = true);

  Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Conv2d {
  Tensor w;  // (out_ch, in_ch, k, k)
  Tensor b;  // (out_ch)
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int stride, int pad, Rng& rng, DType dt,
         double init_std = 0.02, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace seattn::nn
