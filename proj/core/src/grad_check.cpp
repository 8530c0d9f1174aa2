#include "seattn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "seattn/autodiff.hpp"
#include "seattn/rng.hpp"

namespace seattn {

GradCheckReport grad_check(const std::string& label,
                           const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                           double eps, double tol, int64_t max_coords, uint64_t coord_seed) {
  if (x0.dtype() != DType::Float64)
    throw ContractError("grad_check: point must be f64 (" + label + ")");

  Tensor x = x0.detach().set_requires_grad(true);
  Tensor loss = f(x);
  if (loss.numel() != 1) throw ContractError("grad_check: f must be scalar-valued (" + label + ")");
  Tensor ad = grad(loss, {x})[0];

  std::vector<int64_t> coords;
  const int64_t n = x.numel();
  if (max_coords < 0 || max_coords >= n) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
  } else {
    Rng rng(coord_seed ^ 0x5eed5eedULL);
    std::vector<int64_t> all(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < max_coords; ++i) {
      const auto j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i)));
      std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
    }
    coords.assign(all.begin(), all.begin() + max_coords);
  }

  GradCheckReport rep;
  rep.label = label;
  rep.tol = tol;
  rep.coords_checked = static_cast<int64_t>(coords.size());
  // No NoGradGuard here: probe functions may legitimately run an inner
  // backward themselves (gradient-norm probes), which needs a live tape.
  for (int64_t i : coords) {
    Tensor xp = x.detach();
    Tensor xm = x.detach();
    xp.set(i, xp.at(i) + eps);
    xm.set(i, xm.at(i) - eps);
    const double fp = f(xp).item();
    const double fm = f(xm).item();
    const double fd = (fp - fm) / (2.0 * eps);
    const double a = ad.at(i);
    const double rel = std::abs(a - fd) / std::max({0.01, std::abs(a), std::abs(fd)});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_err < tol;
  return rep;
}

}  // namespace seattn
