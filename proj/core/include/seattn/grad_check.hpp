#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seattn/tensor.hpp"

namespace seattn {

struct GradCheckReport {
  std::string label;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double tol = 0.0;
  int64_t coords_checked = 0;
  bool passed = false;
};

// Central-difference gradient check of a scalar-valued function at x.
// Evaluated in 64-bit; `x` must be an f64 leaf. When max_coords >= 0 a
// deterministic random subset of coordinates is probed (seeded), otherwise
// every coordinate is. Reported error is |autodiff - fd| / max(0.01,|a|,|f|).
GradCheckReport grad_check(const std::string& label,
                           const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double eps = 1e-5, double tol = 1e-4, int64_t max_coords = -1,
                           uint64_t coord_seed = 0);

}  // namespace seattn
