#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "rin/error.hpp"
#include "rin/tensor.hpp"

namespace rin {

// Central difference of f around one parameter entry; the entry is restored
// before returning. f64 only: f32 rounding would drown the signal.
inline double central_diff(Tensor param, int64_t index, double h,
                           const std::function<double()>& f) {
  if (param.dtype() != Dtype::f64)
    throw ContractError("central_diff: finite differences want f64");
  auto s = param.mutable_data<double>();
  if (index < 0 || static_cast<size_t>(index) >= s.size())
    throw ContractError("central_diff: index out of range");
  const double keep = s[static_cast<size_t>(index)];
  s[static_cast<size_t>(index)] = keep + h;
  const double up = f();
  s[static_cast<size_t>(index)] = keep - h;
  const double down = f();
  s[static_cast<size_t>(index)] = keep;
  return (up - down) / (2.0 * h);
}

// |a-b| over the larger magnitude. The floor keeps near-zero gradients
// honest: central differences at h=1e-5 carry ~1e-11 of rounding noise, so
// demanding rel < 1e-6 of a floored denominator still means absolute
// agreement to 1e-9 there, while any real analytic defect at small scales
// shows up orders of magnitude above the bar.
inline double rel_error(double got, double want) {
  return std::abs(got - want) /
         std::max({std::abs(got), std::abs(want), 1e-3});
}

}  // namespace rin
