// SPDX-License-Identifier: Apache-2.0
#ifndef G3CN_GRADCHECK_HPP
#define G3CN_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "g3cn/autodiff.hpp"

namespace g3cn::ad {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Smallest denominator of the relative error |a - n| / max(|a|, |n|, floor).
  /// Central differences carry roundoff near 1e-16 sqrt(#outputs) / eps
  /// (about 1e-10 for a few hundred outputs), so entries below this floor
  /// are held to an absolute error of tol * floor.
  double denom_floor = 1e-5;
  /// Upper bound on checked entries per tensor, spread evenly; 0 checks all.
  std::size_t max_entries_per_tensor = 0;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  GradCheckEntry worst;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares tape gradients of the scalar returned by `f` against central
/// differences (f(p + eps) - f(p - eps)) / (2 eps) for every entry of every
/// tensor in `params`. Relative error uses max(|analytic|, |numeric|, 1e-8)
/// as denominator.
GradCheckReport finite_diff_check(const std::function<Tensor()> &f,
                                  const std::vector<NamedTensor> &params,
                                  const GradCheckOptions &options = {});

} // namespace g3cn::ad

#endif // G3CN_GRADCHECK_HPP
