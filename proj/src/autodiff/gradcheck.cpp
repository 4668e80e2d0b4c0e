// SPDX-License-Identifier: Apache-2.0
#include "g3cn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace g3cn::ad {

GradCheckReport finite_diff_check(const std::function<Tensor()> &f,
                                  const std::vector<NamedTensor> &params,
                                  const GradCheckOptions &options) {
  std::vector<Tensor> tensors;
  for (const auto &p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
    t.zero_grad();
    tensors.push_back(t);
  }
  f().backward();

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = tensors[k];
    const std::size_t n = t.numel();
    std::vector<double> analytic(n, 0.0);
    if (!t.grad().empty())
      std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::size_t step = 1;
    if (options.max_entries_per_tensor > 0 &&
        n > options.max_entries_per_tensor)
      step = (n + options.max_entries_per_tensor - 1) /
             options.max_entries_per_tensor;

    auto data = t.mutable_data();
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = data[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard guard;
        data[i] = saved + options.eps;
        plus = f().item();
        data[i] = saved - options.eps;
        minus = f().item();
      }
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), options.denom_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.checked;
      if (!(rel <= report.max_rel_err) || report.checked == 1) {
        report.max_rel_err = std::isnan(rel) ? INFINITY : rel;
        report.worst = {params[k].name, i, analytic[i], numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_err < options.tol;
  return report;
}

} // namespace g3cn::ad
