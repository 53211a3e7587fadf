#include "catv2ton/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace catv2ton {

GradCheckReport finite_diff_check(const std::function<Tensord(const Tensord&)>& f, Tensord x,
                                  double h, double tol, double abs_floor) {
  GradCheckReport report;
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tensord loss = f(x);
    loss.backward();
  }
  if (x.has_grad()) {
    report.analytic.assign(x.grad().begin(), x.grad().end());
  } else {
    report.analytic.assign(x.numel(), 0.0);
  }
  x.zero_grad();
  x.set_requires_grad(had_flag);

  auto values = x.mutable_data();
  report.numeric.resize(x.numel());
  report.rel_error.resize(x.numel());
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = f(x).item();
    values[i] = saved - h;
    const double down = f(x).item();
    values[i] = saved;
    const double num = (up - down) / (2.0 * h);
    const double a = report.analytic[i];
    const double denom = std::max({std::abs(a), std::abs(num), abs_floor});
    report.numeric[i] = num;
    report.rel_error[i] = std::abs(a - num) / denom;
    if (report.rel_error[i] > report.max_rel_error) {
      report.max_rel_error = report.rel_error[i];
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace catv2ton
