#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "catv2ton/tensor.hpp"

namespace catv2ton {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = false;
};

/// Compares the tape gradient of scalar f at x against central differences
/// (f(x+h) - f(x-h)) / 2h, element by element.
///
/// Relative error is |a - n| / max(|a|, |n|, abs_floor); the floor keeps
/// elements whose true gradient is ~0 from dividing rounding noise by zero.
/// x is perturbed in place and restored.
GradCheckReport finite_diff_check(const std::function<Tensord(const Tensord&)>& f, Tensord x,
                                  double h = 1e-5, double tol = 1e-3, double abs_floor = 1e-6);

}  // namespace catv2ton
