#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "catv2ton/tensor.hpp"

namespace catv2ton {

template <typename T>
struct PopulationStats {
  Tensor<T> mean;
  Tensor<T> std;
};

/// Mean and biased (divide-by-N) standard deviation over `axes`. Reduced
/// axes are kept with extent 1 so the results broadcast back against x.
/// Not recorded on the tape.
template <typename T>
PopulationStats<T> population_stats(const Tensor<T>& x, const std::vector<std::size_t>& axes);

/// Stride-1 moving average over x[T,H,W] with replicate padding at every
/// border. Kernel extents must be odd.
template <typename T>
Tensor<T> avg_pool_3d(const Tensor<T>& x, const std::array<std::size_t, 3>& kernel);

}  // namespace catv2ton
