#include "catv2ton/stats.hpp"

#include <algorithm>
#include <cmath>

namespace catv2ton {

template <typename T>
PopulationStats<T> population_stats(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto& shape = x.shape();
  std::vector<bool> reduced(shape.size(), false);
  for (auto a : axes) {
    if (a >= shape.size()) {
      throw DimensionError("population_stats: axis " + std::to_string(a) + " out of range for " +
                           shape_str(shape));
    }
    reduced[a] = true;
  }
  Shape out_shape = shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) out_shape[i] = 1;
  }
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t count = x.numel() / out_n;

  // Row-major strides of the output; reduced axes contribute nothing.
  std::vector<std::size_t> out_stride(shape.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    out_stride[i] = reduced[i] ? 0 : s;
    s *= out_shape[i];
  }

  auto out_index = [&](std::size_t flat) {
    std::size_t idx = 0;
    for (std::size_t i = shape.size(); i-- > 0;) {
      idx += (flat % shape[i]) * out_stride[i];
      flat /= shape[i];
    }
    return idx;
  };

  const auto xd = x.data();
  std::vector<double> acc(out_n, 0.0);
  for (std::size_t i = 0; i < xd.size(); ++i) acc[out_index(i)] += xd[i];
  for (auto& a : acc) a /= static_cast<double>(count);
  std::vector<double> var(out_n, 0.0);
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const std::size_t o = out_index(i);
    const double dev = static_cast<double>(xd[i]) - acc[o];
    var[o] += dev * dev;
  }
  std::vector<T> mean_v(out_n), std_v(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    mean_v[o] = static_cast<T>(acc[o]);
    std_v[o] = static_cast<T>(std::sqrt(var[o] / static_cast<double>(count)));
  }
  return {Tensor<T>(out_shape, std::move(mean_v)), Tensor<T>(out_shape, std::move(std_v))};
}

template <typename T>
Tensor<T> avg_pool_3d(const Tensor<T>& x, const std::array<std::size_t, 3>& kernel) {
  if (x.rank() != 3) {
    throw DimensionError("avg_pool_3d expects [T,H,W], got " + shape_str(x.shape()));
  }
  for (auto k : kernel) {
    if (k == 0 || k % 2 == 0) {
      throw ConfigError("avg_pool_3d: kernel extents must be odd, got " +
                        std::to_string(kernel[0]) + "x" + std::to_string(kernel[1]) + "x" +
                        std::to_string(kernel[2]));
    }
  }
  const auto nt = static_cast<long>(x.dim(0));
  const auto nh = static_cast<long>(x.dim(1));
  const auto nw = static_cast<long>(x.dim(2));
  const long rt = static_cast<long>(kernel[0] / 2);
  const long rh = static_cast<long>(kernel[1] / 2);
  const long rw = static_cast<long>(kernel[2] / 2);
  const double inv = 1.0 / static_cast<double>(kernel[0] * kernel[1] * kernel[2]);
  auto clampi = [](long v, long n) { return std::clamp(v, 0L, n - 1); };

  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (long t = 0; t < nt; ++t) {
    for (long h = 0; h < nh; ++h) {
      for (long w = 0; w < nw; ++w) {
        double total = 0.0;
        for (long dt = -rt; dt <= rt; ++dt) {
          const long tt = clampi(t + dt, nt);
          for (long dh = -rh; dh <= rh; ++dh) {
            const long hh = clampi(h + dh, nh);
            for (long dw = -rw; dw <= rw; ++dw) {
              const long ww = clampi(w + dw, nw);
              total += xd[static_cast<std::size_t>((tt * nh + hh) * nw + ww)];
            }
          }
        }
        out[static_cast<std::size_t>((t * nh + h) * nw + w)] = static_cast<T>(total * inv);
      }
    }
  }
  return Tensor<T>(x.shape(), std::move(out));
}

template PopulationStats<float> population_stats(const Tensor<float>&,
                                                 const std::vector<std::size_t>&);
template PopulationStats<double> population_stats(const Tensor<double>&,
                                                  const std::vector<std::size_t>&);
template Tensor<float> avg_pool_3d(const Tensor<float>&, const std::array<std::size_t, 3>&);
template Tensor<double> avg_pool_3d(const Tensor<double>&, const std::array<std::size_t, 3>&);

}  // namespace catv2ton
