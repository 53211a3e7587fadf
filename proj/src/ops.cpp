#include "catv2ton/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace catv2ton {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
// Column block of a wider row-major matrix (one attention head).
template <typename T>
using HeadMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstHeadMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
ConstMatMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a rank-2 tensor, got " +
                         shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
bool wants_grad(const detail::Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  as_matrix(out, m, n).noalias() = as_matrix(ad, m, k) * as_matrix(bd, k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const auto g = as_matrix(std::as_const(self.grad), m, n);
    if (pa.requires_grad) {
      as_matrix(pa.grad_buffer(), m, k).noalias() += g * as_matrix(std::as_const(pb.data), k, n).transpose();
    }
    if (pb.requires_grad) {
      as_matrix(pb.grad_buffer(), k, n).noalias() += as_matrix(std::as_const(pa.data), m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || bias.numel() != w.dim(1)) {
    throw DimensionError("linear: incompatible shapes x" + shape_str(x.shape()) + " w" +
                         shape_str(w.shape()) + " b" + shape_str(bias.shape()));
  }
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<T> out(m * n);
  auto y = as_matrix(out, m, n);
  y.noalias() = as_matrix(x.node()->data, m, k) * as_matrix(w.node()->data, k, n);
  const auto& bd = bias.node()->data;
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bd.data(), static_cast<Eigen::Index>(n));
  return Tensor<T>::make_result(
      {m, n}, std::move(out), {x, w, bias}, [m, k, n](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto g = as_matrix(std::as_const(self.grad), m, n);
        if (px.requires_grad) {
          as_matrix(px.grad_buffer(), m, k).noalias() += g * as_matrix(std::as_const(pw.data), k, n).transpose();
        }
        if (pw.requires_grad) {
          as_matrix(pw.grad_buffer(), k, n).noalias() += as_matrix(std::as_const(px.data), m, k).transpose() * g;
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& row) {
  require_rank2(x, "add_rowwise");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (row.numel() != d) {
    throw DimensionError("add_rowwise: row " + shape_str(row.shape()) + " does not broadcast over " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += r[j];
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, row}, [n, d](detail::Node<T>& self) {
    if (wants_grad(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * xd[i] * (T(1) + std::erf(xd[i] * inv_sqrt2));
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    const T inv_sqrt2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    auto& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];

  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      T total = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return Tensor<T>::make_result(
      shape, std::move(out), {x}, [outer, inner, len](detail::Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& y = self.data;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) {
              dot += self.grad[base + j * inner] * y[base + j * inner];
            }
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              g[idx] += y[idx] * (self.grad[idx] - dot);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: gamma" + shape_str(gamma.shape()) + "/beta" +
                         shape_str(beta.shape()) + " do not match last axis of " +
                         shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  // Normalized values and inverse std are kept for the backward pass.
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& gy = self.grad;
        if (pg.requires_grad) {
          auto& g = pg.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[r * d + j] * xhat[r * d + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += gy[r * d + j];
        }
        if (px.requires_grad) {
          auto& g = px.grad_buffer();
          const auto& gamma_v = pg.data;
          for (std::size_t r = 0; r < rows; ++r) {
            T sum_dh = 0, sum_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gy[r * d + j] * gamma_v[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[r * d + j];
            }
            const T inv_d = T(1) / static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dh = gy[r * d + j] * gamma_v[j];
              g[r * d + j] +=
                  inv_std[r] * (dh - inv_d * sum_dh - xhat[r * d + j] * inv_d * sum_dh_h);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw RangeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  const auto xd = x.data();
  std::vector<T> out(xd.begin() + static_cast<std::ptrdiff_t>(begin * d),
                     xd.begin() + static_cast<std::ptrdiff_t>(end * d));
  return Tensor<T>::make_result({end - begin, d}, std::move(out), {x},
                                [begin, d](detail::Node<T>& self) {
                                  auto& g = self.parents[0]->grad_buffer();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                    g[begin * d + i] += self.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts[0].shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor<T>::make_result({rows, d}, std::move(out), parts, [](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t n = parent->data.size();
      if (parent->requires_grad) {
        auto& g = parent->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.data()) total += v;
  return Tensor<T>::make_result({1}, {total}, {x}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  const std::size_t n = a.numel();
  const auto ad = a.data(), bd = b.data();
  // Accumulate in double so the loss value does not depend on f32 rounding order.
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(ad[i]) - static_cast<double>(bd[i]);
    total += diff * diff;
  }
  return Tensor<T>::make_result(
      {1}, {static_cast<T>(total / static_cast<double>(n))}, {a, b}, [n](detail::Node<T>& self) {
        const T coef = T(2) * self.grad[0] / static_cast<T>(n);
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t i = 0; i < n; ++i) {
          const T diff = pa.data[i] - pb.data[i];
          if (pa.requires_grad) pa.grad_buffer()[i] += coef * diff;
          if (pb.requires_grad) pb.grad_buffer()[i] -= coef * diff;
        }
      });
}

namespace {

// Angle table [tokens, head_dim/2] shared by forward and backward rotation.
template <typename T>
void rope_angles(const std::vector<TokenPosition>& positions, const RopeSplit& split, double base,
                 std::vector<T>& cos_out, std::vector<T>& sin_out) {
  const std::size_t half = split.total() / 2;
  cos_out.resize(positions.size() * half);
  sin_out.resize(positions.size() * half);
  const std::size_t groups[3] = {split.temporal, split.row, split.col};
  for (std::size_t t = 0; t < positions.size(); ++t) {
    std::size_t pair = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t g = groups[axis];
      for (std::size_t i = 0; i < g / 2; ++i, ++pair) {
        const double theta =
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(g));
        const double angle = static_cast<double>(positions[t][axis]) * theta;
        cos_out[t * half + pair] = static_cast<T>(std::cos(angle));
        sin_out[t * half + pair] = static_cast<T>(std::sin(angle));
      }
    }
  }
}

// Rotates consecutive pairs (2i, 2i+1) of every head; sign=-1 applies the inverse.
template <typename T>
void rope_rotate(const T* in, T* out, std::size_t tokens, std::size_t heads, std::size_t head_dim,
                 const std::vector<T>& cs, const std::vector<T>& sn, T sign, bool accumulate) {
  const std::size_t half = head_dim / 2;
  const std::size_t d = heads * head_dim;
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = t * d + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = cs[t * half + i];
        const T s = sign * sn[t * half + i];
        const T a = in[off + 2 * i];
        const T b = in[off + 2 * i + 1];
        const T ra = a * c - b * s;
        const T rb = a * s + b * c;
        if (accumulate) {
          out[off + 2 * i] += ra;
          out[off + 2 * i + 1] += rb;
        } else {
          out[off + 2 * i] = ra;
          out[off + 2 * i + 1] = rb;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::size_t heads, const std::vector<TokenPosition>& positions,
               const RopeSplit& split, double base) {
  require_rank2(x, "rope");
  if (split.temporal % 2 || split.row % 2 || split.col % 2) {
    throw ConfigError("rope: every axis group must have an even size");
  }
  if (heads == 0 || x.dim(1) % heads != 0 || x.dim(1) / heads != split.total()) {
    throw ConfigError("rope: head dim " + std::to_string(heads ? x.dim(1) / heads : 0) +
                      " does not equal rotary split total " + std::to_string(split.total()));
  }
  if (positions.size() != x.dim(0)) {
    throw AlignmentError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(x.dim(0)) + " tokens");
  }
  const std::size_t tokens = x.dim(0), head_dim = split.total();
  std::vector<T> cs, sn;
  rope_angles(positions, split, base, cs, sn);
  std::vector<T> out(x.numel());
  rope_rotate(x.data().data(), out.data(), tokens, heads, head_dim, cs, sn, T(1), false);
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x},
      [tokens, heads, head_dim, cs = std::move(cs), sn = std::move(sn)](detail::Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        rope_rotate(self.grad.data(), g.data(), tokens, heads, head_dim, cs, sn, T(-1), true);
      });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
  require_same_shape(q, k, "attention_weights");
  require_rank2(q, "attention_weights");
  const std::size_t n = q.dim(0), d = q.dim(1), dh = d / heads;
  const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> probs(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    ConstHeadMap<T> qh(q.data().data() + h * dh, static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
    ConstHeadMap<T> kh(k.data().data() + h * dh, static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
    MatMap<T> p(probs.data() + h * n * n, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    p.noalias() = (qh * kh.transpose()) * scale_f;
    // Scalar loops: vectorized exp and sums would depend on buffer alignment.
    for (std::size_t r = 0; r < n; ++r) {
      T* row = probs.data() + h * n * n + r * n;
      const T mx = *std::max_element(row, row + n);
      T total = 0;
      for (std::size_t c = 0; c < n; ++c) total += row[c] = std::exp(row[c] - mx);
      for (std::size_t c = 0; c < n; ++c) row[c] /= total;
    }
  }
  return Tensor<T>({heads, n, n}, std::move(probs));
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t heads) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  require_rank2(q, "attention");
  if (heads == 0 || q.dim(1) % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(q.dim(1)) +
                      " not divisible by head count " + std::to_string(heads));
  }
  const std::size_t n = q.dim(0), d = q.dim(1), dh = d / heads;
  const auto nn = static_cast<Eigen::Index>(n);
  const auto ndh = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  Tensor<T> probs_t = attention_weights(q, k, heads);
  std::vector<T> probs(probs_t.data().begin(), probs_t.data().end());
  std::vector<T> out(n * d);
  for (std::size_t h = 0; h < heads; ++h) {
    ConstMatMap<T> p(probs.data() + h * n * n, nn, nn);
    ConstHeadMap<T> vh(v.data().data() + h * dh, nn, ndh, stride);
    HeadMap<T> oh(out.data() + h * dh, nn, ndh, stride);
    oh.noalias() = p * vh;
  }
  return Tensor<T>::make_result(
      q.shape(), std::move(out), {q, k, v},
      [n, d, dh, heads, probs = std::move(probs)](detail::Node<T>& self) {
        const auto nn = static_cast<Eigen::Index>(n);
        const auto ndh = static_cast<Eigen::Index>(dh);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
        const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        RowMat<T> dp(nn, nn);
        for (std::size_t h = 0; h < heads; ++h) {
          ConstMatMap<T> p(probs.data() + h * n * n, nn, nn);
          ConstHeadMap<T> go(self.grad.data() + h * dh, nn, ndh, stride);
          ConstHeadMap<T> qh(pq.data.data() + h * dh, nn, ndh, stride);
          ConstHeadMap<T> kh(pk.data.data() + h * dh, nn, ndh, stride);
          ConstHeadMap<T> vh(pv.data.data() + h * dh, nn, ndh, stride);
          if (pv.requires_grad) {
            HeadMap<T> gv(pv.grad_buffer().data() + h * dh, nn, ndh, stride);
            gv.noalias() += p.transpose() * go;
          }
          if (!pq.requires_grad && !pk.requires_grad) continue;
          dp.noalias() = go * vh.transpose();
          // Softmax Jacobian: dS = P * (dP - rowsum(dP * P)).
          for (Eigen::Index r = 0; r < nn; ++r) {
            T rowdot = 0;
            for (Eigen::Index c = 0; c < nn; ++c) rowdot += dp(r, c) * p(r, c);
            for (Eigen::Index c = 0; c < nn; ++c) dp(r, c) = p(r, c) * (dp(r, c) - rowdot) * scale_f;
          }
          if (pq.requires_grad) {
            HeadMap<T> gq(pq.grad_buffer().data() + h * dh, nn, ndh, stride);
            gq.noalias() += dp * kh;
          }
          if (pk.requires_grad) {
            HeadMap<T> gk(pk.grad_buffer().data() + h * dh, nn, ndh, stride);
            gk.noalias() += dp.transpose() * qh;
          }
        }
      });
}

#define CATV2TON_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_rowwise(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> rope(const Tensor<T>&, std::size_t, const std::vector<TokenPosition>&,     \
                          const RopeSplit&, double);                                            \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                               std::size_t);                                                    \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&, std::size_t);

CATV2TON_INSTANTIATE_OPS(float)
CATV2TON_INSTANTIATE_OPS(double)

}  // namespace catv2ton
