// Copyright 2026 The MP4SR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define MP4SR_GRAPH_INSTANTIATE
#include "numkernel/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <type_traits>

namespace mp4sr::nk {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// c[m, n] (+)= op(a) * op(b), all row-major; op(a) is m x k, op(b) is k x n.
template <class Real>
void gemm(const Real* a, bool ta, const Real* b, bool tb, Real* c, std::size_t m, std::size_t n,
          std::size_t k, bool accumulate) {
  using Map = Eigen::Map<const RowMat<Real>>;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n),
             K = static_cast<Eigen::Index>(k);
  Map A(a, ta ? K : M, ta ? M : K);
  Map B(b, tb ? N : K, tb ? K : N);
  Eigen::Map<RowMat<Real>> C(c, M, N);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

// Wider accumulator for row statistics; keeps the mean of a constant row exact.
template <class Real>
using Acc = std::conditional_t<std::is_same_v<Real, float>, double, long double>;

bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

void require_same(const Shape& a, const Shape& b, std::string_view op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

}  // namespace

template <class Real>
std::vector<std::string_view> Graph<Real>::trace() const {
  std::vector<std::string_view> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.op);
  return out;
}

template <class Real>
bool Graph<Real>::wants_grad(std::initializer_list<const T*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const T* t) { return t->requires_grad(); });
}

template <class Real>
Tensor<Real> Graph<Real>::output(std::string_view op, Shape shape, std::vector<Real> values,
                                 bool needs_grad) {
  for (Real v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(shape));
    }
  }
  return T::from(std::move(shape), std::move(values), needs_grad);
}

template <class Real>
void Graph<Real>::record(std::string_view op, std::function<void()> fn) {
  records_.push_back(Record{op, std::move(fn)});
}

template <class Real>
Tensor<Real> Graph<Real>::matmul(const T& a, const T& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<Real> out(m * n);
  gemm(a.data().data(), false, b.data().data(), false, out.data(), m, n, k, false);
  const bool g = wants_grad({&a, &b});
  T y = output("matmul", std::move(shape), std::move(out), g);
  if (g) {
    record("matmul", [a = T(a), b = T(b), y, m, n, k]() mutable {
      if (a.requires_grad())
        gemm(y.grad().data(), false, b.data().data(), true, a.grad().data(), m, k, n, true);
      if (b.requires_grad())
        gemm(a.data().data(), true, y.grad().data(), false, b.grad().data(), k, n, m, true);
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::bmm(const T& a, const T& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<Real> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(a.data().data() + i * m * k, false, b.data().data() + i * k * n, transpose_b,
         out.data() + i * m * n, m, n, k, false);
  }
  const bool g = wants_grad({&a, &b});
  T y = output("bmm", Shape{batch, m, n}, std::move(out), g);
  if (g) {
    record("bmm", [a = T(a), b = T(b), y, batch, m, n, k, transpose_b]() mutable {
      for (std::size_t i = 0; i < batch; ++i) {
        const Real* gy = y.grad().data() + i * m * n;
        if (a.requires_grad()) {
          // dA = G op(B)^T
          gemm(gy, false, b.data().data() + i * k * n, !transpose_b, a.grad().data() + i * m * k,
               m, k, n, true);
        }
        if (b.requires_grad()) {
          if (transpose_b)  // B stored n x k: dB = G^T A
            gemm(gy, true, a.data().data() + i * m * k, false, b.grad().data() + i * k * n, n, k,
                 m, true);
          else  // dB = A^T G
            gemm(a.data().data() + i * m * k, true, gy, false, b.grad().data() + i * k * n, k, n,
                 m, true);
        }
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::transpose(const T& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<Real> out(m * n);
  auto x = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  const bool g = wants_grad({&a});
  T y = output("transpose", Shape{n, m}, std::move(out), g);
  if (g) {
    record("transpose", [a = T(a), y, m, n]() mutable {
      auto ga = a.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gy[j * m + i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::add(const T& a, const T& b) {
  require_same(a.shape(), b.shape(), "add");
  std::vector<Real> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + z[i];
  const bool g = wants_grad({&a, &b});
  T y = output("add", a.shape(), std::move(out), g);
  if (g) {
    record("add", [a = T(a), b = T(b), y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::sub(const T& a, const T& b) {
  require_same(a.shape(), b.shape(), "sub");
  std::vector<Real> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - z[i];
  const bool g = wants_grad({&a, &b});
  T y = output("sub", a.shape(), std::move(out), g);
  if (g) {
    record("sub", [a = T(a), b = T(b), y]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::mul(const T& a, const T& b) {
  require_same(a.shape(), b.shape(), "mul");
  std::vector<Real> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * z[i];
  const bool g = wants_grad({&a, &b});
  T y = output("mul", a.shape(), std::move(out), g);
  if (g) {
    record("mul", [a = T(a), b = T(b), y]() mutable {
      auto gy = y.grad();
      auto x = a.data(), z = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * z[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * x[i];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::add_broadcast(const T& a, const T& b) {
  if (!is_suffix(b.shape(), a.shape()) || b.numel() == 0) {
    throw DimensionError("add_broadcast: " + shape_str(b.shape()) + " is not a suffix of " +
                         shape_str(a.shape()));
  }
  const std::size_t nb = b.numel();
  std::vector<Real> out(a.numel());
  auto x = a.data(), z = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + z[i % nb];
  const bool g = wants_grad({&a, &b});
  T y = output("add_broadcast", a.shape(), std::move(out), g);
  if (g) {
    record("add_broadcast", [a = T(a), b = T(b), y, nb]() mutable {
      auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i % nb] += gy[i];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::scale(const T& a, Real c) {
  std::vector<Real> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
  const bool g = wants_grad({&a});
  T y = output("scale", a.shape(), std::move(out), g);
  if (g) {
    record("scale", [a = T(a), y, c]() mutable {
      auto ga = a.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::gelu(const T& a) {
  const Real inv_sqrt2 = Real(1) / std::numbers::sqrt2_v<Real>;
  std::vector<Real> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Real(0.5) * x[i] * (Real(1) + std::erf(x[i] * inv_sqrt2));
  const bool g = wants_grad({&a});
  T y = output("gelu", a.shape(), std::move(out), g);
  if (g) {
    record("gelu", [a = T(a), y, inv_sqrt2]() mutable {
      const Real inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Real>;
      auto ga = a.grad();
      auto gy = y.grad();
      auto x = a.data();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        const Real cdf = Real(0.5) * (Real(1) + std::erf(x[i] * inv_sqrt2));
        const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * x[i] * x[i]);
        ga[i] += gy[i] * (cdf + x[i] * pdf);
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::sum(const T& a) {
  Acc<Real> s = 0;
  for (Real v : a.data()) s += v;
  const bool g = wants_grad({&a});
  T y = output("sum", Shape{}, {static_cast<Real>(s)}, g);
  if (g) {
    record("sum", [a = T(a), y]() mutable {
      const Real gy = y.grad()[0];
      for (Real& v : T(a).grad()) v += gy;
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::mean(const T& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

template <class Real>
Tensor<Real> Graph<Real>::logsumexp(const T& a, const Mask& mask) {
  if (a.rank() < 1 || mask.size() != a.numel()) {
    throw DimensionError("logsumexp: mask size " + std::to_string(mask.size()) +
                         " does not match " + shape_str(a.shape()));
  }
  const std::size_t n = a.shape().back();
  const std::size_t rows = n ? a.numel() / n : 0;
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<Real> out(rows);
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[r * n + j]) mx = std::max(mx, x[r * n + j]);
    if (!std::isfinite(mx)) throw ContractError("logsumexp: row with no unmasked entry");
    Acc<Real> s = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (mask[r * n + j]) s += std::exp(static_cast<Acc<Real>>(x[r * n + j] - mx));
    out[r] = mx + static_cast<Real>(std::log(s));
  }
  const bool g = wants_grad({&a});
  T y = output("logsumexp", std::move(shape), std::move(out), g);
  if (g) {
    record("logsumexp", [a = T(a), y, mask, n, rows]() mutable {
      auto ga = a.grad();
      auto x = a.data();
      auto gy = y.grad();
      auto v = y.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j)
          if (mask[r * n + j]) ga[r * n + j] += gy[r] * std::exp(x[r * n + j] - v[r]);
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::softmax(const T& a) {
  return masked_softmax(a, Mask(a.numel(), 1));
}

template <class Real>
Tensor<Real> Graph<Real>::masked_softmax(const T& a, const Mask& mask) {
  if (a.rank() < 1 || mask.size() != a.numel()) {
    throw DimensionError("softmax: mask size " + std::to_string(mask.size()) +
                         " does not match " + shape_str(a.shape()));
  }
  const std::size_t n = a.shape().back();
  const std::size_t rows = n ? a.numel() / n : 0;
  std::vector<Real> out(a.numel(), Real(0));
  auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * n;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[o + j]) mx = std::max(mx, x[o + j]);
    if (!std::isfinite(mx)) continue;
    Acc<Real> s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask[o + j]) continue;
      out[o + j] = std::exp(x[o + j] - mx);
      s += out[o + j];
    }
    const Real inv = static_cast<Real>(1 / s);
    for (std::size_t j = 0; j < n; ++j) out[o + j] *= inv;
  }
  const bool g = wants_grad({&a});
  T y = output("softmax", a.shape(), std::move(out), g);
  if (g) {
    record("softmax", [a = T(a), y, n, rows]() mutable {
      auto ga = a.grad();
      auto gy = y.grad();
      auto p = y.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * n;
        Acc<Real> dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[o + j] * p[o + j];
        for (std::size_t j = 0; j < n; ++j)
          ga[o + j] += p[o + j] * (gy[o + j] - static_cast<Real>(dot));
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::layer_norm(const T& x, const T& gamma, const T& beta, Real eps) {
  if (x.rank() < 1 || gamma.rank() < 1 || gamma.shape() != beta.shape() ||
      !is_suffix(gamma.shape(), x.shape())) {
    throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const std::size_t gn = gamma.numel();
  std::vector<Real> out(x.numel()), xhat(x.numel()), rstd(rows);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t o = r * n;
    Acc<Real> s = 0;
    for (std::size_t j = 0; j < n; ++j) s += xv[o + j];
    const Real mu = static_cast<Real>(s / static_cast<Acc<Real>>(n));
    Acc<Real> v = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Acc<Real> d = xv[o + j] - mu;
      v += d * d;
    }
    const Real var = static_cast<Real>(v / static_cast<Acc<Real>>(n));
    rstd[r] = Real(1) / std::sqrt(var + eps);
    const std::size_t go = o % gn;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[o + j] = (xv[o + j] - mu) * rstd[r];
      out[o + j] = xhat[o + j] * gv[go + j] + bv[go + j];
    }
  }
  const bool g = wants_grad({&x, &gamma, &beta});
  T y = output("layer_norm", x.shape(), std::move(out), g);
  if (g) {
    record("layer_norm", [x = T(x), gamma = T(gamma), beta = T(beta), y, xhat = std::move(xhat), rstd = std::move(rstd), n, rows, gn]() mutable {
      auto gy = y.grad();
      auto gv = gamma.data();
      std::vector<Real> dxhat(n);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * n;
        const std::size_t go = o % gn;
        if (gamma.requires_grad()) {
          auto gg = gamma.grad();
          for (std::size_t j = 0; j < n; ++j) gg[go + j] += gy[o + j] * xhat[o + j];
        }
        if (beta.requires_grad()) {
          auto gb = beta.grad();
          for (std::size_t j = 0; j < n; ++j) gb[go + j] += gy[o + j];
        }
        if (x.requires_grad()) {
          Acc<Real> m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = gy[o + j] * gv[go + j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xhat[o + j];
          }
          const Real a1 = static_cast<Real>(m1 / static_cast<Acc<Real>>(n));
          const Real a2 = static_cast<Real>(m2 / static_cast<Acc<Real>>(n));
          auto gx = x.grad();
          for (std::size_t j = 0; j < n; ++j)
            gx[o + j] += rstd[r] * (dxhat[j] - a1 - xhat[o + j] * a2);
        }
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::l2_normalize(const T& x, Real eps) {
  if (x.rank() < 1) throw DimensionError("l2_normalize: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.numel() / n : 0;
  std::vector<Real> out(x.numel()), norm(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    Acc<Real> s = 0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<Acc<Real>>(xv[r * n + j]) * xv[r * n + j];
    norm[r] = static_cast<Real>(std::sqrt(s));
    const Real inv = Real(1) / (norm[r] + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] * inv;
  }
  const bool g = wants_grad({&x});
  T y = output("l2_normalize", x.shape(), std::move(out), g);
  if (g) {
    record("l2_normalize", [x = T(x), y, norm = std::move(norm), n, rows, eps]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      auto xv = x.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * n;
        const Real s = norm[r] + eps;
        Acc<Real> dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[o + j] * xv[o + j];
        const Real c = norm[r] > Real(0) ? static_cast<Real>(dot) / (s * s * norm[r]) : Real(0);
        for (std::size_t j = 0; j < n; ++j) gx[o + j] += gy[o + j] / s - xv[o + j] * c;
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::dropout(const T& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  Mask keep(x.numel());
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = rng.uniform() >= rate;
    out[i] = keep[i] ? xv[i] * keep_scale : Real(0);
  }
  const bool g = wants_grad({&x});
  T y = output("dropout", x.shape(), std::move(out), g);
  if (g) {
    record("dropout", [x = T(x), y, keep = std::move(keep), keep_scale]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i)
        if (keep[i]) gx[i] += gy[i] * keep_scale;
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::reshape(const T& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  const bool g = wants_grad({&a});
  T y = output("reshape", std::move(shape), std::move(out), g);
  if (g) {
    record("reshape", [a = T(a), y]() mutable {
      auto ga = a.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::gather_rows(const T& table, std::span<const std::int64_t> index) {
  if (table.rank() < 1) throw DimensionError("gather_rows: scalar table");
  const std::size_t rows = table.dim(0);
  const std::size_t w = rows ? table.numel() / rows : 0;
  Shape shape = table.shape();
  shape[0] = index.size();
  std::vector<Real> out(index.size() * w, Real(0));
  auto tv = table.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t r = index[i];
    if (r < -1 || r >= static_cast<std::int64_t>(rows)) {
      throw DimensionError("gather_rows: index " + std::to_string(r) + " outside table of " +
                           std::to_string(rows) + " rows");
    }
    if (r >= 0) std::copy_n(tv.begin() + r * w, w, out.begin() + i * w);
  }
  const bool g = wants_grad({&table});
  T y = output("gather_rows", std::move(shape), std::move(out), g);
  if (g) {
    std::vector<std::int64_t> idx(index.begin(), index.end());
    record("gather_rows", [table = T(table), y, idx = std::move(idx), w]() mutable {
      auto gt = table.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        for (std::size_t j = 0; j < w; ++j) gt[idx[i] * w + j] += gy[i * w + j];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::where_rows(const Mask& mask, const T& a, const T& b) {
  require_same(a.shape(), b.shape(), "where_rows");
  if (a.rank() < 1 || mask.size() != a.dim(0)) {
    throw DimensionError("where_rows: mask of " + std::to_string(mask.size()) +
                         " rows for tensor " + shape_str(a.shape()));
  }
  const std::size_t w = a.dim(0) ? a.numel() / a.dim(0) : 0;
  std::vector<Real> out(a.numel());
  for (std::size_t r = 0; r < mask.size(); ++r) {
    auto src = mask[r] ? b.data() : a.data();
    std::copy_n(src.begin() + r * w, w, out.begin() + r * w);
  }
  const bool g = wants_grad({&a, &b});
  T y = output("where_rows", a.shape(), std::move(out), g);
  if (g) {
    record("where_rows", [mask, a = T(a), b = T(b), y, w]() mutable {
      auto gy = y.grad();
      for (std::size_t r = 0; r < mask.size(); ++r) {
        T& dst = mask[r] ? b : a;
        if (!dst.requires_grad()) continue;
        auto gd = dst.grad();
        for (std::size_t j = 0; j < w; ++j) gd[r * w + j] += gy[r * w + j];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::concat_cols(const T& a, const T& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("concat_cols: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n1 = a.dim(1), n2 = b.dim(1), n = n1 + n2;
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * n1, n1, out.begin() + i * n);
    std::copy_n(b.data().begin() + i * n2, n2, out.begin() + i * n + n1);
  }
  const bool g = wants_grad({&a, &b});
  T y = output("concat_cols", Shape{m, n}, std::move(out), g);
  if (g) {
    record("concat_cols", [a = T(a), b = T(b), y, m, n1, n2, n]() mutable {
      auto gy = y.grad();
      for (std::size_t i = 0; i < m; ++i) {
        if (a.requires_grad())
          for (std::size_t j = 0; j < n1; ++j) a.grad()[i * n1 + j] += gy[i * n + j];
        if (b.requires_grad())
          for (std::size_t j = 0; j < n2; ++j) b.grad()[i * n2 + j] += gy[i * n + n1 + j];
      }
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::select_step(const T& x, std::size_t t) {
  if (x.rank() != 3 || t >= x.dim(1)) {
    throw DimensionError("select_step: step " + std::to_string(t) + " of " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
  std::vector<Real> out(batch * d);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(x.data().begin() + (b * steps + t) * d, d, out.begin() + b * d);
  const bool g = wants_grad({&x});
  T y = output("select_step", Shape{batch, d}, std::move(out), g);
  if (g) {
    record("select_step", [x = T(x), y, batch, steps, d, t]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < d; ++j) gx[(b * steps + t) * d + j] += gy[b * d + j];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::split_heads(const T& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) {
    throw DimensionError("split_heads: " + shape_str(x.shape()) + " into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t batch = x.dim(0), steps = x.dim(1), width = x.dim(2), dh = width / heads;
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < steps; ++t)
        std::copy_n(xv.begin() + (b * steps + t) * width + h * dh, dh,
                    out.begin() + ((b * heads + h) * steps + t) * dh);
  const bool g = wants_grad({&x});
  T y = output("split_heads", Shape{batch * heads, steps, dh}, std::move(out), g);
  if (g) {
    record("split_heads", [x = T(x), y, batch, heads, steps, width, dh]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < dh; ++j)
              gx[(b * steps + t) * width + h * dh + j] += gy[((b * heads + h) * steps + t) * dh + j];
    });
  }
  return y;
}

template <class Real>
Tensor<Real> Graph<Real>::merge_heads(const T& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: " + shape_str(x.shape()) + " from " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t batch = x.dim(0) / heads, steps = x.dim(1), dh = x.dim(2), width = dh * heads;
  std::vector<Real> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < steps; ++t)
        std::copy_n(xv.begin() + ((b * heads + h) * steps + t) * dh, dh,
                    out.begin() + (b * steps + t) * width + h * dh);
  const bool g = wants_grad({&x});
  T y = output("merge_heads", Shape{batch, steps, width}, std::move(out), g);
  if (g) {
    record("merge_heads", [x = T(x), y, batch, heads, steps, width, dh]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < steps; ++t)
            for (std::size_t j = 0; j < dh; ++j)
              gx[((b * heads + h) * steps + t) * dh + j] += gy[(b * steps + t) * width + h * dh + j];
    });
  }
  return y;
}

template <class Real>
void Graph<Real>::backward(const T& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (consumed_) throw ContractError("backward: graph already consumed");
  consumed_ = true;
  if (!loss.requires_grad()) return;
  T l = loss;
  l.grad()[0] += Real(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
  records_.clear();
}

template class Graph<float>;
template class Graph<double>;

}  // namespace mp4sr::nk
