#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace pftest {

using powerformer::Rng;
using powerformer::Tensor;

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Independent triple-loop matmul oracle (i,j,k dot-product order; the
// implementation accumulates in i,k,j order).
inline Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) {
        acc += a.data[i * k + l] * b.data[l * n + j];
      }
      c.data[i * n + j] = acc;
    }
  }
  return c;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

// Central-difference directional derivative of scalar_fn at x along dir,
// compared against the tape gradient dotted with dir. Returns the relative
// error.
inline double directional_fd_error(
    const std::function<double(const Tensor&)>& scalar_fn, const Tensor& x,
    const Tensor& dir, double tape_dot_dir, double h = 1e-5) {
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp.data[i] += h * dir.data[i];
    xm.data[i] -= h * dir.data[i];
  }
  const double fd = (scalar_fn(xp) - scalar_fn(xm)) / (2.0 * h);
  const double scale = std::max({std::abs(fd), std::abs(tape_dot_dir), 1e-8});
  return std::abs(fd - tape_dot_dir) / scale;
}

}  // namespace pftest
