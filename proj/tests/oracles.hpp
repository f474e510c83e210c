#pragma once

// Reference computations shared by the unit and acceptance tests. Nothing in
// here goes through the tape: derivatives come from function values only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lnpt/tensor.hpp"

namespace oracle {

using Fn = std::function<double(std::span<const double>)>;

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(gen);
  return v;
}

// Values bounded away from zero, so relu kinks stay out of finite-difference reach.
inline std::vector<double> random_away_from_zero(std::size_t n, std::uint64_t seed) {
  auto v = random_vector(n, seed, 0.05, 1.0);
  std::mt19937_64 gen(seed ^ 0x9e3779b97f4a7c15ULL);
  for (double& x : v) x = (gen() & 1) ? x : -x;
  return v;
}

inline double central_difference(const Fn& f, std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline std::vector<double> fd_gradient(const Fn& f, const std::vector<double>& x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = central_difference(f, x, i, h);
  return g;
}

// d2f/dx_i2 from three function values.
inline double second_difference(const Fn& f, std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  const double mid = f(x);
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - 2.0 * mid + down) / (h * h);
}

// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
// turning rounding noise into huge ratios.
inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b, double floor = 1e-3) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

// Scalar reduction <out, r> for a fixed random r; used to check vector-valued ops.
inline lnpt::Tensor weights_like(const lnpt::Tensor& t, std::uint64_t seed) {
  return lnpt::Tensor(t.shape(), random_vector(t.numel(), seed));
}

// Smallest |preactivation| of a dense(in, h) -> relu first layer, computed by
// hand from the flat [W (h x in), b (h)] prefix. Finite differences are only
// trustworthy when every unit stays clear of its kink.
inline double relu_margin(std::span<const double> theta, std::span<const double> inputs, std::size_t in,
                          std::size_t hidden) {
  double m = 1e300;
  for (std::size_t n = 0; n < inputs.size() / in; ++n)
    for (std::size_t j = 0; j < hidden; ++j) {
      double z = theta[hidden * in + j];
      for (std::size_t k = 0; k < in; ++k) z += theta[j * in + k] * inputs[n * in + k];
      m = std::min(m, std::abs(z));
    }
  return m;
}

// Signs of every hidden preactivation of a dense+relu stack laid out as [W (out x in), b] per layer.
inline std::vector<bool> relu_pattern(std::span<const double> theta, std::span<const double> inputs, std::size_t in,
                                      const std::vector<std::size_t>& widths) {
  std::vector<bool> signs;
  for (std::size_t n = 0; n < inputs.size() / in; ++n) {
    std::vector<double> a(inputs.begin() + n * in, inputs.begin() + (n + 1) * in);
    std::size_t off = 0;
    for (std::size_t h : widths) {
      std::vector<double> z(h);
      for (std::size_t j = 0; j < h; ++j) {
        z[j] = theta[off + h * a.size() + j];
        for (std::size_t k = 0; k < a.size(); ++k) z[j] += theta[off + j * a.size() + k] * a[k];
        signs.push_back(z[j] > 0);
        z[j] = std::max(z[j], 0.0);
      }
      off += h * a.size() + h;
      a = z;
    }
  }
  return signs;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lnpt-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
