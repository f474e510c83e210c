#include "lnpt/second_order.hpp"

#include <cmath>
#include <string>

#include "lnpt/error.hpp"

namespace lnpt {

std::vector<Scalar> hvp(const Objective& f, std::span<const Scalar> theta, std::span<const Scalar> v, Scalar step) {
  if (v.size() != theta.size()) {
    throw ShapeError("hvp: direction has " + std::to_string(v.size()) + " entries, parameters have " +
                     std::to_string(theta.size()));
  }
  if (!(step > 0)) throw ConfigError("hvp: step must be positive");
  Scalar norm2 = 0;
  for (Scalar x : v) {
    if (!std::isfinite(x)) throw ConfigError("hvp: direction contains non-finite entries");
    norm2 += x * x;
  }
  if (norm2 == 0) throw ConfigError("hvp: direction vector is zero");
  const Scalar eps = step / std::sqrt(norm2);

  std::vector<Scalar> plus(theta.begin(), theta.end());
  std::vector<Scalar> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < v.size(); ++i) {
    plus[i] += eps * v[i];
    minus[i] -= eps * v[i];
  }
  auto gp = value_and_grad(f, plus).grad;
  auto gm = value_and_grad(f, minus).grad;
  std::vector<Scalar> out(theta.size());
  const Scalar inv = 1.0 / (2.0 * eps);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (gp[i] - gm[i]) * inv;
    if (!std::isfinite(out[i])) throw NumericError("hvp: non-finite product at index " + std::to_string(i));
  }
  return out;
}

std::vector<Scalar> hessian_diag_hutchinson(const Objective& f, std::span<const Scalar> theta, std::size_t samples,
                                            Rng& rng, Scalar step) {
  if (samples == 0) throw ConfigError("hessian_diag_hutchinson: need at least one probe");
  std::vector<Scalar> diag(theta.size(), 0.0);
  std::vector<Scalar> probe(theta.size());
  for (std::size_t k = 0; k < samples; ++k) {
    for (Scalar& x : probe) x = rng.rademacher();
    auto hv = hvp(f, theta, probe, step);
    for (std::size_t i = 0; i < diag.size(); ++i) diag[i] += probe[i] * hv[i];
  }
  const Scalar inv = 1.0 / static_cast<Scalar>(samples);
  for (Scalar& d : diag) d *= inv;
  return diag;
}

namespace {

void require_small(std::string_view op, std::size_t p) {
  if (p > kExactHessianLimit) {
    throw ConfigError(std::string(op) + ": " + std::to_string(p) + " parameters exceeds the exact-Hessian limit of " +
                      std::to_string(kExactHessianLimit));
  }
}

}  // namespace

std::vector<Scalar> hessian_diag_exact(const Objective& f, std::span<const Scalar> theta, Scalar step) {
  require_small("hessian_diag_exact", theta.size());
  std::vector<Scalar> diag(theta.size());
  std::vector<Scalar> e(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    e[i] = 1.0;
    diag[i] = hvp(f, theta, e, step)[i];
    e[i] = 0.0;
  }
  return diag;
}

std::vector<Scalar> hessian_full(const Objective& f, std::span<const Scalar> theta, Scalar step) {
  require_small("hessian_full", theta.size());
  const std::size_t p = theta.size();
  std::vector<Scalar> h(p * p);
  std::vector<Scalar> e(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    e[j] = 1.0;
    auto col = hvp(f, theta, e, step);
    for (std::size_t i = 0; i < p; ++i) h[i * p + j] = col[i];
    e[j] = 0.0;
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) {
      const Scalar m = 0.5 * (h[i * p + j] + h[j * p + i]);
      h[i * p + j] = h[j * p + i] = m;
    }
  return h;
}

}  // namespace lnpt
