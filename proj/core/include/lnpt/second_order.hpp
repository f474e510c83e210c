#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lnpt/rng.hpp"
#include "lnpt/tensor.hpp"

namespace lnpt {

// Default finite-difference scale for Hessian-vector products.
inline constexpr Scalar kDefaultHvpStep = 1e-3;
// Largest parameter count for which the exact (column-by-column) Hessian is allowed.
inline constexpr std::size_t kExactHessianLimit = 64;

// Hessian-vector product by central differences of reverse-mode gradients:
//   Hv ~ [g(theta + e v) - g(theta - e v)] / (2 e),  e = step / |v|.
// Throws ConfigError for a zero or non-finite v, NumericError for a non-finite result.
std::vector<Scalar> hvp(const Objective& f, std::span<const Scalar> theta, std::span<const Scalar> v,
                        Scalar step = kDefaultHvpStep);

// Hutchinson estimate of diag(H): mean over `samples` Rademacher probes of v * Hv.
std::vector<Scalar> hessian_diag_hutchinson(const Objective& f, std::span<const Scalar> theta, std::size_t samples,
                                            Rng& rng, Scalar step = kDefaultHvpStep);

// diag(H) from P unit-vector HVPs. Requires P <= kExactHessianLimit.
std::vector<Scalar> hessian_diag_exact(const Objective& f, std::span<const Scalar> theta,
                                       Scalar step = kDefaultHvpStep);

// Full P x P Hessian (row-major), symmetrised. Requires P <= kExactHessianLimit.
std::vector<Scalar> hessian_full(const Objective& f, std::span<const Scalar> theta, Scalar step = kDefaultHvpStep);

}  // namespace lnpt
