#include "lnpt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lnpt/error.hpp"

namespace lnpt::ops {

namespace {

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

// Row-wise log-softmax of a [n,k] buffer.
std::vector<Scalar> log_softmax_rows(std::span<const Scalar> z, std::size_t n, std::size_t k) {
  std::vector<Scalar> out(z.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = z.data() + i * k;
    Scalar mx = *std::max_element(row, row + k);
    Scalar s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    Scalar lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = row[j] - lse;
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a.shape(), b.shape());
  std::vector<Scalar> c(n * m, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    Scalar* crow = c.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar aip = A[i * k + p];
      const Scalar* brow = B.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return make_result("matmul", {n, m}, std::move(c), {a, b},
                     [a, b, n, k, m](const detail::TensorImpl&, std::span<const Scalar> g,
                                     std::span<std::vector<Scalar>* const> grads) {
                       auto A = a.data();
                       auto B = b.data();
                       if (auto* ga = grads[0]) {
                         for (std::size_t i = 0; i < n; ++i) {
                           const Scalar* grow = g.data() + i * m;
                           for (std::size_t p = 0; p < k; ++p) {
                             const Scalar* brow = B.data() + p * m;
                             Scalar s = 0;
                             for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
                             (*ga)[i * k + p] += s;
                           }
                         }
                       }
                       if (auto* gb = grads[1]) {
                         for (std::size_t i = 0; i < n; ++i) {
                           const Scalar* grow = g.data() + i * m;
                           for (std::size_t p = 0; p < k; ++p) {
                             const Scalar aip = A[i * k + p];
                             Scalar* gbrow = gb->data() + p * m;
                             for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<Scalar> out(n * m);
  auto A = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = A[i * m + j];
  return make_result("transpose", {m, n}, std::move(out), {a},
                     [n, m](const detail::TensorImpl&, std::span<const Scalar> g,
                            std::span<std::vector<Scalar>* const> grads) {
                       auto& ga = *grads[0];
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[j * n + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<Scalar> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [](const detail::TensorImpl&, std::span<const Scalar> g,
                        std::span<std::vector<Scalar>* const> grads) {
                       for (auto* gi : grads) {
                         if (!gi) continue;
                         for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<Scalar> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [](const detail::TensorImpl&, std::span<const Scalar> g,
                        std::span<std::vector<Scalar>* const> grads) {
                       if (auto* ga = grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                       if (auto* gb = grads[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<Scalar> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [a, b](const detail::TensorImpl&, std::span<const Scalar> g,
                            std::span<std::vector<Scalar>* const> grads) {
                       auto A = a.data();
                       auto B = b.data();
                       if (auto* ga = grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
                       if (auto* gb = grads[1])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
                     });
}

Tensor scale(const Tensor& a, Scalar s) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (Scalar& v : out) v *= s;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [s](const detail::TensorImpl&, std::span<const Scalar> g,
                         std::span<std::vector<Scalar>* const> grads) {
                       auto& ga = *grads[0];
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("add_bias: expected [N,C] or [N,C,H,W], got " + shape_string(x.shape()));
  }
  require_rank("add_bias", b, 1);
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (b.dim(0) != c) mismatch("add_bias", x.shape(), b.shape());
  const std::size_t inner = x.numel() / (n * c);
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  auto B = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      Scalar* p = out.data() + (i * c + ch) * inner;
      for (std::size_t s = 0; s < inner; ++s) p[s] += B[ch];
    }
  return make_result("add_bias", x.shape(), std::move(out), {x, b},
                     [n, c, inner](const detail::TensorImpl&, std::span<const Scalar> g,
                                   std::span<std::vector<Scalar>* const> grads) {
                       if (auto* gx = grads[0])
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                       if (auto* gb = grads[1]) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const Scalar* p = g.data() + (i * c + ch) * inner;
                             Scalar s = 0;
                             for (std::size_t k = 0; k < inner; ++k) s += p[k];
                             (*gb)[ch] += s;
                           }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  for (Scalar& v : out) v = v > 0 ? v : 0.0;
  return make_result("relu", x.shape(), std::move(out), {x},
                     [](const detail::TensorImpl& out, std::span<const Scalar> g,
                        std::span<std::vector<Scalar>* const> grads) {
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (out.data[i] > 0) gx[i] += g[i];
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) mismatch("conv2d", x.shape(), w.shape());
  if (h + 2 * pad < kh || wd + 2 * pad < kw) mismatch("conv2d", x.shape(), w.shape());
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;

  // Visits every (output, weight, input) triple; fn(out_index, weight_index, input_index).
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::size_t oi = ((b * o + oc) * oh + oy) * ow + ox;
            for (std::size_t ic = 0; ic < c; ++ic)
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  const std::size_t wi = ((oc * c + ic) * kh + ky) * kw + kx;
                  const std::size_t xi = ((b * c + ic) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix);
                  fn(oi, wi, xi);
                }
              }
          }
  };

  std::vector<Scalar> out(n * o * oh * ow, 0.0);
  auto X = x.data();
  auto W = w.data();
  for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) { out[oi] += W[wi] * X[xi]; });

  return make_result("conv2d", {n, o, oh, ow}, std::move(out), {x, w},
                     [x, w, for_each_tap](const detail::TensorImpl&, std::span<const Scalar> g,
                                          std::span<std::vector<Scalar>* const> grads) {
                       auto X = x.data();
                       auto W = w.data();
                       auto* gx = grads[0];
                       auto* gw = grads[1];
                       for_each_tap([&](std::size_t oi, std::size_t wi, std::size_t xi) {
                         if (gx) (*gx)[xi] += W[wi] * g[oi];
                         if (gw) (*gw)[wi] += X[xi] * g[oi];
                       });
                     });
}

Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  require_rank("avg_pool2d", x, 4);
  if (k == 0 || x.dim(2) < k || x.dim(3) < k) {
    throw ShapeError("avg_pool2d: window " + std::to_string(k) + " does not fit " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  const Scalar inv = 1.0 / static_cast<Scalar>(k * k);
  std::vector<Scalar> out(n * c * oh * ow, 0.0);
  auto X = x.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        Scalar s = 0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) s += X[(p * h + oy * k + dy) * w + ox * k + dx];
        out[(p * oh + oy) * ow + ox] = s * inv;
      }
  return make_result("avg_pool2d", {n, c, oh, ow}, std::move(out), {x},
                     [n, c, h, w, oh, ow, k, inv](const detail::TensorImpl&, std::span<const Scalar> g,
                                                  std::span<std::vector<Scalar>* const> grads) {
                       auto& gx = *grads[0];
                       for (std::size_t p = 0; p < n * c; ++p)
                         for (std::size_t oy = 0; oy < oh; ++oy)
                           for (std::size_t ox = 0; ox < ow; ++ox) {
                             const Scalar v = g[(p * oh + oy) * ow + ox] * inv;
                             for (std::size_t dy = 0; dy < k; ++dy)
                               for (std::size_t dx = 0; dx < k; ++dx) gx[(p * h + oy * k + dy) * w + ox * k + dx] += v;
                           }
                     });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Scalar inv = 1.0 / static_cast<Scalar>(hw);
  std::vector<Scalar> out(n * c, 0.0);
  auto X = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    Scalar s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += X[p * hw + i];
    out[p] = s * inv;
  }
  return make_result("global_avg_pool", {n, c}, std::move(out), {x},
                     [n, c, hw, inv](const detail::TensorImpl&, std::span<const Scalar> g,
                                     std::span<std::vector<Scalar>* const> grads) {
                       auto& gx = *grads[0];
                       for (std::size_t p = 0; p < n * c; ++p)
                         for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g[p] * inv;
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x},
                     [](const detail::TensorImpl&, std::span<const Scalar> g,
                        std::span<std::vector<Scalar>* const> grads) {
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     });
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = x.dim(0);
  return reshape(x, {n, n == 0 ? 0 : x.numel() / n});
}

Tensor slice(const Tensor& flat, std::size_t offset, Shape shape) {
  require_rank("slice", flat, 1);
  const std::size_t len = shape_numel(shape);
  if (offset + len > flat.numel()) {
    throw ShapeError("slice: window [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                     ") exceeds " + shape_string(flat.shape()));
  }
  auto F = flat.data();
  std::vector<Scalar> out(F.begin() + static_cast<std::ptrdiff_t>(offset),
                          F.begin() + static_cast<std::ptrdiff_t>(offset + len));
  return make_result("slice", std::move(shape), std::move(out), {flat},
                     [offset](const detail::TensorImpl&, std::span<const Scalar> g,
                              std::span<std::vector<Scalar>* const> grads) {
                       auto& gf = *grads[0];
                       for (std::size_t i = 0; i < g.size(); ++i) gf[offset + i] += g[i];
                     });
}

Tensor softmax(const Tensor& logits) {
  require_rank("softmax", logits, 2);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<Scalar> out = log_softmax_rows(logits.data(), n, k);
  for (Scalar& v : out) v = std::exp(v);
  return make_result("softmax", logits.shape(), std::move(out), {logits},
                     [n, k](const detail::TensorImpl& out, std::span<const Scalar> g,
                            std::span<std::vector<Scalar>* const> grads) {
                       auto& gx = *grads[0];
                       for (std::size_t i = 0; i < n; ++i) {
                         const Scalar* y = out.data.data() + i * k;
                         const Scalar* gy = g.data() + i * k;
                         Scalar dot = 0;
                         for (std::size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
                         for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += y[j] * (gy[j] - dot);
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
  require_rank("cross_entropy", logits, 2);
  require_same("cross_entropy", logits, target);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  auto logp = log_softmax_rows(logits.data(), n, k);
  auto T = target.data();
  Scalar total = 0;
  for (std::size_t i = 0; i < n * k; ++i) {
    if (T[i] != 0) total -= T[i] * logp[i];
  }
  const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
  return make_result("cross_entropy", {}, {total * inv_n}, {logits, target},
                     [target, logp = std::move(logp), n, k, inv_n](const detail::TensorImpl&,
                                                                     std::span<const Scalar> g,
                                                                     std::span<std::vector<Scalar>* const> grads) {
                       auto T = target.data();
                       const Scalar s = g[0] * inv_n;
                       if (auto* gl = grads[0]) {
                         for (std::size_t i = 0; i < n; ++i) {
                           Scalar mass = 0;
                           for (std::size_t j = 0; j < k; ++j) mass += T[i * k + j];
                           for (std::size_t j = 0; j < k; ++j) {
                             const std::size_t q = i * k + j;
                             (*gl)[q] += s * (std::exp(logp[q]) * mass - T[q]);
                           }
                         }
                       }
                       if (auto* gt = grads[1]) {
                         for (std::size_t q = 0; q < n * k; ++q) (*gt)[q] -= s * logp[q];
                       }
                     });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same("mse", a, b);
  const std::size_t len = a.numel();
  if (len == 0) throw ShapeError("mse: empty input");
  auto A = a.data();
  auto B = b.data();
  Scalar s = 0;
  for (std::size_t i = 0; i < len; ++i) {
    const Scalar d = A[i] - B[i];
    s += d * d;
  }
  const Scalar inv = 1.0 / static_cast<Scalar>(len);
  return make_result("mse", {}, {s * inv}, {a, b},
                     [a, b, inv](const detail::TensorImpl&, std::span<const Scalar> g,
                                 std::span<std::vector<Scalar>* const> grads) {
                       auto A = a.data();
                       auto B = b.data();
                       const Scalar c = 2.0 * inv * g[0];
                       for (std::size_t i = 0; i < A.size(); ++i) {
                         const Scalar d = c * (A[i] - B[i]);
                         if (grads[0]) (*grads[0])[i] += d;
                         if (grads[1]) (*grads[1])[i] -= d;
                       }
                     });
}

Tensor sum(const Tensor& a) {
  Scalar s = 0;
  for (Scalar v : a.data()) s += v;
  return make_result("sum", {}, {s}, {a},
                     [](const detail::TensorImpl&, std::span<const Scalar> g,
                        std::span<std::vector<Scalar>* const> grads) {
                       for (Scalar& v : *grads[0]) v += g[0];
                     });
}

Tensor sum_squares(const Tensor& a) {
  Scalar s = 0;
  for (Scalar v : a.data()) s += v * v;
  return make_result("sum_squares", {}, {s}, {a},
                     [a](const detail::TensorImpl&, std::span<const Scalar> g,
                         std::span<std::vector<Scalar>* const> grads) {
                       auto A = a.data();
                       auto& ga = *grads[0];
                       for (std::size_t i = 0; i < A.size(); ++i) ga[i] += 2.0 * A[i] * g[0];
                     });
}

}  // namespace lnpt::ops
