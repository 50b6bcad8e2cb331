#include "scnaps/linalg.hpp"

#include <cmath>
#include <sstream>

#include "scnaps/errors.hpp"

namespace scnaps {

double CholeskyFactor::condition_estimate() const {
  double lo = INFINITY, hi = 0.0;
  for (std::size_t i = 0; i < lower.rows(); ++i) {
    const double v = lower(i, i);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lower.rows() == 0) return 1.0;
  const double r = hi / lo;
  return r * r;
}

std::optional<Tensor> cholesky_lower(const Tensor& a) {
  if (a.rows() != a.cols())
    throw ShapeError("cholesky: matrix must be square, got " + a.shape_string());
  const std::size_t n = a.rows();
  Tensor l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

CholeskyFactor factor_spd(const Tensor& a, const JitterPolicy& policy) {
  if (auto l = cholesky_lower(a)) return {std::move(*l), 0.0};

  const std::size_t n = a.rows();
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += a(i, i);
  double base = trace / static_cast<double>(n);
  if (!(base > 0.0) || !std::isfinite(base)) base = 1.0;

  std::vector<double> tried{0.0};
  double jitter = policy.relative_start * base;
  for (int r = 0; r < policy.max_retries; ++r, jitter *= policy.growth) {
    Tensor shifted = a;
    for (std::size_t i = 0; i < n; ++i) shifted(i, i) += jitter;
    tried.push_back(jitter);
    if (auto l = cholesky_lower(shifted)) return {std::move(*l), jitter};
  }
  std::ostringstream msg;
  msg << "matrix " << a.shape_string() << " is not positive definite; jitter tried:";
  for (double j : tried) msg << ' ' << j;
  throw SpdError(msg.str(), std::move(tried));
}

Tensor cholesky_solve(const CholeskyFactor& factor, const Tensor& b) {
  const Tensor& l = factor.lower;
  const std::size_t n = l.rows();
  if (b.rows() != n)
    throw ShapeError("spd_solve: factor " + l.shape_string() + " vs rhs " + b.shape_string());
  const std::size_t m = b.cols();
  Tensor x = b;
  // forward: L y = b
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l(i, k);
      for (std::size_t c = 0; c < m; ++c) x(i, c) -= lik * x(k, c);
    }
    const double inv = 1.0 / l(i, i);
    for (std::size_t c = 0; c < m; ++c) x(i, c) *= inv;
  }
  // backward: L^T x = y
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l(k, ii);
      for (std::size_t c = 0; c < m; ++c) x(ii, c) -= lki * x(k, c);
    }
    const double inv = 1.0 / l(ii, ii);
    for (std::size_t c = 0; c < m; ++c) x(ii, c) *= inv;
  }
  return x;
}

}  // namespace scnaps
