#pragma once

#include <optional>
#include <vector>

#include "scnaps/tensor.hpp"

namespace scnaps {

// Lower-triangular Cholesky factor of (A + jitter*I).
struct CholeskyFactor {
  Tensor lower;
  double jitter = 0.0;

  std::size_t dim() const noexcept { return lower.rows(); }
  // Rough 2-norm condition estimate from the factor diagonal. Cheap, and good
  // enough for diagnostics; it is a lower bound on the true condition number.
  double condition_estimate() const;
};

struct JitterPolicy {
  double relative_start = 1e-10;  // multiplied by trace(A)/d
  double growth = 10.0;
  int max_retries = 5;
};

// Plain Cholesky on the lower triangle of `a`. Returns nullopt when a pivot is
// not strictly positive (or not finite).
std::optional<Tensor> cholesky_lower(const Tensor& a);

// Cholesky with jitter escalation: tries A, then A + j*I for
// j = start*trace(A)/d * growth^r, r = 0..max_retries-1. Throws SpdError with
// every jitter level attempted when all fail.
CholeskyFactor factor_spd(const Tensor& a, const JitterPolicy& policy = {});

// Solves (L L^T) X = B for X, B being d x m.
Tensor cholesky_solve(const CholeskyFactor& factor, const Tensor& b);

}  // namespace scnaps
