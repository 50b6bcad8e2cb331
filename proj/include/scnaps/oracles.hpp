#pragma once

// Slow textbook references used to cross-check the pipeline. Nothing here
// calls into the tensor, linalg, autodiff or heads code.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scnaps/data.hpp"
#include "scnaps/episodes.hpp"

namespace scnaps::oracle {

using Vector = std::vector<double>;
using Matrix = std::vector<std::vector<double>>;

Matrix identity(std::size_t n);
Matrix multiply(const Matrix& a, const Matrix& b);
Vector multiply(const Matrix& a, const Vector& x);
double dot(const Vector& a, const Vector& b);

// Gauss-Jordan elimination with partial pivoting. Throws NumericError when a
// pivot falls below `tolerance` times the largest entry.
Matrix dense_reference_inverse(const Matrix& a, double tolerance = 1e-13);
Vector dense_reference_solve(const Matrix& a, const Vector& b);
double dense_reference_determinant(const Matrix& a);

Vector dense_reference_mean(const Matrix& rows);
// Two-pass covariance: the mean first, then centred products over n - 1.
Matrix dense_reference_covariance(const Matrix& rows);

Vector reference_softmax(const Vector& logits);

// ---- Gaussian mixtures -------------------------------------------------------

struct GaussianMixtureRef {
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
  Vector weights;

  void validate() const;
};

// Equal weights 1/K.
GaussianMixtureRef equal_weight_mixture(std::vector<Vector> means, std::vector<Matrix> covariances);

// pi_k N(x; mu_k, C_k) / sum_j pi_j N(x; mu_j, C_j), each density with its own
// normalising constant. Throws NumericError for a covariance that is not SPD.
Vector gmm_responsibilities(const Vector& query, const GaussianMixtureRef& mixture);

// The literal reading of the responsibility formula in which every component
// of the normaliser for class k uses C_k: returns that ratio for each k. It is
// a probability vector only when all covariances agree.
Vector gmm_responsibilities_shared_denominator(const Vector& query, const GaussianMixtureRef& mixture);

double log_gaussian_density(const Vector& x, const Vector& mean, const Matrix& covariance);

// ---- Bregman divergences -----------------------------------------------------

struct BregmanGenerator {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

// F(x) = 1/2 |x|^2
BregmanGenerator squared_norm_generator();
// F(x) = 1/2 x^T S^{-1} x
BregmanGenerator quadratic_generator(const Matrix& sigma);

// F(z) - F(z') - grad F(z')^T (z - z').
double bregman_divergence(const BregmanGenerator& gen, const Vector& z, const Vector& z_prime);

// Largest value of F((z+z')/2) - (F(z)+F(z'))/2 over `pairs` random pairs drawn
// from N(0, scale^2 I); convexity requires it to stay <= 1e-12.
double midpoint_convexity_gap(const BregmanGenerator& gen, std::size_t dim, std::size_t pairs, double scale,
                              std::uint64_t seed);

// ---- Bayes ceilings on synthetic families ------------------------------------

struct OracleEstimate {
  double accuracy = 0.0;
  double ci_halfwidth = 0.0;  // 1.96 sqrt(p (1 - p) / n)
  std::size_t queries = 0;
};

// Monte-Carlo accuracy of the quadratic discriminant built from the true
// class Gaussians. Each query draws an episode class subset as the protocol
// would (way only; shots are irrelevant with known parameters), a true class
// uniformly from it, and a point from that class's Gaussian.
OracleEstimate bayes_optimal_accuracy(const data::LabeledDataset& dataset, std::span<const int> classes,
                                      const episodes::EpisodeProtocol& protocol, std::size_t n_queries,
                                      std::uint64_t seed);

// Same draws, classified by the nearest true mean in Euclidean distance.
OracleEstimate isotropic_discriminant_accuracy(const data::LabeledDataset& dataset, std::span<const int> classes,
                                               const episodes::EpisodeProtocol& protocol, std::size_t n_queries,
                                               std::uint64_t seed);

struct OracleRow {
  std::string family;
  OracleEstimate estimate;
};

// Header: family,oracle_accuracy,ci
void write_oracle_csv(std::span<const OracleRow> rows, const std::filesystem::path& path);
std::vector<OracleRow> read_oracle_csv(const std::filesystem::path& path);

}  // namespace scnaps::oracle
