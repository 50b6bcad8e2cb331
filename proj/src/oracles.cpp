#include "scnaps/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "scnaps/errors.hpp"

namespace scnaps::oracle {

Matrix identity(std::size_t n) {
  Matrix m(n, Vector(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Matrix out(n, Vector(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != k) throw ShapeError("oracle multiply: inner dimensions differ");
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
      out[i][j] = s;
    }
  }
  return out;
}

Vector multiply(const Matrix& a, const Vector& x) {
  Vector out(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = dot(a[i], x);
  return out;
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("oracle dot: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Matrix dense_reference_inverse(const Matrix& a, double tolerance) {
  const std::size_t n = a.size();
  for (const auto& row : a)
    if (row.size() != n) throw ShapeError("oracle inverse: matrix is not square");
  double scale = 0.0;
  for (const auto& row : a)
    for (double v : row) scale = std::max(scale, std::fabs(v));
  Matrix m = a;
  Matrix inv = identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    if (!(std::fabs(m[pivot][col]) > tolerance * scale)) throw NumericError("oracle inverse: matrix is singular");
    std::swap(m[pivot], m[col]);
    std::swap(inv[pivot], inv[col]);
    const double p = m[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      m[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = m[r][col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        m[r][j] -= f * m[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

Vector dense_reference_solve(const Matrix& a, const Vector& b) { return multiply(dense_reference_inverse(a), b); }

double dense_reference_determinant(const Matrix& a) {
  const std::size_t n = a.size();
  Matrix m = a;
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    if (m[pivot][col] == 0.0) return 0.0;
    if (pivot != col) {
      std::swap(m[pivot], m[col]);
      det = -det;
    }
    det *= m[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r][col] / m[col][col];
      for (std::size_t j = col; j < n; ++j) m[r][j] -= f * m[col][j];
    }
  }
  return det;
}

Vector dense_reference_mean(const Matrix& rows) {
  if (rows.empty()) throw ShapeError("oracle mean: no rows");
  Vector mean(rows[0].size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += r[j];
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return mean;
}

Matrix dense_reference_covariance(const Matrix& rows) {
  if (rows.size() < 2) throw ShapeError("oracle covariance: needs at least 2 rows");
  const Vector mean = dense_reference_mean(rows);
  const std::size_t d = mean.size();
  Matrix cov(d, Vector(d, 0.0));
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
  for (auto& row : cov)
    for (double& v : row) v /= static_cast<double>(rows.size() - 1);
  return cov;
}

Vector reference_softmax(const Vector& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += out[i] = std::exp(logits[i] - mx);
  for (double& v : out) v /= total;
  return out;
}

// ---- mixtures ---------------------------------------------------------------

namespace {

// Precision matrix and log-determinant of an SPD matrix, with the SPD check
// done by attempting an LDL^T-style elimination without pivoting.
struct Precision {
  Matrix inverse;
  double log_det = 0.0;
};

Precision precision_of(const Matrix& c) {
  const std::size_t n = c.size();
  Matrix m = c;
  double log_det = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double p = m[k][k];
    if (!(p > 0.0)) throw NumericError("oracle: covariance is not positive definite");
    log_det += std::log(p);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double f = m[r][k] / p;
      for (std::size_t j = k; j < n; ++j) m[r][j] -= f * m[k][j];
    }
  }
  return {dense_reference_inverse(c), log_det};
}

double log_density(const Vector& x, const Vector& mean, const Precision& p) {
  Vector diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) diff[i] = x[i] - mean[i];
  const double quad = dot(diff, multiply(p.inverse, diff));
  return -0.5 * quad - 0.5 * p.log_det - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

double log_sum_exp(const Vector& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

void GaussianMixtureRef::validate() const {
  if (means.empty()) throw ConfigError("mixture: no components");
  if (covariances.size() != means.size() || weights.size() != means.size())
    throw ConfigError("mixture: means, covariances and weights differ in count");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("mixture: negative weight");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("mixture: weights do not sum to 1");
}

GaussianMixtureRef equal_weight_mixture(std::vector<Vector> means, std::vector<Matrix> covariances) {
  const std::size_t k = means.size();
  return {std::move(means), std::move(covariances), Vector(k, 1.0 / static_cast<double>(k))};
}

double log_gaussian_density(const Vector& x, const Vector& mean, const Matrix& covariance) {
  return log_density(x, mean, precision_of(covariance));
}

Vector gmm_responsibilities(const Vector& query, const GaussianMixtureRef& mix) {
  mix.validate();
  Vector logp(mix.means.size());
  for (std::size_t k = 0; k < logp.size(); ++k)
    logp[k] = std::log(mix.weights[k]) + log_density(query, mix.means[k], precision_of(mix.covariances[k]));
  const double norm = log_sum_exp(logp);
  for (double& v : logp) v = std::exp(v - norm);
  return logp;
}

Vector gmm_responsibilities_shared_denominator(const Vector& query, const GaussianMixtureRef& mix) {
  mix.validate();
  const std::size_t K = mix.means.size();
  Vector out(K);
  for (std::size_t k = 0; k < K; ++k) {
    const Precision p = precision_of(mix.covariances[k]);
    Vector terms(K);
    for (std::size_t j = 0; j < K; ++j) terms[j] = std::log(mix.weights[j]) + log_density(query, mix.means[j], p);
    out[k] = std::exp(terms[k] - log_sum_exp(terms));
  }
  return out;
}

// ---- Bregman ----------------------------------------------------------------

BregmanGenerator squared_norm_generator() {
  return {[](const Vector& x) { return 0.5 * dot(x, x); }, [](const Vector& x) { return x; }};
}

BregmanGenerator quadratic_generator(const Matrix& sigma) {
  auto precision = std::make_shared<Matrix>(dense_reference_inverse(sigma));
  return {[precision](const Vector& x) { return 0.5 * dot(x, multiply(*precision, x)); },
          [precision](const Vector& x) { return multiply(*precision, x); }};
}

double bregman_divergence(const BregmanGenerator& gen, const Vector& z, const Vector& zp) {
  if (z.size() != zp.size()) throw ShapeError("bregman_divergence: lengths differ");
  const Vector g = gen.gradient(zp);
  Vector diff(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) diff[i] = z[i] - zp[i];
  return gen.value(z) - gen.value(zp) - dot(g, diff);
}

double midpoint_convexity_gap(const BregmanGenerator& gen, std::size_t dim, std::size_t pairs, double scale,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  double worst = -INFINITY;
  for (std::size_t t = 0; t < pairs; ++t) {
    Vector a(dim), b(dim), mid(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      a[i] = normal(rng);
      b[i] = normal(rng);
      mid[i] = 0.5 * (a[i] + b[i]);
    }
    worst = std::max(worst, gen.value(mid) - 0.5 * (gen.value(a) + gen.value(b)));
  }
  return worst;
}

// ---- Bayes ceilings ---------------------------------------------------------

namespace {

struct TrueClass {
  Vector mean;
  Matrix sqrt_cov;  // R diag(sqrt(eigenvalues))
  Precision precision;
};

std::vector<TrueClass> true_classes(const data::LabeledDataset& dataset, std::span<const int> classes) {
  const auto& gt = dataset.ground_truth();
  if (!gt) throw ConfigError("oracle: dataset has no ground-truth class Gaussians");
  std::vector<TrueClass> out;
  for (int label : classes) {
    auto it = gt->find(label);
    if (it == gt->end()) throw ConfigError("oracle: no ground truth for class " + std::to_string(label));
    const auto& g = it->second;
    const std::size_t d = g.mean.size();
    TrueClass t;
    t.mean = g.mean;
    t.sqrt_cov.assign(d, Vector(d, 0.0));
    Matrix cov(d, Vector(d, 0.0));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        t.sqrt_cov[i][j] = g.rotation(i, j) * std::sqrt(g.eigenvalues[j]);
        cov[i][j] = g.covariance(i, j);
      }
    t.precision = precision_of(cov);
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Classifier>
OracleEstimate monte_carlo(const data::LabeledDataset& dataset, std::span<const int> classes,
                           const episodes::EpisodeProtocol& protocol, std::size_t n_queries, std::uint64_t seed,
                           Classifier classify) {
  protocol.validate();
  if (n_queries < 1) throw ConfigError("oracle: n_queries must be >= 1");
  const auto truth = true_classes(dataset, classes);
  const long n_classes = static_cast<long>(truth.size());
  const bool fixed = protocol.mode == episodes::Mode::fixed;
  const long min_way = fixed ? protocol.ways : protocol.way_min;
  if (n_classes < min_way)
    throw SamplingError("oracle: need " + std::to_string(min_way) + " classes, have " + std::to_string(n_classes));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::size_t> pool(truth.size());
  const std::size_t d = truth[0].mean.size();
  std::size_t correct = 0;
  for (std::size_t q = 0; q < n_queries; ++q) {
    const long way = fixed ? protocol.ways
                           : std::uniform_int_distribution<long>(protocol.way_min,
                                                                 std::min<long>(protocol.way_max, n_classes))(rng);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (long i = 0; i < way; ++i) {
      const auto j = std::uniform_int_distribution<long>(i, n_classes - 1)(rng);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    const auto target = static_cast<std::size_t>(std::uniform_int_distribution<long>(0, way - 1)(rng));
    const TrueClass& c = truth[pool[target]];
    Vector z(d), x(d);
    for (double& v : z) v = normal(rng);
    for (std::size_t i = 0; i < d; ++i) x[i] = c.mean[i] + dot(c.sqrt_cov[i], z);

    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t k = 0; k < static_cast<std::size_t>(way); ++k) {
      const double s = classify(x, truth[pool[k]]);
      if (s > best_score) {
        best_score = s;
        best = k;
      }
    }
    correct += best == target;
  }
  OracleEstimate e;
  e.queries = n_queries;
  e.accuracy = static_cast<double>(correct) / static_cast<double>(n_queries);
  e.ci_halfwidth = 1.96 * std::sqrt(e.accuracy * (1.0 - e.accuracy) / static_cast<double>(n_queries));
  return e;
}

}  // namespace

OracleEstimate bayes_optimal_accuracy(const data::LabeledDataset& dataset, std::span<const int> classes,
                                      const episodes::EpisodeProtocol& protocol, std::size_t n_queries,
                                      std::uint64_t seed) {
  return monte_carlo(dataset, classes, protocol, n_queries, seed,
                     [](const Vector& x, const TrueClass& c) { return log_density(x, c.mean, c.precision); });
}

OracleEstimate isotropic_discriminant_accuracy(const data::LabeledDataset& dataset, std::span<const int> classes,
                                               const episodes::EpisodeProtocol& protocol, std::size_t n_queries,
                                               std::uint64_t seed) {
  return monte_carlo(dataset, classes, protocol, n_queries, seed, [](const Vector& x, const TrueClass& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - c.mean[i]) * (x[i] - c.mean[i]);
    return -s;
  });
}

void write_oracle_csv(std::span<const OracleRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "family,oracle_accuracy,ci\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.estimate.accuracy, r.estimate.ci_halfwidth);
    out << r.family << ',' << buf << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<OracleRow> read_oracle_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "family,oracle_accuracy,ci") throw ConfigError(path.string() + ":1: unexpected header");
  std::vector<OracleRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fam, acc, ci;
    if (!std::getline(ss, fam, ',') || !std::getline(ss, acc, ',') || !std::getline(ss, ci))
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 3 fields");
    OracleRow r;
    r.family = fam;
    r.estimate.accuracy = std::stod(acc);
    r.estimate.ci_halfwidth = std::stod(ci);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace scnaps::oracle
