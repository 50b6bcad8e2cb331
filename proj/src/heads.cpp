#include "scnaps/heads.hpp"

#include <cmath>

#include "scnaps/errors.hpp"

namespace scnaps::heads {

using ad::Var;

namespace {

struct NamedKind {
  std::string_view name;
  HeadKind kind;
};

constexpr NamedKind kKinds[] = {
    {"mahalanobis", HeadKind::mahalanobis}, {"mahalanobis-tr", HeadKind::mahalanobis_tr},
    {"l2", HeadKind::squared_euclidean},    {"l1", HeadKind::l1},
    {"cosine", HeadKind::cosine},           {"dot", HeadKind::negative_dot},
    {"linear", HeadKind::adaptive_linear},
};

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

Var linear(const BoundParameters& p, const std::string& prefix, const Var& x) {
  return ad::add_row(ad::matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

Var covariance_about(const Var& rows, const Var& mean, double denom) {
  Var centred = ad::sub_row(rows, mean);
  return ad::scale(ad::matmul(ad::transpose(centred), centred), 1.0 / denom);
}

}  // namespace

void HeadConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("head: beta must be > 0, got " + std::to_string(beta));
  if (kind == HeadKind::adaptive_linear && classifier_hidden < 1)
    throw ConfigError("head: classifier_hidden must be >= 1");
}

HeadConfig parse_head(std::string_view spec) {
  HeadConfig config;
  std::string_view base = spec;
  if (base.ends_with("+p")) {
    config.projection = true;
    base.remove_suffix(2);
  }
  for (const auto& k : kKinds) {
    if (k.name == base) {
      config.kind = k.kind;
      return config;
    }
  }
  throw ConfigError("unknown head '" + std::string(spec) +
                    "' (expected mahalanobis|mahalanobis-tr|l2|l1|cosine|dot|linear, optionally +p)");
}

std::string head_name(const HeadConfig& config) {
  for (const auto& k : kKinds)
    if (k.kind == config.kind) return std::string(k.name) + (config.projection ? "+p" : "");
  return "unknown";
}

void init_parameters(ParameterStore& store, const HeadConfig& config, std::size_t embedding_dim, Rng& rng) {
  config.validate();
  std::size_t d = embedding_dim;
  if (config.projection) {
    const std::size_t p = config.projection_dim == 0 ? embedding_dim : config.projection_dim;
    store.add("projection.w3", gaussian(d, p, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    store.add("projection.w2", gaussian(p, p, 1.0 / std::sqrt(static_cast<double>(p)), rng));
    store.add("projection.w1", gaussian(p, p, 1.0 / std::sqrt(static_cast<double>(p)), rng));
    d = p;
  }
  if (config.kind == HeadKind::adaptive_linear) {
    const std::size_t h = config.classifier_hidden;
    store.add("classifier.l1.w", gaussian(d, h, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    store.add("classifier.l1.b", Tensor(1, h));
    store.add("classifier.l2.w", gaussian(h, h, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    store.add("classifier.l2.b", Tensor(1, h));
    store.add("classifier.l3.w", gaussian(h, d + 1, 0.1 / std::sqrt(static_cast<double>(h)), rng));
    store.add("classifier.l3.b", Tensor(1, d + 1));
  }
}

// ---- statistics -------------------------------------------------------------

std::vector<std::vector<std::size_t>> rows_by_class(std::span<const int> labels, std::size_t way) {
  std::vector<std::vector<std::size_t>> rows(way);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= way)
      throw ShapeError("support label " + std::to_string(y) + " outside 0.." + std::to_string(way - 1));
    rows[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::size_t k = 0; k < way; ++k)
    if (rows[k].empty()) throw SamplingError("class " + std::to_string(k) + " has no support examples");
  return rows;
}

std::vector<Var> class_means(const Var& embeddings, std::span<const int> labels, std::size_t way) {
  std::vector<Var> means;
  for (const auto& rows : rows_by_class(labels, way))
    means.push_back(ad::mean_over_rows(ad::gather_rows(embeddings, rows)));
  return means;
}

Var class_covariance(const Var& class_embeddings, const Var& mean) {
  const std::size_t n = class_embeddings.rows();
  const std::size_t d = class_embeddings.cols();
  if (n == 0) throw SamplingError("class_covariance: class has no examples");
  if (n == 1) return class_embeddings.tape()->constant(Tensor(d, d));
  return covariance_about(class_embeddings, mean, static_cast<double>(n - 1));
}

Var task_covariance(const Var& embeddings) {
  const std::size_t n = embeddings.rows();
  if (n < 2) throw SamplingError("task_covariance: needs at least 2 support examples, got " + std::to_string(n));
  return covariance_about(embeddings, ad::mean_over_rows(embeddings), static_cast<double>(n - 1));
}

Var pooled_task_covariance(const Var& embeddings, std::span<const int> labels, std::span<const Var> means) {
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  const std::size_t way = means.size();
  if (n <= way) return embeddings.tape()->constant(Tensor(d, d));
  const auto groups = rows_by_class(labels, way);
  std::vector<Var> centred;
  for (std::size_t k = 0; k < way; ++k)
    centred.push_back(ad::sub_row(ad::gather_rows(embeddings, groups[k]), means[k]));
  Var all = ad::concat_rows(centred);
  return ad::scale(ad::matmul(ad::transpose(all), all), 1.0 / static_cast<double>(n - way));
}

std::vector<ClassStats> class_statistics(const Var& embeddings, std::span<const int> labels, std::size_t way) {
  std::vector<ClassStats> stats;
  const auto groups = rows_by_class(labels, way);
  for (std::size_t k = 0; k < way; ++k) {
    Var rows = ad::gather_rows(embeddings, groups[k]);
    Var mean = ad::mean_over_rows(rows);
    stats.push_back({static_cast<int>(k), static_cast<int>(groups[k].size()), mean, class_covariance(rows, mean)});
  }
  return stats;
}

double shrinkage_weight(int shots) {
  if (shots < 1) throw ConfigError("shrinkage_weight: shots must be >= 1");
  return static_cast<double>(shots) / (static_cast<double>(shots) + 1.0);
}

RegularizedCovariance regularize(const Var& class_cov, const Var& task_cov, double lambda, double beta) {
  if (!(beta > 0.0)) throw ConfigError("regularize: beta must be > 0, got " + std::to_string(beta));
  const std::size_t d = class_cov.rows();
  Var blended = ad::add(ad::scale(class_cov, lambda), ad::scale(task_cov, 1.0 - lambda));
  Var q = ad::add_constant(blended, Tensor::identity(d, beta));
  RegularizedCovariance out{q, lambda, beta, factor_spd(q.value())};
  return out;
}

RegularizedCovariance blend_covariance(const Var& class_cov, const Var& task_cov, int shots, double beta,
                                       bool drop_task_covariance) {
  const double lambda = drop_task_covariance ? 1.0 : shrinkage_weight(shots);
  return regularize(class_cov, task_cov, lambda, beta);
}

Var mahalanobis_logits(const Var& queries, std::span<const Var> means,
                       std::span<const RegularizedCovariance> covariances) {
  if (means.size() != covariances.size())
    throw ShapeError("mahalanobis_logits: " + std::to_string(means.size()) + " means but " +
                     std::to_string(covariances.size()) + " covariances");
  std::vector<Var> columns;
  columns.reserve(means.size());
  for (std::size_t k = 0; k < means.size(); ++k) {
    Var diff_t = ad::transpose(ad::sub_row(queries, means[k]));                 // d x n
    Var solved = ad::spd_solve(covariances[k].q, covariances[k].factor, diff_t);  // d x n
    Var half_quad = ad::scale(ad::sum_over_rows(ad::mul(diff_t, solved)), -0.5);  // 1 x n
    columns.push_back(ad::transpose(half_quad));
  }
  return ad::concat_cols(columns);
}

Var metric_logits(HeadKind kind, const Var& queries, std::span<const Var> means) {
  if (means.empty()) throw ShapeError("metric_logits: no classes");
  switch (kind) {
    case HeadKind::squared_euclidean:
    case HeadKind::l1: {
      std::vector<Var> columns;
      for (const Var& m : means) {
        Var diff = ad::sub_row(queries, m);
        Var dist = ad::sum_over_cols(kind == HeadKind::l1 ? ad::abs(diff) : ad::square(diff));
        columns.push_back(ad::scale(dist, -1.0));
      }
      return ad::concat_cols(columns);
    }
    case HeadKind::cosine: {
      Var m = ad::concat_rows(means);
      return ad::matmul(ad::normalize_rows(queries), ad::transpose(ad::normalize_rows(m)));
    }
    case HeadKind::negative_dot: {
      Var m = ad::concat_rows(means);
      return ad::matmul(queries, ad::transpose(m));
    }
    default:
      throw ConfigError("metric_logits: head is not a fixed metric");
  }
}

Tensor classify(const Tensor& logits) {
  if (logits.cols() < 2) throw ConfigError("classify: need at least 2 classes, got " + std::to_string(logits.cols()));
  if (!all_finite(logits)) throw NumericError("classify: non-finite logits");
  Tensor p(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = -INFINITY;
    for (double v : logits.row_span(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) s += (p(r, c) = std::exp(logits(r, c) - mx));
    for (std::size_t c = 0; c < logits.cols(); ++c) p(r, c) /= s;
  }
  return p;
}

std::vector<int> predict(const Tensor& probabilities) {
  std::vector<int> out(probabilities.rows(), 0);
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probabilities.cols(); ++c)
      if (probabilities(r, c) > probabilities(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

// ---- adaptive linear / projection ---------------------------------------------

LinearHead adaptive_linear_head(const BoundParameters& p, std::span<const Var> means) {
  Var m = ad::concat_rows(means);  // way x d
  const std::size_t d = m.cols();
  Var hidden = ad::elu(linear(p, "classifier.l2", ad::elu(linear(p, "classifier.l1", m))));
  Var residual = linear(p, "classifier.l3", hidden);  // way x (d+1)
  Var skip = ad::concat_cols(m, p.tape().constant(Tensor(m.rows(), 1)));
  Var rows = ad::add(skip, residual);
  return {ad::slice_cols(rows, 0, d), ad::transpose(ad::slice_cols(rows, d, d + 1))};
}

Var linear_logits(const Var& queries, const LinearHead& head) {
  return ad::add_row(ad::matmul(queries, ad::transpose(head.weights)), head.bias);
}

Var project(const BoundParameters& p, const Var& embeddings) {
  Var h = ad::elu(ad::matmul(embeddings, p["projection.w3"]));
  h = ad::elu(ad::matmul(h, p["projection.w2"]));
  return ad::matmul(h, p["projection.w1"]);
}

// ---- dispatch ---------------------------------------------------------------

Var head_logits(const BoundParameters& p, const HeadConfig& config, const Var& support_in,
                std::span<const int> support_labels, std::size_t way, const Var& queries_in,
                HeadDiagnostics* diagnostics) {
  Var support = support_in;
  Var queries = queries_in;
  if (config.projection) {
    support = project(p, support);
    queries = project(p, queries);
  }

  switch (config.kind) {
    case HeadKind::mahalanobis:
    case HeadKind::mahalanobis_tr: {
      const auto stats = class_statistics(support, support_labels, way);
      std::vector<Var> means;
      for (const auto& s : stats) means.push_back(s.mean);
      const bool drop = config.kind == HeadKind::mahalanobis_tr;
      Var task;
      if (!drop) {
        task = config.task_covariance == TaskCovariance::global
                   ? task_covariance(support)
                   : pooled_task_covariance(support, support_labels, means);
      } else {
        task = p.tape().constant(Tensor(support.cols(), support.cols()));
      }
      std::vector<RegularizedCovariance> qs;
      for (const auto& s : stats) {
        qs.push_back(blend_covariance(s.covariance, task, s.shots, config.beta, drop));
        if (diagnostics) diagnostics->condition_estimates.push_back(qs.back().factor.condition_estimate());
      }
      return mahalanobis_logits(queries, means, qs);
    }
    case HeadKind::adaptive_linear:
      return linear_logits(queries, adaptive_linear_head(p, class_means(support, support_labels, way)));
    default:
      return metric_logits(config.kind, queries, class_means(support, support_labels, way));
  }
}

}  // namespace scnaps::heads
