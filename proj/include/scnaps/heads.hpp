#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scnaps/autodiff.hpp"
#include "scnaps/linalg.hpp"
#include "scnaps/params.hpp"
#include "scnaps/rng.hpp"

namespace scnaps::heads {

enum class HeadKind {
  mahalanobis,
  mahalanobis_tr,  // task covariance dropped: lambda forced to 1
  squared_euclidean,
  l1,
  cosine,
  negative_dot,
  adaptive_linear,
};

// How the all-classes covariance is centred.
enum class TaskCovariance {
  global,  // about the single mean of the whole support set
  pooled,  // about each example's own class mean
};

struct HeadConfig {
  HeadKind kind = HeadKind::mahalanobis;
  bool projection = false;
  std::size_t projection_dim = 0;  // 0: same as the embedding
  double beta = 1.0;
  TaskCovariance task_covariance = TaskCovariance::global;
  std::size_t classifier_hidden = 64;

  void validate() const;
};

// "mahalanobis", "mahalanobis-tr", "l2", "l1", "cosine", "dot", "linear",
// each optionally suffixed with "+p".
HeadConfig parse_head(std::string_view spec);
std::string head_name(const HeadConfig& config);

// Adds the head's trainable parameters (adaptive linear classifier, projection)
// for embeddings of width `embedding_dim`. Fixed-metric heads add nothing.
void init_parameters(ParameterStore& store, const HeadConfig& config, std::size_t embedding_dim, Rng& rng);

// ---- class statistics -------------------------------------------------------

struct ClassStats {
  int label = 0;
  int shots = 0;
  ad::Var mean;        // 1 x d
  ad::Var covariance;  // d x d
};

// Indices of the support rows belonging to each local class 0..way-1.
std::vector<std::vector<std::size_t>> rows_by_class(std::span<const int> labels, std::size_t way);

std::vector<ad::Var> class_means(const ad::Var& embeddings, std::span<const int> labels, std::size_t way);

// Unbiased (n-1) sample covariance about `mean`; the zero matrix when n = 1.
ad::Var class_covariance(const ad::Var& class_embeddings, const ad::Var& mean);

// Covariance of all support embeddings about their global mean (n >= 2).
ad::Var task_covariance(const ad::Var& embeddings);
// Sum of class-centred scatter over (n - way); zero when n == way.
ad::Var pooled_task_covariance(const ad::Var& embeddings, std::span<const int> labels,
                               std::span<const ad::Var> means);

std::vector<ClassStats> class_statistics(const ad::Var& embeddings, std::span<const int> labels, std::size_t way);

// lambda(n) = n / (n + 1).
double shrinkage_weight(int shots);

struct RegularizedCovariance {
  ad::Var q;  // lambda*class + (1-lambda)*task + beta*I
  double lambda = 0.0;
  double beta = 0.0;
  CholeskyFactor factor;
};

RegularizedCovariance regularize(const ad::Var& class_cov, const ad::Var& task_cov, double lambda, double beta);
RegularizedCovariance blend_covariance(const ad::Var& class_cov, const ad::Var& task_cov, int shots,
                                       double beta, bool drop_task_covariance);

// logits[i][k] = -1/2 (x_i - mu_k)^T Q_k^{-1} (x_i - mu_k), via Cholesky solves.
ad::Var mahalanobis_logits(const ad::Var& queries, std::span<const ad::Var> means,
                           std::span<const RegularizedCovariance> covariances);

// Larger is more likely for every variant: negated distance for l1 and
// squared_euclidean, raw similarity for cosine and negative_dot.
ad::Var metric_logits(HeadKind kind, const ad::Var& queries, std::span<const ad::Var> means);

// Softmax over classes per row; throws NumericError on non-finite logits.
Tensor classify(const Tensor& logits);
// Row-wise argmax; ties go to the lowest class index.
std::vector<int> predict(const Tensor& probabilities);

// ---- adaptive linear head ---------------------------------------------------

struct LinearHead {
  ad::Var weights;  // way x d
  ad::Var bias;     // 1 x way
};

// Row k of [W | b] is psi(mu_k) = [mu_k, 0] + l3(elu(l2(elu(l1 mu_k)))).
LinearHead adaptive_linear_head(const BoundParameters& params, std::span<const ad::Var> means);
ad::Var linear_logits(const ad::Var& queries, const LinearHead& head);

// u(f) = W1 elu(W2 elu(W3 f)).
ad::Var project(const BoundParameters& params, const ad::Var& embeddings);

// ---- dispatch ---------------------------------------------------------------

struct HeadDiagnostics {
  std::vector<double> condition_estimates;
};

ad::Var head_logits(const BoundParameters& params, const HeadConfig& config, const ad::Var& support,
                    std::span<const int> support_labels, std::size_t way, const ad::Var& queries,
                    HeadDiagnostics* diagnostics = nullptr);

}  // namespace scnaps::heads
