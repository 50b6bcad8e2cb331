#include "scnaps/invariants.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "scnaps/data.hpp"
#include "scnaps/errors.hpp"
#include "scnaps/gradcheck.hpp"
#include "scnaps/model.hpp"
#include "scnaps/oracles.hpp"

namespace scnaps::invariants {

namespace {

using ad::Var;

Tensor random_tensor(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// A A^T / d: symmetric PSD, usually full rank.
Tensor random_psd(std::size_t d, Rng& rng) {
  const Tensor a = random_tensor(d, d, 1.0, rng);
  Tensor s = matmul(a, a.transposed());
  s *= 1.0 / static_cast<double>(d);
  return s;
}

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.rows(), oracle::Vector(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

oracle::Vector to_vector(const Tensor& row) { return {row.data().begin(), row.data().end()}; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

CheckResult episode_gradients(std::size_t episodes, std::uint64_t seed) {
  CheckResult r{"episode_gradients", true, 0.0, 1e-4, ""};
  const double betas[] = {0.1, 1.0, 10.0};
  std::size_t coordinates = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::size_t dim = 3 + e % 6;
    data::SyntheticSpec spec;
    spec.dim = dim;
    spec.classes = 6;
    spec.examples_per_class = 12;
    spec.mean_range = 2.0;
    spec.kappa = 4.0;
    spec.seed = derive_seed(seed, 2 * e);
    const auto dataset = data::generate_synthetic(spec);
    Rng rng(derive_seed(seed, 2 * e + 1));
    const auto protocol = episodes::EpisodeProtocol::variable(2, 4, 1, 4, 2);
    const auto ep = episodes::sample_episode(dataset, dataset.classes(), protocol, rng);

    ModelConfig cfg;
    cfg.backbone.input_dim = dim;
    cfg.backbone.blocks = 2;
    cfg.backbone.width = 6;
    cfg.backbone.embedding_dim = std::min<std::size_t>(dim, 5);
    cfg.backbone.encoder_hidden = 5;
    cfg.backbone.task_dim = 4;
    cfg.backbone.adapter_hidden = 4;
    cfg.backbone.ar_dim = 3;
    cfg.backbone.autoregressive = e % 2 == 1;
    cfg.backbone.output_init_gain = 1.0;
    cfg.backbone.film_init_gain = 0.5;
    cfg.head.beta = betas[e % 3];
    if (e % 5 == 4) cfg.head.task_covariance = heads::TaskCovariance::pooled;
    const ParameterStore store = initial_parameters(cfg, derive_seed(seed, 1000 + e));

    const LossBuilder loss = [&](ad::Tape& tape, std::span<const Var> leaves) {
      BoundParameters bound(tape, store, leaves);
      return forward_episode(bound, cfg, ep).loss;
    };
    const auto report = finite_difference_check(loss, store.values());
    coordinates += report.coordinates;
    if (report.max_relative_error > r.value) {
      r.value = report.max_relative_error;
      r.detail = "worst at episode " + std::to_string(e) + " parameter '" + store.names()[report.worst_parameter] +
                 "'[" + std::to_string(report.worst_index) + "]";
    }
  }
  r.passed = r.value <= r.tolerance;
  r.detail = std::to_string(episodes) + " episodes, " + std::to_string(coordinates) + " coordinates; " + r.detail;
  return r;
}

CheckResult mixture_correspondence(std::size_t instances, std::uint64_t seed) {
  CheckResult r{"mixture_correspondence", true, 0.0, 1e-10, ""};
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d = 2 + i % 5, K = 2 + (i / 5) % 4;
    const double beta = 0.5;
    const Tensor s = random_psd(d, rng);
    ad::Tape tape;
    const auto q = heads::regularize(tape.constant(Tensor(d, d)), tape.constant(s), 0.0, beta);
    std::vector<Var> means;
    std::vector<oracle::Vector> oracle_means;
    for (std::size_t k = 0; k < K; ++k) {
      const Tensor m = random_tensor(1, d, 2.0, rng);
      means.push_back(tape.constant(m));
      oracle_means.push_back(to_vector(m));
    }
    const Tensor x = random_tensor(1, d, 2.0, rng);
    const std::vector<heads::RegularizedCovariance> qs(K, q);
    const Tensor probs = heads::classify(heads::mahalanobis_logits(tape.constant(x), means, qs).value());

    oracle::Matrix cov = to_matrix(s);
    for (std::size_t j = 0; j < d; ++j) cov[j][j] += beta;
    const auto resp = oracle::gmm_responsibilities(
        to_vector(x), oracle::equal_weight_mixture(oracle_means, std::vector<oracle::Matrix>(K, cov)));
    for (std::size_t k = 0; k < K; ++k) r.value = std::max(r.value, std::fabs(probs(0, k) - resp[k]));
  }
  r.passed = r.value <= r.tolerance;
  r.detail = std::to_string(instances) + " instances, max |p - r| " + fmt(r.value);
  return r;
}

CheckResult bregman_correspondence(std::size_t instances, std::uint64_t seed) {
  CheckResult r{"bregman_correspondence", true, 0.0, 1e-9, ""};
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t d = 2 + i % 7;
    const double beta = 0.25;
    const Tensor s = random_psd(d, rng);
    ad::Tape tape;
    const auto q = heads::regularize(tape.constant(Tensor(d, d)), tape.constant(s), 0.0, beta);
    const Tensor mu = random_tensor(1, d, 2.0, rng);
    const Tensor x = random_tensor(1, d, 2.0, rng);
    const Var means[] = {tape.constant(mu)};
    const heads::RegularizedCovariance qs[] = {q};
    const double dist = -heads::mahalanobis_logits(tape.constant(x), means, qs).value()(0, 0);

    oracle::Matrix cov = to_matrix(s);
    for (std::size_t j = 0; j < d; ++j) cov[j][j] += beta;
    const double breg = oracle::bregman_divergence(oracle::quadratic_generator(cov), to_vector(x), to_vector(mu));
    r.value = std::max(r.value, std::fabs(dist - breg));
  }
  r.passed = r.value <= r.tolerance;
  r.detail = std::to_string(instances) + " instances, max |d - D_F| " + fmt(r.value);
  return r;
}

CheckResult shrinkage_schedule() {
  CheckResult r{"shrinkage_schedule", true, 0.0, 0.0, ""};
  std::vector<std::string> failures;
  if (heads::shrinkage_weight(1) != 0.5) failures.push_back("lambda(1) != 1/2");
  if (heads::shrinkage_weight(2) != 2.0 / 3.0) failures.push_back("lambda(2) != 2/3");
  for (int n = 1; n < 100000; ++n)
    if (!(heads::shrinkage_weight(n + 1) > heads::shrinkage_weight(n))) {
      failures.push_back("not increasing at n=" + std::to_string(n));
      break;
    }
  if (!(1.0 - heads::shrinkage_weight(1000000) < 1e-5)) failures.push_back("lambda(n) does not approach 1");

  const std::size_t d = 4;
  const double beta = 1.0;
  Rng rng(7);
  const Tensor task = random_psd(d, rng);
  ad::Tape tape;
  const auto q = heads::blend_covariance(tape.constant(Tensor(d, d)), tape.constant(task), 1, beta, false);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double expected = 0.5 * task(i, j) + (i == j ? beta : 0.0);
      r.value = std::max(r.value, std::fabs(q.q.value()(i, j) - expected));
    }
  if (r.value != 0.0) failures.push_back("single-shot Q differs from 0.5 task + beta I");
  r.passed = failures.empty();
  for (const auto& f : failures) r.detail += (r.detail.empty() ? "" : "; ") + f;
  if (r.passed) r.detail = "lambda(1)=0.5, lambda(2)=2/3, increasing, single-shot Q exact";
  return r;
}

CheckResult euclidean_reduction(std::size_t queries, std::uint64_t seed) {
  CheckResult r{"euclidean_reduction", true, 0.0, 1e-12, ""};
  Rng rng(seed);
  const std::size_t d = 6, K = 5;
  ad::Tape tape;
  std::vector<Var> means;
  for (std::size_t k = 0; k < K; ++k) means.push_back(tape.constant(random_tensor(1, d, 1.5, rng)));
  const Var x = tape.constant(random_tensor(queries, d, 2.0, rng));
  const Var zero = tape.constant(Tensor(d, d));

  const Tensor euclid = heads::classify(heads::metric_logits(heads::HeadKind::squared_euclidean, x, means).value());
  const std::vector<heads::RegularizedCovariance> half(K, heads::regularize(zero, zero, 0.0, 0.5));
  const std::vector<heads::RegularizedCovariance> twice(K, heads::regularize(zero, zero, 0.0, 2.0));
  const Tensor maha_half = heads::classify(heads::mahalanobis_logits(x, means, half).value());
  const Tensor maha_twice = heads::classify(heads::mahalanobis_logits(x, means, twice).value());

  r.value = max_abs(maha_half - euclid);
  const auto a = heads::predict(euclid), b = heads::predict(maha_twice);
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) disagree += a[i] != b[i];
  r.passed = r.value <= r.tolerance && disagree == 0;
  r.detail = "Q=I/2 max |p - p_l2| " + fmt(r.value) + "; Q=2I argmax disagreements " + std::to_string(disagree) +
             "/" + std::to_string(queries);
  return r;
}

CheckResult task_covariance_ablation(std::uint64_t seed) {
  CheckResult r{"task_covariance_ablation", true, 0.0, 0.0, ""};
  Rng rng(seed);
  const std::size_t d = 4, K = 3;
  const int shots = 3;  // lambda = 3/4: the blend of two equal dyadic matrices is exact

  // Small-integer B so every entry of S = B^T B / 4 is a short dyadic fraction.
  std::uniform_int_distribution<int> small(-3, 3);
  Tensor b(d, d);
  for (double& v : b.data()) v = small(rng);
  Tensor s = matmul(b.transposed(), b);
  s *= 0.25;

  ad::Tape tape;
  const Var sv = tape.constant(s);
  std::vector<Var> means;
  for (std::size_t k = 0; k < K; ++k) means.push_back(tape.constant(random_tensor(1, d, 1.0, rng)));
  const Var x = tape.constant(random_tensor(50, d, 2.0, rng));
  std::vector<heads::RegularizedCovariance> base, tr;
  for (std::size_t k = 0; k < K; ++k) {
    base.push_back(heads::blend_covariance(sv, sv, shots, 1.0, false));
    tr.push_back(heads::blend_covariance(sv, sv, shots, 1.0, true));
  }
  r.value = max_abs(heads::mahalanobis_logits(x, means, base).value() -
                    heads::mahalanobis_logits(x, means, tr).value());

  // An ordinary episode, where class and task covariances differ.
  const Tensor support = random_tensor(K * shots, d, 1.0, rng);
  std::vector<int> labels;
  for (std::size_t k = 0; k < K; ++k)
    for (int i = 0; i < shots; ++i) labels.push_back(static_cast<int>(k));
  ParameterStore empty;
  BoundParameters bound(tape, empty, false);
  heads::HeadConfig with_task, without_task;
  without_task.kind = heads::HeadKind::mahalanobis_tr;
  const Var sup = tape.constant(support);
  const double differ = max_abs(heads::head_logits(bound, with_task, sup, labels, K, x).value() -
                                heads::head_logits(bound, without_task, sup, labels, K, x).value());

  r.passed = r.value == 0.0 && differ > 1e-6;
  r.detail = "equal covariances: max logit difference " + fmt(r.value) + "; ordinary episode: " + fmt(differ);
  return r;
}

std::vector<CheckResult> run_suite(std::size_t instances, std::uint64_t seed) {
  return {
      episode_gradients(20, derive_seed(seed, 1)),
      mixture_correspondence(instances, derive_seed(seed, 2)),
      bregman_correspondence(instances, derive_seed(seed, 3)),
      shrinkage_schedule(),
      euclidean_reduction(10 * instances, derive_seed(seed, 4)),
      task_covariance_ablation(derive_seed(seed, 5)),
  };
}

void write_report_csv(std::span<const CheckResult> results, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "check,passed,value,tolerance,detail\n";
  for (const auto& c : results) {
    std::string detail = c.detail;
    for (char& ch : detail)
      if (ch == ',' || ch == '"') ch = ';';
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6g,%.6g", c.value, c.tolerance);
    out << c.name << ',' << (c.passed ? "true" : "false") << ',' << buf << ',' << detail << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace scnaps::invariants
