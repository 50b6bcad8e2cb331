#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scnaps::invariants {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      // worst observed error (or the checked quantity)
  double tolerance = 0.0;
  std::string detail;
};

// Reverse-mode vs central differences on the whole episode loss (adaptation,
// backbone, covariance blend, Cholesky solves) for random small episodes.
CheckResult episode_gradients(std::size_t episodes, std::uint64_t seed);

// Shared-covariance, equal-weight mixture responsibilities vs softmax of the
// Mahalanobis logits.
CheckResult mixture_correspondence(std::size_t instances, std::uint64_t seed);

// Bregman divergence under F(x) = 1/2 x^T Q^{-1} x vs the Mahalanobis distance.
CheckResult bregman_correspondence(std::size_t instances, std::uint64_t seed);

// lambda(1) = 1/2, lambda(2) = 2/3, strictly increasing towards 1, and the
// single-shot blend equal to 0.5 task + beta I.
CheckResult shrinkage_schedule();

// With Q = I/2 the Mahalanobis probabilities equal the squared-Euclidean
// head's; with Q = 2I the predicted classes agree.
CheckResult euclidean_reduction(std::size_t queries, std::uint64_t seed);

// Dropping the task covariance changes nothing when every class covariance
// equals the task covariance, and changes the logits otherwise.
CheckResult task_covariance_ablation(std::uint64_t seed);

std::vector<CheckResult> run_suite(std::size_t instances, std::uint64_t seed);

// Header: check,passed,value,tolerance,detail
void write_report_csv(std::span<const CheckResult> results, const std::filesystem::path& path);

}  // namespace scnaps::invariants
