#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scnaps/tensor.hpp"

namespace scnaps::data {

// True generative parameters of one synthetic class: N(mean, R diag(eig) R^T).
struct ClassGaussian {
  std::vector<double> mean;
  std::vector<double> eigenvalues;
  Tensor rotation;    // D x D orthogonal, columns are eigenvectors
  Tensor covariance;  // D x D
};

enum class Provenance { synthetic, file };

// Immutable pool of labeled vectors with a per-class index. Labels are
// arbitrary non-negative integers; classes() lists them in ascending order.
class LabeledDataset {
 public:
  LabeledDataset(std::size_t dim, std::vector<double> features, std::vector<int> labels,
                 Provenance provenance,
                 std::optional<std::map<int, ClassGaussian>> ground_truth = std::nullopt);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> example(std::size_t i) const {
    return std::span<const double>(features_).subspan(i * dim_, dim_);
  }
  int label(std::size_t i) const { return labels_[i]; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const double> features() const noexcept { return features_; }
  const std::vector<int>& classes() const noexcept { return classes_; }
  std::span<const std::size_t> indices_of(int label) const;
  Provenance provenance() const noexcept { return provenance_; }
  const std::optional<std::map<int, ClassGaussian>>& ground_truth() const noexcept {
    return ground_truth_;
  }

 private:
  std::size_t dim_;
  std::vector<double> features_;
  std::vector<int> labels_;
  std::vector<int> classes_;
  std::map<int, std::vector<std::size_t>> by_class_;
  Provenance provenance_;
  std::optional<std::map<int, ClassGaussian>> ground_truth_;
};

struct SyntheticSpec {
  std::size_t dim = 16;
  std::size_t classes = 20;
  std::size_t examples_per_class = 100;
  double mean_range = 3.0;   // means ~ U[-m, m]^D
  double kappa = 1.0;        // per-class covariance condition number
  double scale = 1.0;        // mean eigenvalue of every class covariance
  bool shared_rotation = false;
  std::uint64_t seed = 0;
};

// Classes are labelled 0..K-1; examples are stored grouped by class.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

// ---- IDX --------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);
// Writes features as bytes round(v*255); values must lie in [0, 1].
void write_idx(const LabeledDataset& dataset, std::uint32_t rows, std::uint32_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

// ---- CSV (label,f0,f1,...) --------------------------------------------------

void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_csv(const std::filesystem::path& path);

// Ground truth as JSON: {"classes":[{"label":k,"mean":[...],"eigenvalues":[...],
// "rotation":[[...]],"covariance":[[...]]}, ...]}.
void write_ground_truth(const LabeledDataset& dataset, const std::filesystem::path& path);

// ---- class splits -----------------------------------------------------------

struct ClassSplit {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
  int fold = -1;

  const std::vector<int>& part(std::string_view name) const;
};

ClassSplit split_classes(const LabeledDataset& dataset, std::array<double, 3> fractions,
                         std::uint64_t seed);

struct Fold {
  int index = 0;
  std::vector<std::string> in_domain;
  std::vector<std::string> held_out;
};

// Deterministically shuffles the names and deals them round-robin into k
// groups; fold f holds out group f.
std::vector<Fold> kfold_splits(std::span<const std::string> datasets, int k, std::uint64_t seed);

}  // namespace scnaps::data
