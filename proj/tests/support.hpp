#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "scnaps/oracles.hpp"
#include "scnaps/rng.hpp"
#include "scnaps/tensor.hpp"

namespace scnaps::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

// M^T M + shift I.
inline Tensor random_spd(std::size_t d, Rng& rng, double shift = 1.0) {
  const Tensor m = random_tensor(d, d, rng);
  Tensor a = matmul(m.transposed(), m);
  for (std::size_t i = 0; i < d; ++i) a(i, i) += shift;
  return a;
}

inline oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.rows(), oracle::Vector(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  return m;
}

inline oracle::Vector row_vector(const Tensor& t, std::size_t r) {
  const auto s = t.row_span(r);
  return {s.begin(), s.end()};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs(a - b); }

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("scnaps-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace scnaps::testing
