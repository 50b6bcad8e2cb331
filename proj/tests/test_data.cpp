#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "scnaps/data.hpp"
#include "scnaps/errors.hpp"
#include "support.hpp"

using namespace scnaps;
using scnaps::testing::TempDir;

namespace {

data::LabeledDataset small_dataset(std::size_t classes, std::size_t per_class = 4) {
  std::vector<double> features;
  std::vector<int> labels;
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      features.push_back(static_cast<double>(k));
      features.push_back(static_cast<double>(i));
      labels.push_back(static_cast<int>(k));
    }
  return data::LabeledDataset(2, features, labels, data::Provenance::file);
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> cat(std::initializer_list<std::vector<std::uint8_t>> parts) {
  std::vector<std::uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

template <class F>
std::string parse_reason(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.reason() + "@" + std::to_string(e.offset());
  }
  return "none";
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("isotropic classes have covariance scale * I") {
    data::SyntheticSpec spec;
    spec.dim = 5;
    spec.classes = 3;
    spec.examples_per_class = 10;
    spec.kappa = 1.0;
    spec.scale = 2.5;
    spec.seed = 1;
    const auto ds = data::generate_synthetic(spec);
    REQUIRE(ds.ground_truth());
    for (const auto& [label, g] : *ds.ground_truth())
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(g.covariance(i, j) == doctest::Approx(i == j ? 2.5 : 0.0).epsilon(1e-12).scale(2.5));
  }

  TEST_CASE("fixed seed regenerates bit-identically") {
    data::SyntheticSpec spec;
    spec.dim = 4;
    spec.classes = 5;
    spec.kappa = 30;
    spec.seed = 77;
    const auto a = data::generate_synthetic(spec);
    const auto b = data::generate_synthetic(spec);
    CHECK(std::ranges::equal(a.features(), b.features()));
    CHECK(std::ranges::equal(a.labels(), b.labels()));
    spec.seed = 78;
    CHECK_FALSE(std::ranges::equal(a.features(), data::generate_synthetic(spec).features()));
  }

  TEST_CASE("labels are 0..K-1 with every class populated") {
    data::SyntheticSpec spec;
    spec.classes = 6;
    spec.examples_per_class = 3;
    const auto ds = data::generate_synthetic(spec);
    CHECK(ds.classes() == std::vector<int>{0, 1, 2, 3, 4, 5});
    for (int k : ds.classes()) CHECK(ds.indices_of(k).size() == 3);
  }

  TEST_CASE("anisotropic covariances are SPD with condition number within x2 of kappa") {
    for (double kappa : {2.0, 20.0, 100.0}) {
      data::SyntheticSpec spec;
      spec.dim = 8;
      spec.classes = 4;
      spec.examples_per_class = 2;
      spec.kappa = kappa;
      spec.seed = 3;
      const auto ds = data::generate_synthetic(spec);
      for (const auto& [label, g] : *ds.ground_truth()) {
        const auto [lo, hi] = std::minmax_element(g.eigenvalues.begin(), g.eigenvalues.end());
        CHECK(*lo > 0.0);
        const double cond = *hi / *lo;
        CHECK(cond >= kappa / 2.0);
        CHECK(cond <= kappa * 2.0);
        // R diag(eig) R^T is what the covariance holds.
        const auto c = oracle::multiply(oracle::multiply(testing::to_matrix(g.rotation), [&] {
                                          oracle::Matrix d(8, oracle::Vector(8, 0.0));
                                          for (std::size_t i = 0; i < 8; ++i) d[i][i] = g.eigenvalues[i];
                                          return d;
                                        }()),
                                        testing::to_matrix(g.rotation.transposed()));
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(c[i][j] - g.covariance(i, j)) <= 1e-10);
      }
    }
  }

  TEST_CASE("sample covariance of 10000 points matches the ground truth within 5%") {
    data::SyntheticSpec spec;
    spec.dim = 4;
    spec.classes = 2;
    spec.examples_per_class = 10000;
    spec.kappa = 10;
    spec.scale = 3;
    spec.seed = 21;
    const auto ds = data::generate_synthetic(spec);
    const auto& truth = ds.ground_truth()->at(0);
    oracle::Matrix rows;
    for (std::size_t i : ds.indices_of(0)) {
      const auto x = ds.example(i);
      rows.emplace_back(x.begin(), x.end());
    }
    const auto s = oracle::dense_reference_covariance(rows);
    // Entry error relative to sqrt(S_ii S_jj), the scale of entry (i, j).
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double unit = std::sqrt(truth.covariance(i, i) * truth.covariance(j, j));
        CHECK(std::abs(s[i][j] - truth.covariance(i, j)) <= 0.05 * unit);
      }
  }

  TEST_CASE("invalid specs are configuration errors") {
    data::SyntheticSpec spec;
    spec.dim = 0;
    CHECK_THROWS_AS(data::generate_synthetic(spec), ConfigError);
    spec = {};
    spec.classes = 1;
    CHECK_THROWS_AS(data::generate_synthetic(spec), ConfigError);
    spec = {};
    spec.kappa = 0.5;
    CHECK_THROWS_AS(data::generate_synthetic(spec), ConfigError);
    spec = {};
    spec.examples_per_class = 0;
    CHECK_THROWS_AS(data::generate_synthetic(spec), ConfigError);
  }

  TEST_CASE("ground truth JSON carries every class") {
    TempDir dir("gt");
    data::SyntheticSpec spec;
    spec.dim = 3;
    spec.classes = 4;
    spec.examples_per_class = 2;
    const auto ds = data::generate_synthetic(spec);
    data::write_ground_truth(ds, dir / "gt.json");
    std::ifstream in(dir / "gt.json");
    const auto j = nlohmann::json::parse(in);
    REQUIRE(j["classes"].size() == 4);
    CHECK(j["classes"][2]["label"] == 2);
    CHECK(j["classes"][2]["covariance"].size() == 3);
    CHECK_THROWS_AS(data::write_ground_truth(small_dataset(3), dir / "x.json"), ConfigError);
  }
}

TEST_SUITE("idx") {
  const auto header = cat({be32(data::kIdxImageMagic), be32(2), be32(2), be32(2)});
  const std::vector<std::uint8_t> pixels{0, 255, 51, 102, 255, 0, 0, 153};
  const auto image_file = cat({header, pixels});
  const auto label_file = cat({be32(data::kIdxLabelMagic), be32(2), {7, 3}});

  TEST_CASE("hand-built file with two 2x2 images") {
    REQUIRE(image_file.size() == 24);
    const auto ds = data::parse_idx(image_file, label_file);
    CHECK(ds.size() == 2);
    CHECK(ds.dim() == 4);
    CHECK(ds.example(0)[0] == 0.0);
    CHECK(ds.example(0)[1] == 1.0);
    CHECK(ds.example(0)[2] == 51 / 255.0);
    CHECK(ds.example(1)[3] == 153 / 255.0);
    CHECK(ds.label(0) == 7);
    CHECK(ds.label(1) == 3);
    CHECK(ds.provenance() == data::Provenance::file);
  }

  TEST_CASE("malformed files give distinct errors with byte offsets") {
    auto bad_magic = image_file;
    bad_magic[3] = 0x01;
    CHECK(parse_reason([&] { data::parse_idx(bad_magic, label_file); }) == "bad_magic@0");

    const std::vector<std::uint8_t> truncated(image_file.begin(), image_file.end() - 3);
    CHECK(parse_reason([&] { data::parse_idx(truncated, label_file); }) == "truncated@21");

    const std::vector<std::uint8_t> short_header(image_file.begin(), image_file.begin() + 10);
    CHECK(parse_reason([&] { data::parse_idx(short_header, label_file); }) == "truncated@10");

    const auto wrong_count = cat({be32(data::kIdxLabelMagic), be32(3), {7, 3, 1}});
    CHECK(parse_reason([&] { data::parse_idx(image_file, wrong_count); }) == "count_mismatch@4");

    const auto label_magic = cat({be32(data::kIdxImageMagic), be32(2), {7, 3}});
    CHECK(parse_reason([&] { data::parse_idx(image_file, label_magic); }) == "bad_magic@0");

    const auto short_labels = cat({be32(data::kIdxLabelMagic), be32(2), {7}});
    CHECK(parse_reason([&] { data::parse_idx(image_file, short_labels); }) == "truncated@9");
  }

  TEST_CASE("write then read is bit-exact for byte values") {
    TempDir dir("idx");
    std::vector<double> features;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
      for (int p = 0; p < 6; ++p) features.push_back(((i * 37 + p * 11) % 256) / 255.0);
      labels.push_back(i % 3);
    }
    const data::LabeledDataset ds(6, features, labels, data::Provenance::file);
    data::write_idx(ds, 2, 3, dir / "img.idx", dir / "lbl.idx");
    const auto back = data::load_idx(dir / "img.idx", dir / "lbl.idx");
    CHECK(std::ranges::equal(back.features(), ds.features()));
    CHECK(std::ranges::equal(back.labels(), ds.labels()));
    CHECK_THROWS_AS(data::load_idx(dir / "missing", dir / "lbl.idx"), IoError);
  }
}

TEST_SUITE("csv") {
  TEST_CASE("round trip is exact") {
    TempDir dir("csv");
    data::SyntheticSpec spec;
    spec.dim = 3;
    spec.classes = 3;
    spec.examples_per_class = 5;
    const auto ds = data::generate_synthetic(spec);
    data::write_csv(ds, dir / "d.csv");
    const auto back = data::load_csv(dir / "d.csv");
    CHECK(std::ranges::equal(back.features(), ds.features()));
    CHECK(std::ranges::equal(back.labels(), ds.labels()));
  }

  TEST_CASE("bad rows name the line") {
    TempDir dir("csvbad");
    std::ofstream(dir / "d.csv") << "label,f0,f1\n0,1,2\n1,x,2\n";
    try {
      data::load_csv(dir / "d.csv");
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::ofstream(dir / "e.csv") << "label,f0,f1\n0,1,2\n1,2\n";
    CHECK_THROWS_AS(data::load_csv(dir / "e.csv"), IoError);
  }
}

TEST_SUITE("splits") {
  TEST_CASE("empty parts are rejected") {
    CHECK_THROWS_AS(data::split_classes(small_dataset(10), {1.0, 0.0, 0.0}, 1), ConfigError);
    CHECK_THROWS_AS(data::split_classes(small_dataset(10), {0.5, 0.2, 0.2}, 1), ConfigError);
    CHECK_THROWS_AS(data::split_classes(small_dataset(5), {0.6, 0.2, 0.2}, 1), ConfigError);
  }

  TEST_CASE("10 classes at 0.6/0.2/0.2 give 6/2/2") {
    const auto s = data::split_classes(small_dataset(10), {0.6, 0.2, 0.2}, 1);
    CHECK(s.train.size() == 6);
    CHECK(s.validation.size() == 2);
    CHECK(s.test.size() == 2);
  }

  TEST_CASE("splits partition the classes") {
    const auto ds = small_dataset(23);
    const auto s = data::split_classes(ds, {0.5, 0.25, 0.25}, 9);
    std::set<int> all;
    for (const auto* part : {&s.train, &s.validation, &s.test})
      for (int c : *part) CHECK(all.insert(c).second);
    CHECK(all == std::set<int>(ds.classes().begin(), ds.classes().end()));
    CHECK(&s.part("val") == &s.validation);
    CHECK_THROWS_AS(s.part("holdout"), ConfigError);
  }

  TEST_CASE("same seed reproduces the split, another seed changes it") {
    const auto ds = small_dataset(20);
    const auto a = data::split_classes(ds, {0.6, 0.2, 0.2}, 5);
    const auto b = data::split_classes(ds, {0.6, 0.2, 0.2}, 5);
    const auto c = data::split_classes(ds, {0.6, 0.2, 0.2}, 6);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK((a.train != c.train || a.validation != c.validation));
  }

  TEST_CASE("4 folds over 8 datasets hold out each dataset exactly once") {
    const std::vector<std::string> names{"a", "b", "c", "d", "e", "f", "g", "h"};
    const auto folds = data::kfold_splits(names, 4, 2);
    REQUIRE(folds.size() == 4);
    std::multiset<std::string> held;
    for (const auto& f : folds) {
      CHECK(f.held_out.size() == 2);
      CHECK(f.in_domain.size() == 6);
      for (const auto& n : f.held_out) {
        held.insert(n);
        CHECK(std::find(f.in_domain.begin(), f.in_domain.end(), n) == f.in_domain.end());
      }
    }
    CHECK(held == std::multiset<std::string>(names.begin(), names.end()));
    const auto again = data::kfold_splits(names, 4, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(again[i].held_out == folds[i].held_out);
  }

  TEST_CASE("k outside [2, count] is rejected") {
    const std::vector<std::string> names{"a", "b", "c"};
    CHECK_THROWS_AS(data::kfold_splits(names, 1, 0), ConfigError);
    CHECK_THROWS_AS(data::kfold_splits(names, 4, 0), ConfigError);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("shape and label checks") {
    CHECK_THROWS_AS(data::LabeledDataset(0, {}, {}, data::Provenance::file), ConfigError);
    CHECK_THROWS(data::LabeledDataset(2, {1, 2, 3}, {0}, data::Provenance::file));
    CHECK_THROWS_AS(data::LabeledDataset(1, {1.0}, {-1}, data::Provenance::file), ConfigError);
    CHECK_THROWS_AS(small_dataset(2).indices_of(5), SamplingError);
  }
}
