#include "scnaps/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "scnaps/errors.hpp"
#include "scnaps/rng.hpp"

namespace scnaps::data {

LabeledDataset::LabeledDataset(std::size_t dim, std::vector<double> features, std::vector<int> labels,
                               Provenance provenance,
                               std::optional<std::map<int, ClassGaussian>> ground_truth)
    : dim_(dim),
      features_(std::move(features)),
      labels_(std::move(labels)),
      provenance_(provenance),
      ground_truth_(std::move(ground_truth)) {
  if (dim_ == 0) throw ConfigError("dataset dimension must be positive");
  if (features_.size() != labels_.size() * dim_)
    throw ShapeError("dataset: " + std::to_string(features_.size()) + " feature values for " +
                     std::to_string(labels_.size()) + " examples of dimension " +
                     std::to_string(dim_));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0) throw ConfigError("dataset: negative label at example " + std::to_string(i));
    by_class_[labels_[i]].push_back(i);
  }
  for (const auto& [label, _] : by_class_) classes_.push_back(label);
}

std::span<const std::size_t> LabeledDataset::indices_of(int label) const {
  auto it = by_class_.find(label);
  if (it == by_class_.end()) throw SamplingError("class " + std::to_string(label) + " is not in the dataset");
  return it->second;
}

// ---- synthetic --------------------------------------------------------------

namespace {

Tensor random_rotation(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor q(d, d);
  for (double& v : q.data()) v = normal(rng);
  // modified Gram-Schmidt on columns, two passes for orthogonality at d ~ 100
  for (std::size_t j = 0; j < d; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += q(i, j) * q(i, k);
        for (std::size_t i = 0; i < d; ++i) q(i, j) -= dot * q(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) q(i, j) /= norm;
  }
  return q;
}

std::vector<double> spectrum(std::size_t d, double kappa, double scale, Rng& rng) {
  std::vector<double> eig(d, 1.0);
  if (kappa > 1.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    eig[0] = 1.0;
    eig[d - 1] = kappa;
    for (std::size_t i = 1; i + 1 < d; ++i) eig[i] = std::pow(kappa, unit(rng));
    std::sort(eig.begin(), eig.end(), std::greater<>());
  }
  const double mean = std::accumulate(eig.begin(), eig.end(), 0.0) / static_cast<double>(d);
  for (double& e : eig) e *= scale / mean;
  return eig;
}

}  // namespace

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.dim < 1) throw ConfigError("synthetic: dim must be >= 1");
  if (spec.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  if (spec.examples_per_class < 1) throw ConfigError("synthetic: examples_per_class must be >= 1");
  if (!(spec.kappa >= 1.0)) throw ConfigError("synthetic: kappa must be >= 1");
  if (!(spec.scale > 0.0)) throw ConfigError("synthetic: scale must be > 0");
  if (!(spec.mean_range >= 0.0)) throw ConfigError("synthetic: mean_range must be >= 0");
  if (spec.dim == 1 && spec.kappa > 1.0)
    throw ConfigError("synthetic: a 1-dimensional covariance cannot have kappa > 1");

  Rng rng(spec.seed);
  std::uniform_real_distribution<double> mean_dist(-spec.mean_range, spec.mean_range);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.dim;

  std::map<int, ClassGaussian> truth;
  Tensor shared = spec.shared_rotation ? random_rotation(d, rng) : Tensor();
  for (std::size_t k = 0; k < spec.classes; ++k) {
    ClassGaussian g;
    g.mean.resize(d);
    for (double& m : g.mean) m = mean_dist(rng);
    g.eigenvalues = spectrum(d, spec.kappa, spec.scale, rng);
    g.rotation = spec.shared_rotation ? shared : random_rotation(d, rng);
    g.covariance = Tensor(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < d; ++l) s += g.rotation(i, l) * g.eigenvalues[l] * g.rotation(j, l);
        g.covariance(i, j) = s;
      }
    truth.emplace(static_cast<int>(k), std::move(g));
  }

  std::vector<double> features;
  std::vector<int> labels;
  features.reserve(spec.classes * spec.examples_per_class * d);
  std::vector<double> z(d);
  for (const auto& [label, g] : truth) {
    std::vector<double> root(d);
    for (std::size_t l = 0; l < d; ++l) root[l] = std::sqrt(g.eigenvalues[l]);
    for (std::size_t n = 0; n < spec.examples_per_class; ++n) {
      for (double& v : z) v = normal(rng);
      for (std::size_t i = 0; i < d; ++i) {
        double s = g.mean[i];
        for (std::size_t l = 0; l < d; ++l) s += g.rotation(i, l) * root[l] * z[l];
        features.push_back(s);
      }
      labels.push_back(label);
    }
  }
  return LabeledDataset(d, std::move(features), std::move(labels), Provenance::synthetic,
                        std::move(truth));
}

// ---- IDX --------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size())
    throw ParseError("truncated", bytes.size(),
                     std::string("idx ") + what + ": header truncated at byte offset " +
                         std::to_string(bytes.size()));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t image_magic = read_be32(images, 0, "images");
  if (image_magic != kIdxImageMagic) {
    std::ostringstream msg;
    msg << "idx images: bad magic 0x" << std::hex << std::setw(8) << std::setfill('0') << image_magic
        << " at byte offset 0";
    throw ParseError("bad_magic", 0, msg.str());
  }
  const std::uint32_t count = read_be32(images, 4, "images");
  const std::uint32_t rows = read_be32(images, 8, "images");
  const std::uint32_t cols = read_be32(images, 12, "images");
  const std::size_t pixels = std::size_t{rows} * cols;
  if (pixels == 0) throw ParseError("bad_header", 8, "idx images: zero-sized images at byte offset 8");
  const std::size_t expected = 16 + std::size_t{count} * pixels;
  if (images.size() < expected)
    throw ParseError("truncated", images.size(),
                     "idx images: payload truncated at byte offset " + std::to_string(images.size()) +
                         " (expected " + std::to_string(expected) + " bytes)");

  const std::uint32_t label_magic = read_be32(labels, 0, "labels");
  if (label_magic != kIdxLabelMagic) {
    std::ostringstream msg;
    msg << "idx labels: bad magic 0x" << std::hex << std::setw(8) << std::setfill('0') << label_magic
        << " at byte offset 0";
    throw ParseError("bad_magic", 0, msg.str());
  }
  const std::uint32_t label_count = read_be32(labels, 4, "labels");
  if (label_count != count)
    throw ParseError("count_mismatch", 4,
                     "idx labels: count " + std::to_string(label_count) + " at byte offset 4 differs from image count " +
                         std::to_string(count));
  if (labels.size() < 8 + std::size_t{count})
    throw ParseError("truncated", labels.size(),
                     "idx labels: payload truncated at byte offset " + std::to_string(labels.size()));

  std::vector<double> features(std::size_t{count} * pixels);
  for (std::size_t i = 0; i < features.size(); ++i) features[i] = images[16 + i] / 255.0;
  std::vector<int> ys(count);
  for (std::size_t i = 0; i < count; ++i) ys[i] = labels[8 + i];
  return LabeledDataset(pixels, std::move(features), std::move(ys), Provenance::file);
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lbl = read_file(labels);
  return parse_idx(img, lbl);
}

void write_idx(const LabeledDataset& dataset, std::uint32_t rows, std::uint32_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (std::size_t{rows} * cols != dataset.dim())
    throw ShapeError("write_idx: " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not match dimension " + std::to_string(dataset.dim()));
  std::vector<std::uint8_t> img, lbl;
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(dataset.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  for (double v : dataset.features()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("write_idx: value outside [0, 1]");
    img.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  put_be32(lbl, kIdxLabelMagic);
  put_be32(lbl, static_cast<std::uint32_t>(dataset.size()));
  for (int y : dataset.labels()) {
    if (y > 255) throw ConfigError("write_idx: label exceeds one byte");
    lbl.push_back(static_cast<std::uint8_t>(y));
  }
  write_file(images, img);
  write_file(labels, lbl);
}

// ---- CSV --------------------------------------------------------------------

void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (std::size_t j = 0; j < dataset.dim(); ++j) out << ",f" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.label(i);
    for (double v : dataset.example(i)) out << ',' << v;
    out << '\n';
  }
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(row, cell, ',')) {
      try {
        if (n == 0) {
          labels.push_back(std::stoi(cell));
        } else {
          features.push_back(std::stod(cell));
        }
      } catch (const std::exception&) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      ++n;
    }
    if (n != dim + 1)
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(dim + 1) + " fields, got " + std::to_string(n));
  }
  return LabeledDataset(dim, std::move(features), std::move(labels), Provenance::file);
}

void write_ground_truth(const LabeledDataset& dataset, const std::filesystem::path& path) {
  if (!dataset.ground_truth()) throw ConfigError("dataset carries no ground truth");
  auto matrix = [](const Tensor& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < t.rows(); ++r)
      rows.push_back(std::vector<double>(t.row_span(r).begin(), t.row_span(r).end()));
    return rows;
  };
  nlohmann::ordered_json doc;
  doc["classes"] = nlohmann::ordered_json::array();
  for (const auto& [label, g] : *dataset.ground_truth()) {
    nlohmann::ordered_json c;
    c["label"] = label;
    c["mean"] = g.mean;
    c["eigenvalues"] = g.eigenvalues;
    c["rotation"] = matrix(g.rotation);
    c["covariance"] = matrix(g.covariance);
    doc["classes"].push_back(std::move(c));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

// ---- splits -----------------------------------------------------------------

const std::vector<int>& ClassSplit::part(std::string_view name) const {
  if (name == "train") return train;
  if (name == "validation" || name == "val") return validation;
  if (name == "test") return test;
  throw ConfigError("unknown split part '" + std::string(name) + "'");
}

ClassSplit split_classes(const LabeledDataset& dataset, std::array<double, 3> fractions,
                         std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0)) throw ConfigError("split fractions must all be positive");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<int> classes = dataset.classes();
  const auto k = static_cast<long>(classes.size());
  const long n_train = std::lround(fractions[0] * static_cast<double>(k));
  const long n_val = std::lround(fractions[1] * static_cast<double>(k));
  const long n_test = k - n_train - n_val;
  if (n_train < 2 || n_val < 2 || n_test < 2)
    throw ConfigError("split of " + std::to_string(k) + " classes leaves a part with fewer than 2 classes (" +
                      std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                      std::to_string(n_test) + ")");

  Rng rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);
  ClassSplit split;
  split.train.assign(classes.begin(), classes.begin() + n_train);
  split.validation.assign(classes.begin() + n_train, classes.begin() + n_train + n_val);
  split.test.assign(classes.begin() + n_train + n_val, classes.end());
  return split;
}

std::vector<Fold> kfold_splits(std::span<const std::string> datasets, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold: k must be >= 2, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > datasets.size())
    throw ConfigError("kfold: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(datasets.size()) + " datasets available");
  std::vector<std::string> order(datasets.begin(), datasets.end());
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) folds[static_cast<std::size_t>(f)].index = f;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto group = i % static_cast<std::size_t>(k);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (f == group) {
        folds[f].held_out.push_back(order[i]);
      } else {
        folds[f].in_domain.push_back(order[i]);
      }
    }
  }
  return folds;
}

}  // namespace scnaps::data
