#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scnaps/data.hpp"
#include "scnaps/episodes.hpp"
#include "scnaps/evaluator.hpp"
#include "scnaps/trainer.hpp"

namespace scnaps::config {

enum class SourceKind { synthetic, idx, csv };

struct FamilyConfig {
  std::string name;
  SourceKind source = SourceKind::synthetic;
  data::SyntheticSpec synthetic;
  std::filesystem::path images;  // idx
  std::filesystem::path labels;  // idx
  std::filesystem::path path;    // csv
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 0;
  bool held_out = false;  // never trained on; every class is a test class
};

struct EvalConfig {
  std::size_t episodes = 600;
  std::filesystem::path checkpoint;
  evaluator::ShotGrouping shot_grouping = evaluator::ShotGrouping::buckets;
  std::vector<std::string> variants{"mahalanobis", "l2"};
  int folds = 4;
  std::size_t oracle_queries = 100000;
  std::size_t invariant_instances = 1000;
};

// Everything a run needs. trainer.seed and trainer.workers double as the run's
// master seed and worker count.
struct RunConfig {
  std::filesystem::path out = "run";
  trainer::TrainConfig train;
  EvalConfig eval;
  std::vector<FamilyConfig> families;
};

// Plain "key = value" text with [run], [protocol], [backbone], [head],
// [train], [eval] and one [family.NAME] section per data source. Relative
// paths resolve against `base_dir`. Unknown sections or keys are errors.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Every field, in a form parse_run_config reads back to the same RunConfig.
std::string render_run_config(const RunConfig& config);

struct LoadedFamily {
  FamilyConfig config;
  data::LabeledDataset dataset;
  data::ClassSplit split;

  // Classes episodes are drawn from when testing on this family.
  const std::vector<int>& test_classes() const;
};

// Loads or generates every family and sets the backbone input width from the
// data (all families must agree).
std::vector<LoadedFamily> load_families(RunConfig& config);

// Training and validation pools of the families not held out, optionally
// further restricted to `names`.
std::vector<episodes::TaskSource> train_sources(const std::vector<LoadedFamily>& families,
                                                const std::vector<std::string>* names = nullptr);
std::vector<episodes::TaskSource> validation_sources(const std::vector<LoadedFamily>& families,
                                                     const std::vector<std::string>* names = nullptr);

// Paired test stream of family `index`: the same episodes for every model.
episodes::EpisodeStream test_stream(const RunConfig& config, const std::vector<LoadedFamily>& families,
                                    std::size_t index);

}  // namespace scnaps::config
