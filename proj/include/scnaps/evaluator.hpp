#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scnaps/episodes.hpp"
#include "scnaps/model.hpp"

namespace scnaps::evaluator {

struct QueryRecord {
  int label = 0;
  int predicted = 0;
  std::vector<double> probabilities;
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  std::size_t way = 0;
  std::vector<int> shots;
  std::vector<QueryRecord> queries;
  double accuracy = 0.0;
};

EpisodeResult run_episode(const Model& model, const episodes::Episode& episode);

// Mean with a normal-approximation 95% interval: 1.96 * sd / sqrt(n), where sd
// uses the n - 1 denominator.
struct Summary {
  double mean = 0.0;
  double ci_halfwidth = 0.0;
  std::size_t count = 0;
};
Summary summarize(std::span<const double> values);

struct Evaluation {
  Summary summary;
  std::vector<EpisodeResult> results;
};

// The first n_tasks episodes of `stream`.
Evaluation evaluate(const Model& model, const episodes::EpisodeStream& stream, std::size_t n_tasks,
                    std::size_t workers = 1);

// One JSON object per line, keys in the order
// seed, way, shots, accuracy, queries[{label, predicted, probabilities}].
void write_results(const std::vector<EpisodeResult>& results, const std::filesystem::path& path);
std::vector<EpisodeResult> read_results(const std::filesystem::path& path);

struct CurvePoint {
  std::string group;
  double mean_accuracy = 0.0;
  std::size_t count = 0;
  double ci_halfwidth = 0.0;
};

enum class ShotGrouping { buckets, exact };

// "1-2", "3-4", "5-8", "9-16", "17+".
std::string shot_bucket(int shots);

// Per-class query accuracy grouped by that class's shot count.
std::vector<CurvePoint> accuracy_by_shots(std::span<const EpisodeResult> results,
                                          ShotGrouping grouping = ShotGrouping::buckets);
// Whole-episode accuracy grouped by way.
std::vector<CurvePoint> accuracy_by_ways(std::span<const EpisodeResult> results);

// Header: group,mean_accuracy,count,ci_halfwidth
void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path);
std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path);

// Order-sensitive digest of the episode seeds; equal digests mean paired episodes.
std::uint64_t episode_digest(std::span<const EpisodeResult> results);

struct AblationEntry {
  std::string variant;
  std::string family;
  Evaluation evaluation;
};

struct AblationTable {
  std::vector<std::string> variants;
  std::vector<std::string> families;
  std::vector<std::vector<Summary>> cells;  // [variant][family]
};

// Throws ConfigError when two variants were evaluated on different episodes of
// the same family or when a (variant, family) cell is missing.
AblationTable ablation_table(std::span<const AblationEntry> entries);

// Header: variant,<family>,<family>_ci,... ; one row per variant.
void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path);

// Header: family,mean_accuracy,ci_halfwidth,count
void write_summary_csv(std::span<const std::pair<std::string, Summary>> rows, const std::filesystem::path& path);

// Header: component,count
void write_param_counts_csv(const ParameterCounts& counts, const std::filesystem::path& path);

}  // namespace scnaps::evaluator
