#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scnaps/data.hpp"
#include "scnaps/rng.hpp"
#include "scnaps/tensor.hpp"

namespace scnaps::episodes {

enum class Mode { variable, fixed };

// Variable mode draws the way count uniformly from [way_min, way_max] and each
// class's shot count uniformly from [shot_min, shot_max]; fixed mode uses
// `ways` and `shots`. Both draw `queries` query examples per class.
struct EpisodeProtocol {
  Mode mode = Mode::fixed;
  int way_min = 2;
  int way_max = 10;
  int shot_min = 1;
  int shot_max = 20;
  int ways = 5;
  int shots = 5;
  int queries = 10;

  static EpisodeProtocol fixed(int ways, int shots, int queries);
  static EpisodeProtocol variable(int way_min, int way_max, int shot_min, int shot_max, int queries);
  void validate() const;
};

// One few-shot task. Local labels 0..way-1 index `classes`; the support and
// query rows are grouped by local label in ascending order.
struct Episode {
  Tensor support;
  std::vector<int> support_labels;
  Tensor query;
  std::vector<int> query_labels;
  std::vector<int> classes;  // dataset label of each local class
  std::vector<int> shots;    // support count per local class
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> query_indices;
  std::uint64_t seed = 0;
  std::size_t source = 0;

  std::size_t way() const noexcept { return classes.size(); }
};

// A pool of classes of one dataset that episodes are drawn from.
struct TaskSource {
  std::string name;
  const data::LabeledDataset* dataset = nullptr;
  std::vector<int> classes;
};

// Draws one episode from `classes` of `dataset` using `rng`.
Episode sample_episode(const data::LabeledDataset& dataset, std::span<const int> classes,
                       const EpisodeProtocol& protocol, Rng& rng);

// Throws SamplingError if any Episode invariant is violated.
void validate_episode(const Episode& episode);

// Deterministic, random-access stream: episode i is sampled from a generator
// seeded with derive_seed(master_seed, i), so any worker can materialize any
// index independently. With several sources, the source is the first draw.
class EpisodeStream {
 public:
  EpisodeStream(std::vector<TaskSource> sources, EpisodeProtocol protocol, std::size_t count,
                std::uint64_t master_seed);

  std::size_t size() const noexcept { return count_; }
  std::uint64_t seed_of(std::size_t index) const;
  Episode at(std::size_t index) const;
  const std::vector<TaskSource>& sources() const noexcept { return sources_; }
  const EpisodeProtocol& protocol() const noexcept { return protocol_; }
  std::uint64_t master_seed() const noexcept { return master_seed_; }

 private:
  std::vector<TaskSource> sources_;
  EpisodeProtocol protocol_;
  std::size_t count_;
  std::uint64_t master_seed_;
};

}  // namespace scnaps::episodes
