#include "scnaps/episodes.hpp"

#include <algorithm>
#include <set>

#include "scnaps/errors.hpp"

namespace scnaps::episodes {

EpisodeProtocol EpisodeProtocol::fixed(int ways, int shots, int queries) {
  EpisodeProtocol p;
  p.mode = Mode::fixed;
  p.ways = ways;
  p.shots = shots;
  p.queries = queries;
  p.validate();
  return p;
}

EpisodeProtocol EpisodeProtocol::variable(int way_min, int way_max, int shot_min, int shot_max,
                                          int queries) {
  EpisodeProtocol p;
  p.mode = Mode::variable;
  p.way_min = way_min;
  p.way_max = way_max;
  p.shot_min = shot_min;
  p.shot_max = shot_max;
  p.queries = queries;
  p.validate();
  return p;
}

void EpisodeProtocol::validate() const {
  if (queries < 1) throw ConfigError("protocol: queries must be >= 1");
  if (mode == Mode::fixed) {
    if (ways < 2) throw ConfigError("protocol: ways must be >= 2");
    if (shots < 1) throw ConfigError("protocol: shots must be >= 1");
  } else {
    if (way_min < 2) throw ConfigError("protocol: way_min must be >= 2");
    if (way_max < way_min) throw ConfigError("protocol: way_max must be >= way_min");
    if (shot_min < 1) throw ConfigError("protocol: shot_min must be >= 1");
    if (shot_max < shot_min) throw ConfigError("protocol: shot_max must be >= shot_min");
  }
}

Episode sample_episode(const data::LabeledDataset& dataset, std::span<const int> classes,
                       const EpisodeProtocol& protocol, Rng& rng) {
  protocol.validate();
  const bool fixed = protocol.mode == Mode::fixed;
  const int need_ways = fixed ? protocol.ways : protocol.way_min;
  if (static_cast<int>(classes.size()) < need_ways)
    throw SamplingError("need at least " + std::to_string(need_ways) + " classes, split has " +
                        std::to_string(classes.size()));

  int way = protocol.ways;
  if (!fixed) {
    const int hi = std::min<int>(protocol.way_max, static_cast<int>(classes.size()));
    way = static_cast<int>(uniform_int(rng, protocol.way_min, hi));
  }

  std::vector<int> pool(classes.begin(), classes.end());
  // partial Fisher-Yates: first `way` entries become the chosen classes
  for (int i = 0; i < way; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, i, static_cast<long>(pool.size()) - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }

  Episode ep;
  ep.classes.assign(pool.begin(), pool.begin() + way);
  const std::size_t dim = dataset.dim();
  std::vector<double> support, query;
  for (int local = 0; local < way; ++local) {
    const int label = ep.classes[static_cast<std::size_t>(local)];
    const auto members = dataset.indices_of(label);
    const int available = static_cast<int>(members.size());
    int shots = fixed ? protocol.shots : static_cast<int>(uniform_int(rng, protocol.shot_min, protocol.shot_max));
    const int min_needed = (fixed ? protocol.shots : protocol.shot_min) + protocol.queries;
    if (available < min_needed)
      throw SamplingError("class " + std::to_string(label) + " has " + std::to_string(available) +
                          " examples, needs at least " + std::to_string(min_needed));
    shots = std::min(shots, available - protocol.queries);

    std::vector<std::size_t> picked(members.begin(), members.end());
    const int take = shots + protocol.queries;
    for (int i = 0; i < take; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, i, static_cast<long>(picked.size()) - 1));
      std::swap(picked[static_cast<std::size_t>(i)], picked[j]);
    }
    for (int i = 0; i < take; ++i) {
      const std::size_t idx = picked[static_cast<std::size_t>(i)];
      const auto x = dataset.example(idx);
      if (i < shots) {
        support.insert(support.end(), x.begin(), x.end());
        ep.support_labels.push_back(local);
        ep.support_indices.push_back(idx);
      } else {
        query.insert(query.end(), x.begin(), x.end());
        ep.query_labels.push_back(local);
        ep.query_indices.push_back(idx);
      }
    }
    ep.shots.push_back(shots);
  }
  ep.support = Tensor(ep.support_labels.size(), dim, std::move(support));
  ep.query = Tensor(ep.query_labels.size(), dim, std::move(query));
  return ep;
}

void validate_episode(const Episode& ep) {
  const std::size_t way = ep.way();
  if (way < 2) throw SamplingError("episode has fewer than 2 classes");
  if (ep.shots.size() != way) throw SamplingError("shot vector length differs from way");
  if (ep.support.rows() != ep.support_labels.size() || ep.query.rows() != ep.query_labels.size())
    throw SamplingError("episode rows and labels disagree");
  if (ep.support_indices.size() != ep.support_labels.size() ||
      ep.query_indices.size() != ep.query_labels.size())
    throw SamplingError("episode indices and labels disagree");

  std::vector<int> support_count(way, 0), query_count(way, 0);
  for (int y : ep.support_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= way) throw SamplingError("support label out of range");
    ++support_count[static_cast<std::size_t>(y)];
  }
  for (int y : ep.query_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= way)
      throw SamplingError("query label is not a support label");
    ++query_count[static_cast<std::size_t>(y)];
  }
  for (std::size_t k = 0; k < way; ++k) {
    if (support_count[k] < 1) throw SamplingError("class " + std::to_string(k) + " has no support");
    if (query_count[k] < 1) throw SamplingError("class " + std::to_string(k) + " has no queries");
    if (support_count[k] != ep.shots[k])
      throw SamplingError("recorded shots differ from realized support for class " + std::to_string(k));
  }
  std::set<std::size_t> seen;
  for (std::size_t i : ep.support_indices)
    if (!seen.insert(i).second) throw SamplingError("duplicate dataset index " + std::to_string(i));
  for (std::size_t i : ep.query_indices)
    if (!seen.insert(i).second) throw SamplingError("duplicate dataset index " + std::to_string(i));
  std::set<int> distinct(ep.classes.begin(), ep.classes.end());
  if (distinct.size() != way) throw SamplingError("episode repeats a class");
}

EpisodeStream::EpisodeStream(std::vector<TaskSource> sources, EpisodeProtocol protocol,
                             std::size_t count, std::uint64_t master_seed)
    : sources_(std::move(sources)), protocol_(protocol), count_(count), master_seed_(master_seed) {
  if (count_ < 1) throw ConfigError("episode stream: count must be >= 1");
  if (sources_.empty()) throw ConfigError("episode stream: no task sources");
  for (const auto& s : sources_)
    if (s.dataset == nullptr) throw ConfigError("episode stream: source '" + s.name + "' has no dataset");
  protocol_.validate();
}

std::uint64_t EpisodeStream::seed_of(std::size_t index) const { return derive_seed(master_seed_, index); }

Episode EpisodeStream::at(std::size_t index) const {
  if (index >= count_)
    throw SamplingError("episode index " + std::to_string(index) + " beyond stream of " +
                        std::to_string(count_));
  const std::uint64_t seed = seed_of(index);
  Rng rng(seed);
  std::size_t source = 0;
  if (sources_.size() > 1) source = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(sources_.size()) - 1));
  const TaskSource& s = sources_[source];
  Episode ep = sample_episode(*s.dataset, s.classes, protocol_, rng);
  ep.seed = seed;
  ep.source = source;
  return ep;
}

}  // namespace scnaps::episodes
