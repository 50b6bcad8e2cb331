#include "scnaps/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "scnaps/errors.hpp"

namespace scnaps::evaluator {

namespace {

using json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

struct Group {
  std::string name;
  std::vector<double> values;
};

std::vector<CurvePoint> to_points(const std::map<long, Group>& groups) {
  std::vector<CurvePoint> out;
  for (const auto& [key, g] : groups) {
    const Summary s = summarize(g.values);
    out.push_back({g.name, s.mean, s.count, s.ci_halfwidth});
  }
  return out;
}

long bucket_index(int shots) {
  if (shots <= 2) return 0;
  if (shots <= 4) return 1;
  if (shots <= 8) return 2;
  if (shots <= 16) return 3;
  return 4;
}

}  // namespace

EpisodeResult run_episode(const Model& model, const episodes::Episode& ep) {
  const Tensor probs = model.probabilities(ep);
  const auto predicted = heads::predict(probs);
  EpisodeResult r;
  r.seed = ep.seed;
  r.way = ep.way();
  r.shots = ep.shots;
  std::size_t correct = 0;
  for (std::size_t q = 0; q < predicted.size(); ++q) {
    const auto row = probs.row_span(q);
    r.queries.push_back({ep.query_labels[q], predicted[q], {row.begin(), row.end()}});
    correct += predicted[q] == ep.query_labels[q];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(predicted.size());
  return r;
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    s.ci_halfwidth = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

Evaluation evaluate(const Model& model, const episodes::EpisodeStream& stream, std::size_t n_tasks,
                    std::size_t workers) {
  if (n_tasks < 2) throw ConfigError("evaluate: need at least 2 tasks, got " + std::to_string(n_tasks));
  if (n_tasks > stream.size())
    throw SamplingError("evaluate: stream holds " + std::to_string(stream.size()) + " episodes, asked for " +
                        std::to_string(n_tasks));
  Evaluation ev;
  ev.results.resize(n_tasks);
  workers = std::max<std::size_t>(1, std::min(workers, n_tasks));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n_tasks; i += workers) ev.results[i] = run_episode(model, stream.at(i));
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> acc;
  for (const auto& r : ev.results) acc.push_back(r.accuracy);
  ev.summary = summarize(acc);
  return ev;
}

void write_results(const std::vector<EpisodeResult>& results, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& r : results) {
    json j;
    j["seed"] = r.seed;
    j["way"] = r.way;
    j["shots"] = r.shots;
    j["accuracy"] = r.accuracy;
    json qs = json::array();
    for (const auto& q : r.queries)
      qs.push_back(json{{"label", q.label}, {"predicted", q.predicted}, {"probabilities", q.probabilities}});
    j["queries"] = std::move(qs);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<EpisodeResult> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read results file " + path.string());
  std::vector<EpisodeResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpisodeResult r;
      r.seed = j.at("seed").get<std::uint64_t>();
      r.way = j.at("way").get<std::size_t>();
      r.shots = j.at("shots").get<std::vector<int>>();
      r.accuracy = j.at("accuracy").get<double>();
      for (const auto& q : j.at("queries"))
        r.queries.push_back({q.at("label").get<int>(), q.at("predicted").get<int>(),
                             q.at("probabilities").get<std::vector<double>>()});
      results.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return results;
}

std::string shot_bucket(int shots) {
  static const char* names[] = {"1-2", "3-4", "5-8", "9-16", "17+"};
  if (shots < 1) throw ConfigError("shot_bucket: shots must be >= 1");
  return names[bucket_index(shots)];
}

std::vector<CurvePoint> accuracy_by_shots(std::span<const EpisodeResult> results, ShotGrouping grouping) {
  if (results.empty()) throw ConfigError("accuracy_by_shots: no results");
  std::map<long, Group> groups;
  for (const auto& r : results) {
    std::vector<std::size_t> total(r.way, 0), correct(r.way, 0);
    for (const auto& q : r.queries) {
      const auto k = static_cast<std::size_t>(q.label);
      if (k >= r.way) throw ConfigError("accuracy_by_shots: query label outside episode classes");
      ++total[k];
      correct[k] += q.predicted == q.label;
    }
    for (std::size_t k = 0; k < r.way; ++k) {
      if (total[k] == 0) continue;
      const int shots = r.shots.at(k);
      const long key = grouping == ShotGrouping::buckets ? bucket_index(shots) : shots;
      auto& g = groups[key];
      g.name = grouping == ShotGrouping::buckets ? shot_bucket(shots) : std::to_string(shots);
      g.values.push_back(static_cast<double>(correct[k]) / static_cast<double>(total[k]));
    }
  }
  return to_points(groups);
}

std::vector<CurvePoint> accuracy_by_ways(std::span<const EpisodeResult> results) {
  if (results.empty()) throw ConfigError("accuracy_by_ways: no results");
  std::map<long, Group> groups;
  for (const auto& r : results) {
    auto& g = groups[static_cast<long>(r.way)];
    g.name = std::to_string(r.way);
    g.values.push_back(r.accuracy);
  }
  return to_points(groups);
}

void write_curve_csv(std::span<const CurvePoint> points, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "group,mean_accuracy,count,ci_halfwidth\n";
  for (const auto& p : points)
    out << p.group << ',' << fmt(p.mean_accuracy) << ',' << p.count << ',' << fmt(p.ci_halfwidth) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read curve file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "group,mean_accuracy,count,ci_halfwidth")
    throw ConfigError(path.string() + ":1: unexpected header '" + line + "'");
  std::vector<CurvePoint> points;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string group, mean, count, ci;
    if (!std::getline(ss, group, ',') || !std::getline(ss, mean, ',') || !std::getline(ss, count, ',') ||
        !std::getline(ss, ci))
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 4 fields");
    try {
      points.push_back({group, std::stod(mean), std::stoul(count), std::stod(ci)});
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return points;
}

std::uint64_t episode_digest(std::span<const EpisodeResult> results) {
  std::string seeds;
  for (const auto& r : results) seeds += std::to_string(r.seed) + ";";
  return fnv1a64(seeds);
}

AblationTable ablation_table(std::span<const AblationEntry> entries) {
  AblationTable t;
  for (const auto& e : entries) {
    if (std::find(t.variants.begin(), t.variants.end(), e.variant) == t.variants.end())
      t.variants.push_back(e.variant);
    if (std::find(t.families.begin(), t.families.end(), e.family) == t.families.end())
      t.families.push_back(e.family);
  }
  std::map<std::string, std::uint64_t> digests;
  std::map<std::pair<std::string, std::string>, Summary> cells;
  for (const auto& e : entries) {
    const std::uint64_t d = episode_digest(e.evaluation.results);
    auto [it, fresh] = digests.emplace(e.family, d);
    if (!fresh && it->second != d)
      throw ConfigError("ablation: variant '" + e.variant + "' saw different episodes on family '" + e.family + "'");
    cells[{e.variant, e.family}] = e.evaluation.summary;
  }
  for (const auto& v : t.variants) {
    std::vector<Summary> row;
    for (const auto& f : t.families) {
      auto it = cells.find({v, f});
      if (it == cells.end()) throw ConfigError("ablation: variant '" + v + "' missing family '" + f + "'");
      row.push_back(it->second);
    }
    t.cells.push_back(std::move(row));
  }
  return t;
}

void write_ablation_csv(const AblationTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "variant";
  for (const auto& f : table.families) out << ',' << f << ',' << f << "_ci";
  out << '\n';
  for (std::size_t v = 0; v < table.variants.size(); ++v) {
    out << table.variants[v];
    for (const auto& c : table.cells[v]) out << ',' << fmt(c.mean) << ',' << fmt(c.ci_halfwidth);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

void write_summary_csv(std::span<const std::pair<std::string, Summary>> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "family,mean_accuracy,ci_halfwidth,count\n";
  for (const auto& [name, s] : rows) out << name << ',' << fmt(s.mean) << ',' << fmt(s.ci_halfwidth) << ',' << s.count << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_param_counts_csv(const ParameterCounts& c, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "component,count\n"
      << "backbone," << c.backbone << "\nadaptation," << c.adaptation << "\nhead," << c.head << "\nprojection,"
      << c.projection << "\ntotal," << c.total << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace scnaps::evaluator
