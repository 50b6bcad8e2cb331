#include "scnaps/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "scnaps/errors.hpp"

namespace scnaps::config {

namespace {

namespace fs = std::filesystem;
using Setter = std::function<void(const std::string&)>;

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

struct Field {
  std::string section, key;
};

template <typename T>
T parse_unsigned(const Field& f, const std::string& v) {
  unsigned long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(where(f.section, f.key) + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<T>(out);
}

int parse_int(const Field& f, const std::string& v) {
  int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(where(f.section, f.key) + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const Field& f, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError(where(f.section, f.key) + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const Field& f, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where(f.section, f.key) + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& v) {
  fs::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const char* bool_text(bool b) { return b ? "true" : "false"; }

using Table = std::map<std::string, Setter>;

template <typename T>
Setter unsigned_into(T& dst, Field f) {
  return [&dst, f](const std::string& v) { dst = parse_unsigned<T>(f, v); };
}

Table run_table(RunConfig& c, const fs::path& base) {
  return {
      {"out", [&c, base](const std::string& v) { c.out = resolve(base, v); }},
      {"seed", unsigned_into(c.train.seed, {"run", "seed"})},
      {"workers", unsigned_into(c.train.workers, {"run", "workers"})},
  };
}

Table protocol_table(episodes::EpisodeProtocol& p) {
  auto int_into = [](int& dst, const char* key) {
    return [&dst, key](const std::string& v) { dst = parse_int({"protocol", key}, v); };
  };
  return {
      {"mode",
       [&p](const std::string& v) {
         if (v == "fixed")
           p.mode = episodes::Mode::fixed;
         else if (v == "variable")
           p.mode = episodes::Mode::variable;
         else
           throw ConfigError("[protocol] mode: expected fixed or variable, got '" + v + "'");
       }},
      {"ways", int_into(p.ways, "ways")},
      {"shots", int_into(p.shots, "shots")},
      {"queries", int_into(p.queries, "queries")},
      {"way_min", int_into(p.way_min, "way_min")},
      {"way_max", int_into(p.way_max, "way_max")},
      {"shot_min", int_into(p.shot_min, "shot_min")},
      {"shot_max", int_into(p.shot_max, "shot_max")},
  };
}

Table backbone_table(backbone::BackboneConfig& b) {
  const std::string s = "backbone";
  auto dbl = [s](double& dst, const char* key) {
    return [&dst, s, key](const std::string& v) { dst = parse_double({s, key}, v); };
  };
  auto flag = [s](bool& dst, const char* key) {
    return [&dst, s, key](const std::string& v) { dst = parse_bool({s, key}, v); };
  };
  return {
      {"input_dim", unsigned_into(b.input_dim, {s, "input_dim"})},
      {"blocks", unsigned_into(b.blocks, {s, "blocks"})},
      {"width", unsigned_into(b.width, {s, "width"})},
      {"embedding_dim", unsigned_into(b.embedding_dim, {s, "embedding_dim"})},
      {"adapt", flag(b.adapt, "adapt")},
      {"autoregressive", flag(b.autoregressive, "autoregressive")},
      {"encoder_hidden", unsigned_into(b.encoder_hidden, {s, "encoder_hidden"})},
      {"task_dim", unsigned_into(b.task_dim, {s, "task_dim"})},
      {"adapter_hidden", unsigned_into(b.adapter_hidden, {s, "adapter_hidden"})},
      {"ar_dim", unsigned_into(b.ar_dim, {s, "ar_dim"})},
      {"output_init_gain", dbl(b.output_init_gain, "output_init_gain")},
      {"film_init_gain", dbl(b.film_init_gain, "film_init_gain")},
  };
}

Table head_table(heads::HeadConfig& h) {
  return {
      {"variant",
       [&h](const std::string& v) {
         const auto parsed = heads::parse_head(v);
         h.kind = parsed.kind;
         h.projection = parsed.projection;
       }},
      {"beta", [&h](const std::string& v) { h.beta = parse_double({"head", "beta"}, v); }},
      {"task_covariance",
       [&h](const std::string& v) {
         if (v == "global")
           h.task_covariance = heads::TaskCovariance::global;
         else if (v == "pooled")
           h.task_covariance = heads::TaskCovariance::pooled;
         else
           throw ConfigError("[head] task_covariance: expected global or pooled, got '" + v + "'");
       }},
      {"projection_dim", unsigned_into(h.projection_dim, {"head", "projection_dim"})},
      {"classifier_hidden", unsigned_into(h.classifier_hidden, {"head", "classifier_hidden"})},
  };
}

Table train_table(trainer::TrainConfig& t) {
  auto dbl = [](double& dst, const char* key) {
    return [&dst, key](const std::string& v) { dst = parse_double({"train", key}, v); };
  };
  return {
      {"preset", [](const std::string&) {}},  // applied before the other keys
      {"episodes", unsigned_into(t.episodes, {"train", "episodes"})},
      {"batch", unsigned_into(t.batch, {"train", "batch"})},
      {"learning_rate", dbl(t.learning_rate, "learning_rate")},
      {"beta1", dbl(t.beta1, "beta1")},
      {"beta2", dbl(t.beta2, "beta2")},
      {"epsilon", dbl(t.epsilon, "epsilon")},
      {"validation_period", unsigned_into(t.validation_period, {"train", "validation_period"})},
      {"validation_episodes", unsigned_into(t.validation_episodes, {"train", "validation_episodes"})},
  };
}

Table eval_table(EvalConfig& e, const fs::path& base) {
  return {
      {"episodes", unsigned_into(e.episodes, {"eval", "episodes"})},
      {"checkpoint", [&e, base](const std::string& v) { e.checkpoint = v.empty() ? fs::path() : resolve(base, v); }},
      {"shot_grouping",
       [&e](const std::string& v) {
         if (v == "buckets")
           e.shot_grouping = evaluator::ShotGrouping::buckets;
         else if (v == "exact")
           e.shot_grouping = evaluator::ShotGrouping::exact;
         else
           throw ConfigError("[eval] shot_grouping: expected buckets or exact, got '" + v + "'");
       }},
      {"variants",
       [&e](const std::string& v) {
         e.variants = split_list(v);
         for (const auto& name : e.variants) heads::parse_head(name);
       }},
      {"folds", [&e](const std::string& v) { e.folds = parse_int({"eval", "folds"}, v); }},
      {"oracle_queries", unsigned_into(e.oracle_queries, {"eval", "oracle_queries"})},
      {"invariant_instances", unsigned_into(e.invariant_instances, {"eval", "invariant_instances"})},
  };
}

Table family_table(FamilyConfig& f, const fs::path& base) {
  const std::string s = "family." + f.name;
  auto& syn = f.synthetic;
  auto dbl = [s](double& dst, const char* key) {
    return [&dst, s, key](const std::string& v) { dst = parse_double({s, key}, v); };
  };
  return {
      {"source",
       [&f, s](const std::string& v) {
         if (v == "synthetic")
           f.source = SourceKind::synthetic;
         else if (v == "idx")
           f.source = SourceKind::idx;
         else if (v == "csv")
           f.source = SourceKind::csv;
         else
           throw ConfigError("[" + s + "] source: expected synthetic, idx or csv, got '" + v + "'");
       }},
      {"dim", unsigned_into(syn.dim, {s, "dim"})},
      {"classes", unsigned_into(syn.classes, {s, "classes"})},
      {"examples_per_class", unsigned_into(syn.examples_per_class, {s, "examples_per_class"})},
      {"mean_range", dbl(syn.mean_range, "mean_range")},
      {"kappa", dbl(syn.kappa, "kappa")},
      {"scale", dbl(syn.scale, "scale")},
      {"shared_rotation", [&syn, s](const std::string& v) { syn.shared_rotation = parse_bool({s, "shared_rotation"}, v); }},
      {"seed", unsigned_into(syn.seed, {s, "seed"})},
      {"images", [&f, base](const std::string& v) { f.images = resolve(base, v); }},
      {"labels", [&f, base](const std::string& v) { f.labels = resolve(base, v); }},
      {"path", [&f, base](const std::string& v) { f.path = resolve(base, v); }},
      {"split",
       [&f, s](const std::string& v) {
         const auto parts = split_list(v);
         if (parts.size() != 3) throw ConfigError("[" + s + "] split: expected three comma-separated fractions");
         for (std::size_t i = 0; i < 3; ++i) f.split[i] = parse_double({s, "split"}, parts[i]);
       }},
      {"split_seed", unsigned_into(f.split_seed, {s, "split_seed"})},
      {"held_out", [&f, s](const std::string& v) { f.held_out = parse_bool({s, "held_out"}, v); }},
  };
}

void apply(const std::string& section, const boost::property_tree::ptree& keys, const Table& table) {
  for (const auto& [key, node] : keys) {
    if (!node.empty()) throw ConfigError("[" + section + "] " + key + ": nested keys are not supported");
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("[" + section + "]: unknown key '" + key + "'");
    it->second(node.data());
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig c;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty())
      throw ConfigError("key '" + section + "' appears outside any section");
  }
  if (auto train = tree.get_child_optional("train")) {
    if (auto preset = train->get_optional<std::string>("preset")) {
      if (*preset == "full")
        c.train = trainer::TrainConfig::full_scale();
      else if (*preset != "desk")
        throw ConfigError("[train] preset: expected desk or full, got '" + *preset + "'");
    }
  }

  std::set<std::string> names;
  for (const auto& [section, keys] : tree) {
    if (section == "run")
      apply(section, keys, run_table(c, base_dir));
    else if (section == "protocol")
      apply(section, keys, protocol_table(c.train.protocol));
    else if (section == "backbone")
      apply(section, keys, backbone_table(c.train.model.backbone));
    else if (section == "head")
      apply(section, keys, head_table(c.train.model.head));
    else if (section == "train")
      apply(section, keys, train_table(c.train));
    else if (section == "eval")
      apply(section, keys, eval_table(c.eval, base_dir));
    else if (section.rfind("family.", 0) == 0 && section.size() > 7) {
      FamilyConfig f;
      f.name = section.substr(7);
      if (!names.insert(f.name).second) throw ConfigError("family '" + f.name + "' declared twice");
      apply(section, keys, family_table(f, base_dir));
      c.families.push_back(std::move(f));
    } else {
      throw ConfigError("unknown section [" + section + "]");
    }
  }
  if (c.families.empty()) throw ConfigError("no [family.NAME] section");
  for (const auto& f : c.families) {
    if (f.source == SourceKind::idx && (f.images.empty() || f.labels.empty()))
      throw ConfigError("[family." + f.name + "]: idx source needs images and labels");
    if (f.source == SourceKind::csv && f.path.empty())
      throw ConfigError("[family." + f.name + "]: csv source needs path");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::absolute(path).parent_path());
}

std::string render_run_config(const RunConfig& c) {
  const auto& t = c.train;
  const auto& p = t.protocol;
  const auto& b = t.model.backbone;
  const auto& h = t.model.head;
  std::ostringstream os;
  os << "[run]\nout = " << c.out.string() << "\nseed = " << t.seed << "\nworkers = " << t.workers << "\n\n";
  os << "[protocol]\nmode = " << (p.mode == episodes::Mode::fixed ? "fixed" : "variable") << "\nways = " << p.ways
     << "\nshots = " << p.shots << "\nqueries = " << p.queries << "\nway_min = " << p.way_min
     << "\nway_max = " << p.way_max << "\nshot_min = " << p.shot_min << "\nshot_max = " << p.shot_max << "\n\n";
  os << "[backbone]\ninput_dim = " << b.input_dim << "\nblocks = " << b.blocks << "\nwidth = " << b.width
     << "\nembedding_dim = " << b.embedding_dim << "\nadapt = " << bool_text(b.adapt)
     << "\nautoregressive = " << bool_text(b.autoregressive) << "\nencoder_hidden = " << b.encoder_hidden
     << "\ntask_dim = " << b.task_dim << "\nadapter_hidden = " << b.adapter_hidden << "\nar_dim = " << b.ar_dim
     << "\noutput_init_gain = " << fmt(b.output_init_gain) << "\nfilm_init_gain = " << fmt(b.film_init_gain)
     << "\n\n";
  os << "[head]\nvariant = " << heads::head_name(h) << "\nbeta = " << fmt(h.beta) << "\ntask_covariance = "
     << (h.task_covariance == heads::TaskCovariance::global ? "global" : "pooled")
     << "\nprojection_dim = " << h.projection_dim << "\nclassifier_hidden = " << h.classifier_hidden << "\n\n";
  os << "[train]\nepisodes = " << t.episodes << "\nbatch = " << t.batch << "\nlearning_rate = "
     << fmt(t.learning_rate) << "\nbeta1 = " << fmt(t.beta1) << "\nbeta2 = " << fmt(t.beta2)
     << "\nepsilon = " << fmt(t.epsilon) << "\nvalidation_period = " << t.validation_period
     << "\nvalidation_episodes = " << t.validation_episodes << "\n\n";
  const auto& e = c.eval;
  os << "[eval]\nepisodes = " << e.episodes << "\ncheckpoint = " << e.checkpoint.string()
     << "\nshot_grouping = " << (e.shot_grouping == evaluator::ShotGrouping::buckets ? "buckets" : "exact")
     << "\nvariants = ";
  for (std::size_t i = 0; i < e.variants.size(); ++i) os << (i ? "," : "") << e.variants[i];
  os << "\nfolds = " << e.folds << "\noracle_queries = " << e.oracle_queries
     << "\ninvariant_instances = " << e.invariant_instances << "\n";
  for (const auto& f : c.families) {
    os << "\n[family." << f.name << "]\n";
    switch (f.source) {
      case SourceKind::synthetic: {
        const auto& s = f.synthetic;
        os << "source = synthetic\ndim = " << s.dim << "\nclasses = " << s.classes
           << "\nexamples_per_class = " << s.examples_per_class << "\nmean_range = " << fmt(s.mean_range)
           << "\nkappa = " << fmt(s.kappa) << "\nscale = " << fmt(s.scale)
           << "\nshared_rotation = " << bool_text(s.shared_rotation) << "\nseed = " << s.seed << "\n";
        break;
      }
      case SourceKind::idx:
        os << "source = idx\nimages = " << f.images.string() << "\nlabels = " << f.labels.string() << "\n";
        break;
      case SourceKind::csv:
        os << "source = csv\npath = " << f.path.string() << "\n";
        break;
    }
    os << "split = " << fmt(f.split[0]) << "," << fmt(f.split[1]) << "," << fmt(f.split[2])
       << "\nsplit_seed = " << f.split_seed << "\nheld_out = " << bool_text(f.held_out) << "\n";
  }
  return os.str();
}

const std::vector<int>& LoadedFamily::test_classes() const {
  return config.held_out ? dataset.classes() : split.test;
}

std::vector<LoadedFamily> load_families(RunConfig& config) {
  std::vector<LoadedFamily> out;
  for (const auto& f : config.families) {
    data::LabeledDataset ds = [&] {
      switch (f.source) {
        case SourceKind::idx:
          return data::load_idx(f.images, f.labels);
        case SourceKind::csv:
          return data::load_csv(f.path);
        default:
          return data::generate_synthetic(f.synthetic);
      }
    }();
    data::ClassSplit split;
    if (!f.held_out) split = data::split_classes(ds, f.split, f.split_seed);
    out.push_back({f, std::move(ds), std::move(split)});
  }
  const std::size_t dim = out.front().dataset.dim();
  for (const auto& l : out)
    if (l.dataset.dim() != dim)
      throw ConfigError("family '" + l.config.name + "' has " + std::to_string(l.dataset.dim()) +
                        " features, family '" + out.front().config.name + "' has " + std::to_string(dim));
  auto& input_dim = config.train.model.backbone.input_dim;
  if (input_dim != 0 && input_dim != dim)
    throw ConfigError("[backbone] input_dim: " + std::to_string(input_dim) + " but the data has " +
                      std::to_string(dim) + " features");
  input_dim = dim;
  return out;
}

namespace {

std::vector<episodes::TaskSource> sources(const std::vector<LoadedFamily>& families,
                                          const std::vector<std::string>* names, const char* part) {
  std::vector<episodes::TaskSource> out;
  for (const auto& f : families) {
    if (f.config.held_out) continue;
    if (names && std::find(names->begin(), names->end(), f.config.name) == names->end()) continue;
    out.push_back({f.config.name, &f.dataset, f.split.part(part)});
  }
  if (out.empty()) throw ConfigError(std::string("no families provide ") + part + " classes");
  return out;
}

}  // namespace

std::vector<episodes::TaskSource> train_sources(const std::vector<LoadedFamily>& families,
                                                const std::vector<std::string>* names) {
  return sources(families, names, "train");
}

std::vector<episodes::TaskSource> validation_sources(const std::vector<LoadedFamily>& families,
                                                     const std::vector<std::string>* names) {
  return sources(families, names, "validation");
}

episodes::EpisodeStream test_stream(const RunConfig& config, const std::vector<LoadedFamily>& families,
                                    std::size_t index) {
  const auto& f = families.at(index);
  return episodes::EpisodeStream({{f.config.name, &f.dataset, f.test_classes()}}, config.train.protocol,
                                 config.eval.episodes, derive_seed(config.train.seed, 1000 + index));
}

}  // namespace scnaps::config
