#include "scnaps/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "scnaps/errors.hpp"

namespace scnaps::trainer {

namespace {

struct EpisodeGradient {
  double loss = 0.0;
  std::size_t queries = 0;
  std::vector<Tensor> grads;
};

std::string describe_conditions(const std::vector<double>& c) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  os << ']';
  return os.str();
}

EpisodeGradient episode_gradient(const ModelConfig& config, const ParameterStore& params,
                                 const episodes::Episode& ep) {
  ad::Tape tape;
  BoundParameters bound(tape, params);
  EpisodeForward fwd;
  try {
    fwd = forward_episode(bound, config, ep);
  } catch (const SpdError& e) {
    throw NumericError("episode seed " + std::to_string(ep.seed) + ", head " + heads::head_name(config.head) +
                       ": " + e.what());
  }
  const double loss = fwd.loss.value().item();
  if (!std::isfinite(loss))
    throw NumericError("non-finite loss at episode seed " + std::to_string(ep.seed) + ", head " +
                       heads::head_name(config.head) + ", condition numbers " +
                       describe_conditions(fwd.diagnostics.condition_estimates));
  tape.backward(fwd.loss);
  return {loss, ep.query_labels.size(), bound.gradients()};
}

// Runs fn(i) for i in [0, n) over up to `workers` threads, each index exactly once.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void TrainConfig::validate() const {
  if (episodes < 1) throw ConfigError("train: episodes must be >= 1");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (episodes % batch != 0)
    throw ConfigError("train: episodes (" + std::to_string(episodes) + ") not divisible by batch (" +
                      std::to_string(batch) + ")");
  if (validation_period < 1 || validation_period % batch != 0)
    throw ConfigError("train: validation_period (" + std::to_string(validation_period) +
                      ") must be a positive multiple of batch (" + std::to_string(batch) + ")");
  if (validation_episodes < 1) throw ConfigError("train: validation_episodes must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: Adam moment coefficients must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
  if (workers < 1) throw ConfigError("train: workers must be >= 1");
  protocol.validate();
  model.validate();
}

TrainConfig TrainConfig::full_scale() {
  TrainConfig c;
  c.episodes = 110000;
  c.batch = 16;
  c.learning_rate = 5e-4;
  c.validation_period = 1024;
  c.validation_episodes = 200;
  return c;
}

AdamState adam_init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.rows(), p.cols());
    s.v.emplace_back(p.rows(), p.cols());
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double epsilon) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      if (lr == 0.0) continue;
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon);
    }
  }
}

BatchGradient batch_gradient(const ModelConfig& config, const ParameterStore& params,
                             const std::vector<episodes::Episode>& batch, std::size_t workers) {
  std::vector<EpisodeGradient> parts(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) { parts[i] = episode_gradient(config, params, batch[i]); });

  BatchGradient out;
  std::size_t queries = 0;
  for (const Tensor& p : params.values()) out.grads.emplace_back(p.rows(), p.cols());
  for (const auto& part : parts) {
    out.loss += part.loss;
    queries += part.queries;
    for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads[k] += part.grads[k];
  }
  const double inv = 1.0 / static_cast<double>(queries);
  out.loss *= inv;
  for (Tensor& g : out.grads) g *= inv;
  return out;
}

double validation_accuracy(const ModelConfig& config, const ParameterStore& params,
                           const episodes::EpisodeStream& stream, std::size_t workers) {
  const Model model(config, params);
  std::vector<double> acc(stream.size());
  parallel_for(stream.size(), workers, [&](std::size_t i) {
    const auto ep = stream.at(i);
    const auto predicted = heads::predict(model.probabilities(ep));
    std::size_t correct = 0;
    for (std::size_t q = 0; q < predicted.size(); ++q) correct += predicted[q] == ep.query_labels[q];
    acc[i] = static_cast<double>(correct) / static_cast<double>(predicted.size());
  });
  double sum = 0.0;
  for (double a : acc) sum += a;
  return sum / static_cast<double>(acc.size());
}

std::uint64_t train_stream_seed(std::uint64_t master) { return derive_seed(master, 0); }
std::uint64_t init_seed(std::uint64_t master) { return derive_seed(master, 1); }
std::uint64_t validation_stream_seed(std::uint64_t master) { return derive_seed(master, 2); }

TrainResult train(const TrainConfig& config, const std::vector<episodes::TaskSource>& train_sources,
                  const std::vector<episodes::TaskSource>& validation_sources, const ProgressFn& progress) {
  config.validate();
  const episodes::EpisodeStream train_stream(train_sources, config.protocol, config.episodes,
                                             train_stream_seed(config.seed));
  const episodes::EpisodeStream val_stream(validation_sources, config.protocol, config.validation_episodes,
                                           validation_stream_seed(config.seed));

  ParameterStore params = initial_parameters(config.model, init_seed(config.seed));
  AdamState adam = adam_init(params.values());

  TrainResult result;
  bool have_best = false;
  for (std::size_t start = 0; start < config.episodes; start += config.batch) {
    std::vector<episodes::Episode> batch;
    for (std::size_t i = start; i < start + config.batch; ++i) batch.push_back(train_stream.at(i));
    BatchGradient g = batch_gradient(config.model, params, batch, config.workers);
    adam_step(params.values(), g.grads, adam, config.learning_rate, config.beta1, config.beta2, config.epsilon);

    LogRow row;
    row.episode = start + config.batch;
    row.loss = g.loss;
    if (row.episode % config.validation_period == 0 || row.episode == config.episodes) {
      const double acc = validation_accuracy(config.model, params, val_stream, config.workers);
      row.validation_accuracy = acc;
      if (!have_best || acc > result.best.validation_accuracy) {
        result.best = {params, row.episode, acc, config.model.fingerprint()};
        have_best = true;
      }
    }
    result.log.push_back(row);
    if (progress) progress(row);
  }
  result.final_params = std::move(params);
  return result;
}

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path.string());
  out << "episode,loss,val_accuracy\n";
  char buf[64];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof buf, "%.17g", row.loss);
    out << row.episode << ',' << buf << ',';
    if (row.validation_accuracy) {
      std::snprintf(buf, sizeof buf, "%.17g", *row.validation_accuracy);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing training log " + path.string());
}

}  // namespace scnaps::trainer
