#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "scnaps/episodes.hpp"
#include "scnaps/model.hpp"
#include "scnaps/params.hpp"

namespace scnaps::trainer {

struct TrainConfig {
  std::size_t episodes = 20000;
  std::size_t batch = 8;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t validation_period = 1000;
  std::size_t validation_episodes = 200;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  episodes::EpisodeProtocol protocol;
  ModelConfig model;

  void validate() const;
  // 110k tasks, 16 per batch, lr 5e-4.
  static TrainConfig full_scale();
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

AdamState adam_init(const std::vector<Tensor>& params);

// One bias-corrected Adam update in place.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double epsilon);

struct LogRow {
  std::size_t episode = 0;  // episodes completed
  double loss = 0.0;        // mean query cross-entropy over the batch
  std::optional<double> validation_accuracy;
};

struct TrainResult {
  Checkpoint best;
  ParameterStore final_params;
  std::vector<LogRow> log;
};

// Per-batch gradient of the mean query loss, episodes reduced in index order.
struct BatchGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};
BatchGradient batch_gradient(const ModelConfig& config, const ParameterStore& params,
                             const std::vector<episodes::Episode>& batch, std::size_t workers);

// Mean episode accuracy of `params` over the whole stream.
double validation_accuracy(const ModelConfig& config, const ParameterStore& params,
                           const episodes::EpisodeStream& stream, std::size_t workers);

using ProgressFn = std::function<void(const LogRow&)>;

// Meta-trains from scratch. Training episodes come from `train_sources`,
// validation episodes (a fixed set, reused at every event) from
// `validation_sources`. Validation runs every `validation_period` episodes and
// after the last batch; the returned checkpoint is the first with the highest
// validation accuracy.
TrainResult train(const TrainConfig& config, const std::vector<episodes::TaskSource>& train_sources,
                  const std::vector<episodes::TaskSource>& validation_sources, const ProgressFn& progress = {});

// Seed of the training stream, the parameter initialisation and the validation stream.
std::uint64_t train_stream_seed(std::uint64_t master);
std::uint64_t init_seed(std::uint64_t master);
std::uint64_t validation_stream_seed(std::uint64_t master);

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path);

}  // namespace scnaps::trainer
