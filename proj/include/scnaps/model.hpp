#pragma once

#include <cstdint>
#include <string>

#include "scnaps/backbone.hpp"
#include "scnaps/episodes.hpp"
#include "scnaps/heads.hpp"
#include "scnaps/params.hpp"

namespace scnaps {

struct ModelConfig {
  backbone::BackboneConfig backbone;
  heads::HeadConfig head;

  void validate() const;
  // Canonical text of every field that shapes the parameter set or forward pass.
  std::string describe() const;
  std::uint64_t fingerprint() const { return fnv1a64(describe()); }
};

struct EpisodeForward {
  ad::Var logits;  // queries x way
  ad::Var loss;    // 1 x 1, summed over queries
  heads::HeadDiagnostics diagnostics;
};

// Adaptation, backbone and head for one episode on `params`' tape.
EpisodeForward forward_episode(const BoundParameters& params, const ModelConfig& config,
                               const episodes::Episode& episode);

class Model {
 public:
  // Fresh parameters drawn from `seed`.
  Model(ModelConfig config, std::uint64_t seed);
  // Existing parameters; names and shapes must match a fresh initialisation.
  Model(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  // Query class probabilities, queries x way.
  Tensor probabilities(const episodes::Episode& episode) const;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

ParameterStore initial_parameters(const ModelConfig& config, std::uint64_t seed);

struct ParameterCounts {
  std::size_t backbone = 0;
  std::size_t adaptation = 0;  // task encoder, FiLM generators, block-level encoders
  std::size_t head = 0;        // adaptive linear classifier
  std::size_t projection = 0;  // +P network
  std::size_t total = 0;
};

ParameterCounts count_trainable_params(const ParameterStore& params);

}  // namespace scnaps
