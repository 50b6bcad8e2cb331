#pragma once

#include <optional>
#include <span>
#include <vector>

#include "scnaps/autodiff.hpp"
#include "scnaps/params.hpp"
#include "scnaps/rng.hpp"

namespace scnaps::backbone {

// A stem layer followed by `blocks` residual blocks of width `width`, each
// modulated by FiLM, and a linear map to `embedding_dim`:
//   h_0 = elu(x W_s + b_s)
//   h_j = h_{j-1} + elu(gamma_j * (h_{j-1} W_j + b_j) + beta_j)
//   f   = h_J W_o + b_o
struct BackboneConfig {
  std::size_t input_dim = 0;
  std::size_t blocks = 3;
  std::size_t width = 64;
  std::size_t embedding_dim = 64;
  bool adapt = true;
  bool autoregressive = false;

  std::size_t encoder_hidden = 64;  // per-example width inside the task encoder
  std::size_t task_dim = 64;        // task representation width
  std::size_t adapter_hidden = 64;  // hidden width of each FiLM generator
  std::size_t ar_dim = 32;          // block-level set representation width

  double output_init_gain = 0.1;
  double film_init_gain = 0.01;

  void validate() const;
};

// Adds every backbone and adaptation-network parameter to `store`.
void init_parameters(ParameterStore& store, const BackboneConfig& config, Rng& rng);

struct FilmBlock {
  ad::Var gamma;  // 1 x width
  ad::Var beta;   // 1 x width
};

struct FilmParams {
  std::vector<FilmBlock> blocks;
};

// Mean-pooled per-example encoding of the support set: 1 x task_dim.
ad::Var encode_task(const BoundParameters& params, const BackboneConfig& config, const ad::Var& support);

// gamma = 1 for every channel and beta = 0; what "adaptation off" feeds in.
FilmParams identity_film(ad::Tape& tape, const BackboneConfig& config);

// FiLM parameters of block j (0-based). In autoregressive mode blocks j >= 1
// need the block-level set summary; supplying one anywhere else is an error.
FilmBlock generate_film_block(const BoundParameters& params, const BackboneConfig& config, std::size_t block,
                              const ad::Var& task_repr, const std::optional<ad::Var>& ar_summary);

// All blocks at once; `ar_summaries` must hold blocks-1 entries in
// autoregressive mode and be empty otherwise.
FilmParams generate_film(const BoundParameters& params, const BackboneConfig& config, const ad::Var& task_repr,
                         std::span<const ad::Var> ar_summaries = {});

// Block-level set representation fed to the FiLM generator of block j >= 1,
// computed from the support activations entering block j.
ad::Var ar_summary(const BoundParameters& params, const BackboneConfig& config, std::size_t block,
                   const ad::Var& support_hidden);

ad::Var stem(const BoundParameters& params, const BackboneConfig& config, const ad::Var& inputs);
ad::Var apply_block(const BoundParameters& params, std::size_t block, const ad::Var& hidden,
                    const FilmBlock& film);
ad::Var output_layer(const BoundParameters& params, const ad::Var& hidden);

// Embeds `inputs` (n x input_dim) with fixed FiLM parameters: n x embedding_dim.
ad::Var extract_features(const BoundParameters& params, const BackboneConfig& config, const ad::Var& inputs,
                         const FilmParams& film);

struct AdaptedEmbeddings {
  ad::Var support;
  ad::Var query;
  FilmParams film;
};

// Adapts the backbone to the support set and embeds support and query sets.
// Autoregressive mode pushes the support through blocks 1..j-1, already
// adapted, before generating block j's FiLM parameters.
AdaptedEmbeddings adapt_and_embed(const BoundParameters& params, const BackboneConfig& config,
                                  const ad::Var& support, const ad::Var& query);

}  // namespace scnaps::backbone
