#include "scnaps/backbone.hpp"

#include <cmath>
#include <string>

#include "scnaps/errors.hpp"

namespace scnaps::backbone {

using ad::Var;

namespace {

std::string block_name(const char* prefix, std::size_t j, const char* suffix) {
  return std::string(prefix) + std::to_string(j + 1) + suffix;
}

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

void add_linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                double gain, Rng& rng) {
  store.add(prefix + ".w", gaussian(in, out, gain / std::sqrt(static_cast<double>(in)), rng));
  store.add(prefix + ".b", Tensor(1, out));
}

Var linear(const BoundParameters& p, const std::string& prefix, const Var& x) {
  return ad::add_row(ad::matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

std::size_t film_input_dim(const BackboneConfig& c, std::size_t j) {
  return c.task_dim + ((c.autoregressive && j > 0) ? c.ar_dim : 0);
}

}  // namespace

void BackboneConfig::validate() const {
  if (input_dim < 1) throw ConfigError("backbone: input_dim must be >= 1");
  if (blocks < 1) throw ConfigError("backbone: blocks must be >= 1");
  if (width < 1) throw ConfigError("backbone: width must be >= 1");
  if (embedding_dim < 2) throw ConfigError("backbone: embedding_dim must be >= 2");
  if (adapt && (encoder_hidden < 1 || task_dim < 1 || adapter_hidden < 1))
    throw ConfigError("backbone: adaptation network widths must be >= 1");
  if (adapt && autoregressive && ar_dim < 1) throw ConfigError("backbone: ar_dim must be >= 1");
}

void init_parameters(ParameterStore& store, const BackboneConfig& c, Rng& rng) {
  c.validate();
  add_linear(store, "backbone.stem", c.input_dim, c.width, 1.0, rng);
  for (std::size_t j = 0; j < c.blocks; ++j)
    add_linear(store, block_name("backbone.block", j, ""), c.width, c.width, 0.5, rng);
  add_linear(store, "backbone.out", c.width, c.embedding_dim, c.output_init_gain, rng);

  if (!c.adapt) return;
  add_linear(store, "encoder.l1", c.input_dim, c.encoder_hidden, 1.0, rng);
  add_linear(store, "encoder.l2", c.encoder_hidden, c.task_dim, 1.0, rng);
  for (std::size_t j = 0; j < c.blocks; ++j) {
    add_linear(store, block_name("film", j, ".l1"), film_input_dim(c, j), c.adapter_hidden, 1.0, rng);
    add_linear(store, block_name("film", j, ".l2"), c.adapter_hidden, 2 * c.width, c.film_init_gain, rng);
  }
  if (c.autoregressive)
    for (std::size_t j = 1; j < c.blocks; ++j)
      add_linear(store, block_name("ar", j, ""), c.width, c.ar_dim, 1.0, rng);
}

Var encode_task(const BoundParameters& p, const BackboneConfig& c, const Var& support) {
  if (support.rows() == 0) throw ConfigError("encode_task: empty support set");
  if (support.cols() != c.input_dim)
    throw ShapeError("encode_task: support has " + std::to_string(support.cols()) + " columns, expected " +
                     std::to_string(c.input_dim));
  Var h = ad::elu(linear(p, "encoder.l1", support));
  Var e = linear(p, "encoder.l2", h);
  return ad::mean_over_rows(e);
}

FilmParams identity_film(ad::Tape& tape, const BackboneConfig& c) {
  FilmParams film;
  for (std::size_t j = 0; j < c.blocks; ++j)
    film.blocks.push_back({tape.constant(Tensor(1, c.width, 1.0)), tape.constant(Tensor(1, c.width, 0.0))});
  return film;
}

FilmBlock generate_film_block(const BoundParameters& p, const BackboneConfig& c, std::size_t j,
                              const Var& task_repr, const std::optional<Var>& ar) {
  if (!c.adapt) throw ConfigError("generate_film: adaptation is disabled");
  if (j >= c.blocks) throw ConfigError("generate_film: block " + std::to_string(j) + " out of range");
  const bool wants_ar = c.autoregressive && j > 0;
  if (ar && !wants_ar)
    throw ConfigError("generate_film: block-level summary supplied for block " + std::to_string(j + 1) +
                      " outside autoregressive mode");
  if (!ar && wants_ar)
    throw ConfigError("generate_film: autoregressive block " + std::to_string(j + 1) + " needs a summary");

  Var input = ar ? ad::concat_cols(task_repr, *ar) : task_repr;
  Var hidden = ad::elu(linear(p, block_name("film", j, ".l1"), input));
  Var out = linear(p, block_name("film", j, ".l2"), hidden);
  // gamma = 1 + delta keeps initial modulation near identity
  Var gamma = ad::add_constant(ad::slice_cols(out, 0, c.width), Tensor(1, c.width, 1.0));
  Var beta = ad::slice_cols(out, c.width, 2 * c.width);
  return {gamma, beta};
}

FilmParams generate_film(const BoundParameters& p, const BackboneConfig& c, const Var& task_repr,
                         std::span<const Var> ar_summaries) {
  const std::size_t expected = c.autoregressive ? c.blocks - 1 : 0;
  if (ar_summaries.size() != expected)
    throw ConfigError("generate_film: got " + std::to_string(ar_summaries.size()) +
                      " block-level summaries, expected " + std::to_string(expected));
  FilmParams film;
  for (std::size_t j = 0; j < c.blocks; ++j) {
    std::optional<Var> ar;
    if (c.autoregressive && j > 0) ar = ar_summaries[j - 1];
    film.blocks.push_back(generate_film_block(p, c, j, task_repr, ar));
  }
  return film;
}

Var ar_summary(const BoundParameters& p, const BackboneConfig& c, std::size_t j, const Var& support_hidden) {
  if (!c.autoregressive || j == 0 || j >= c.blocks)
    throw ConfigError("ar_summary: no block-level encoder for block " + std::to_string(j + 1));
  return ad::mean_over_rows(ad::elu(linear(p, block_name("ar", j, ""), support_hidden)));
}

Var stem(const BoundParameters& p, const BackboneConfig& c, const Var& inputs) {
  if (inputs.cols() != c.input_dim)
    throw ShapeError("extract_features: inputs have " + std::to_string(inputs.cols()) +
                     " columns, expected " + std::to_string(c.input_dim));
  return ad::elu(linear(p, "backbone.stem", inputs));
}

Var apply_block(const BoundParameters& p, std::size_t j, const Var& hidden, const FilmBlock& film) {
  Var pre = linear(p, block_name("backbone.block", j, ""), hidden);
  Var modulated = ad::add_row(ad::mul_row(pre, film.gamma), film.beta);
  return ad::add(hidden, ad::elu(modulated));
}

Var output_layer(const BoundParameters& p, const Var& hidden) { return linear(p, "backbone.out", hidden); }

Var extract_features(const BoundParameters& p, const BackboneConfig& c, const Var& inputs, const FilmParams& film) {
  if (film.blocks.size() != c.blocks)
    throw ConfigError("extract_features: " + std::to_string(film.blocks.size()) + " FiLM blocks for " +
                      std::to_string(c.blocks) + " residual blocks");
  Var h = stem(p, c, inputs);
  for (std::size_t j = 0; j < c.blocks; ++j) h = apply_block(p, j, h, film.blocks[j]);
  return output_layer(p, h);
}

AdaptedEmbeddings adapt_and_embed(const BoundParameters& p, const BackboneConfig& c, const Var& support,
                                  const Var& query) {
  const std::size_t n_support = support.rows();
  const Var parts[] = {support, query};
  Var all = ad::concat_rows(parts);

  AdaptedEmbeddings out;
  Var h = stem(p, c, all);
  if (!c.adapt) {
    out.film = identity_film(p.tape(), c);
    for (std::size_t j = 0; j < c.blocks; ++j) h = apply_block(p, j, h, out.film.blocks[j]);
  } else {
    Var task = encode_task(p, c, support);
    for (std::size_t j = 0; j < c.blocks; ++j) {
      std::optional<Var> summary;
      if (c.autoregressive && j > 0) summary = ar_summary(p, c, j, ad::slice_rows(h, 0, n_support));
      out.film.blocks.push_back(generate_film_block(p, c, j, task, summary));
      h = apply_block(p, j, h, out.film.blocks.back());
    }
  }
  Var f = output_layer(p, h);
  out.support = ad::slice_rows(f, 0, n_support);
  out.query = ad::slice_rows(f, n_support, f.rows());
  return out;
}

}  // namespace scnaps::backbone
