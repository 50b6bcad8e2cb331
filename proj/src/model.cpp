#include "scnaps/model.hpp"

#include <sstream>

#include "scnaps/errors.hpp"

namespace scnaps {

void ModelConfig::validate() const {
  backbone.validate();
  head.validate();
}

std::string ModelConfig::describe() const {
  const auto& b = backbone;
  std::ostringstream os;
  os << "input_dim=" << b.input_dim << ";blocks=" << b.blocks << ";width=" << b.width
     << ";embedding_dim=" << b.embedding_dim << ";adapt=" << b.adapt << ";autoregressive=" << b.autoregressive
     << ";encoder_hidden=" << b.encoder_hidden << ";task_dim=" << b.task_dim
     << ";adapter_hidden=" << b.adapter_hidden << ";ar_dim=" << b.ar_dim << ";head=" << heads::head_name(head)
     << ";beta=" << head.beta << ";task_covariance="
     << (head.task_covariance == heads::TaskCovariance::global ? "global" : "pooled")
     << ";projection_dim=" << head.projection_dim << ";classifier_hidden=" << head.classifier_hidden;
  return os.str();
}

EpisodeForward forward_episode(const BoundParameters& params, const ModelConfig& config,
                               const episodes::Episode& episode) {
  ad::Tape& tape = params.tape();
  ad::Var support = tape.constant(episode.support);
  ad::Var query = tape.constant(episode.query);
  const auto embedded = backbone::adapt_and_embed(params, config.backbone, support, query);

  EpisodeForward out;
  out.logits = heads::head_logits(params, config.head, embedded.support, episode.support_labels, episode.way(),
                                  embedded.query, &out.diagnostics);
  out.loss = ad::softmax_cross_entropy(out.logits, episode.query_labels);
  return out;
}

ParameterStore initial_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterStore store;
  backbone::init_parameters(store, config.backbone, rng);
  heads::init_parameters(store, config.head, config.backbone.embedding_dim, rng);
  return store;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(initial_parameters(config_, seed)) {}

Model::Model(ModelConfig config, ParameterStore params) : config_(std::move(config)), params_(std::move(params)) {
  const ParameterStore reference = initial_parameters(config_, 0);
  if (reference.names() != params_.names())
    throw ConfigError("model: parameter names do not match the configuration");
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const Tensor& a = reference.values()[i];
    const Tensor& b = params_.values()[i];
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw ConfigError("model: parameter '" + reference.names()[i] + "' is " + b.shape_string() + ", expected " +
                        a.shape_string());
  }
}

Tensor Model::probabilities(const episodes::Episode& episode) const {
  ad::Tape tape;
  BoundParameters bound(tape, params_, false);
  return heads::classify(forward_episode(bound, config_, episode).logits.value());
}

ParameterCounts count_trainable_params(const ParameterStore& params) {
  ParameterCounts c;
  c.backbone = params.scalar_count("backbone.");
  c.adaptation = params.scalar_count("encoder.") + params.scalar_count("film") + params.scalar_count("ar");
  c.head = params.scalar_count("classifier.");
  c.projection = params.scalar_count("projection.");
  c.total = params.scalar_count();
  return c;
}

}  // namespace scnaps
