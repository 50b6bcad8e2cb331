#include <cmath>

#include "doctest.h"
#include "scnaps/backbone.hpp"
#include "scnaps/errors.hpp"
#include "scnaps/gradcheck.hpp"
#include "scnaps/model.hpp"
#include "support.hpp"

using namespace scnaps;
using scnaps::testing::random_tensor;

namespace {

backbone::BackboneConfig small_config(std::size_t blocks = 2, bool ar = false) {
  backbone::BackboneConfig c;
  c.input_dim = 4;
  c.blocks = blocks;
  c.width = 6;
  c.embedding_dim = 3;
  c.encoder_hidden = 5;
  c.task_dim = 4;
  c.adapter_hidden = 5;
  c.ar_dim = 3;
  c.autoregressive = ar;
  c.film_init_gain = 0.5;
  return c;
}

ParameterStore make_store(const backbone::BackboneConfig& c, std::uint64_t seed = 1) {
  ParameterStore store;
  Rng rng(seed);
  backbone::init_parameters(store, c, rng);
  return store;
}

Tensor elu(Tensor t) {
  for (double& v : t.data()) v = ad::elu_value(v);
  return t;
}

Tensor add_bias(Tensor t, const Tensor& b) {
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) += b(0, c);
  return t;
}

// The unmodulated network written out with plain tensor arithmetic.
Tensor plain_forward(const ParameterStore& s, const backbone::BackboneConfig& c, const Tensor& x) {
  Tensor h = elu(add_bias(matmul(x, s.get("backbone.stem.w")), s.get("backbone.stem.b")));
  for (std::size_t j = 1; j <= c.blocks; ++j) {
    const std::string p = "backbone.block" + std::to_string(j);
    h = h + elu(add_bias(matmul(h, s.get(p + ".w")), s.get(p + ".b")));
  }
  return add_bias(matmul(h, s.get("backbone.out.w")), s.get("backbone.out.b"));
}

episodes::Episode tiny_episode(std::size_t dim, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.dim = dim;
  spec.classes = 4;
  spec.examples_per_class = 8;
  spec.kappa = 5;
  spec.seed = seed;
  static std::vector<data::LabeledDataset> keep;
  keep.push_back(data::generate_synthetic(spec));
  Rng rng(seed);
  return episodes::sample_episode(keep.back(), keep.back().classes(), episodes::EpisodeProtocol::fixed(3, 3, 2), rng);
}

}  // namespace

TEST_SUITE("task encoder") {
  TEST_CASE("mean pooling: one example, permutations and duplication") {
    const auto c = small_config();
    const auto store = make_store(c);
    Rng rng(2);
    const Tensor s = random_tensor(5, 4, rng);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const Tensor full = backbone::encode_task(p, c, tape.constant(s)).value();

    Tensor mean_of_singles(1, c.task_dim);
    for (std::size_t r = 0; r < 5; ++r) {
      const Tensor one = Tensor::row(s.row_span(r));
      mean_of_singles += backbone::encode_task(p, c, tape.constant(one)).value();
    }
    mean_of_singles *= 1.0 / 5.0;
    CHECK(testing::max_abs_diff(full, mean_of_singles) <= 1e-12);

    Tensor permuted(5, 4);
    const std::size_t order[] = {3, 1, 4, 0, 2};
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t k = 0; k < 4; ++k) permuted(r, k) = s(order[r], k);
    CHECK(backbone::encode_task(p, c, tape.constant(permuted)).value() == full);

    Tensor doubled(10, 4);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t k = 0; k < 4; ++k) doubled(r, k) = s(r % 5, k);
    CHECK(testing::max_abs_diff(backbone::encode_task(p, c, tape.constant(doubled)).value(), full) <= 1e-15);

    CHECK_THROWS_AS(backbone::encode_task(p, c, tape.constant(Tensor(0, 4))), ConfigError);
  }
}

TEST_SUITE("film") {
  TEST_CASE("identity FiLM equals the unmodulated network") {
    const auto c = small_config(3);
    const auto store = make_store(c);
    Rng rng(3);
    const Tensor x = random_tensor(7, 4, rng);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const Tensor f = backbone::extract_features(p, c, tape.constant(x), backbone::identity_film(tape, c)).value();
    CHECK(testing::max_abs_diff(f, plain_forward(store, c, x)) <= 1e-13);
  }

  TEST_CASE("adaptation off feeds the identity modulation") {
    auto c = small_config(2);
    c.adapt = false;
    const auto store = make_store(c);
    CHECK_FALSE(store.contains("encoder.l1.w"));
    Rng rng(4);
    const Tensor s = random_tensor(6, 4, rng), q = random_tensor(3, 4, rng);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const auto out = backbone::adapt_and_embed(p, c, tape.constant(s), tape.constant(q));
    for (const auto& b : out.film.blocks) {
      CHECK(b.gamma.value() == Tensor(1, c.width, 1.0));
      CHECK(b.beta.value() == Tensor(1, c.width, 0.0));
    }
    CHECK(out.query.value() == plain_forward(store, c, q));
  }

  TEST_CASE("autoregressive mode with one block equals the plain mode") {
    const auto plain = small_config(1, false);
    const auto ar = small_config(1, true);
    const auto store = make_store(plain);
    CHECK(make_store(ar) == store);
    Rng rng(5);
    const Tensor s = random_tensor(6, 4, rng), q = random_tensor(4, 4, rng);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const auto a = backbone::adapt_and_embed(p, plain, tape.constant(s), tape.constant(q));
    const auto b = backbone::adapt_and_embed(p, ar, tape.constant(s), tape.constant(q));
    CHECK(a.support.value() == b.support.value());
    CHECK(a.query.value() == b.query.value());
  }

  TEST_CASE("with two blocks the second FiLM layer depends on the block-level encoder") {
    const auto ar = small_config(2, true);
    const auto store = make_store(ar);
    auto moved = store;
    for (double& v : moved.get("ar2.w").data()) v += 1.0;
    Rng rng(6);
    const Tensor s = random_tensor(6, 4, rng), q = random_tensor(4, 4, rng);
    ad::Tape tape;
    BoundParameters p(tape, store, false), pm(tape, moved, false);
    const auto a = backbone::adapt_and_embed(p, ar, tape.constant(s), tape.constant(q));
    const auto b = backbone::adapt_and_embed(pm, ar, tape.constant(s), tape.constant(q));
    CHECK(a.film.blocks[0].gamma.value() == b.film.blocks[0].gamma.value());
    CHECK(testing::max_abs_diff(a.film.blocks[1].gamma.value(), b.film.blocks[1].gamma.value()) > 1e-9);
    CHECK(testing::max_abs_diff(a.query.value(), b.query.value()) > 1e-9);
    CHECK(make_store(small_config(2, false)).get("film2.l1.w").rows() == ar.task_dim);
    CHECK(store.get("film2.l1.w").rows() == ar.task_dim + ar.ar_dim);
  }

  TEST_CASE("block summaries are rejected outside autoregressive mode") {
    const auto c = small_config(2, false);
    const auto store = make_store(c);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const auto task = tape.constant(Tensor(1, c.task_dim, 0.1));
    const auto summary = tape.constant(Tensor(1, c.ar_dim, 0.1));
    CHECK_THROWS_AS(backbone::generate_film_block(p, c, 1, task, summary), ConfigError);
    const ad::Var summaries[] = {summary};
    CHECK_THROWS_AS(backbone::generate_film(p, c, task, summaries), ConfigError);
    CHECK_THROWS_AS(backbone::ar_summary(p, c, 1, tape.constant(Tensor(3, c.width))), ConfigError);

    const auto arc = small_config(2, true);
    const auto ar_store = make_store(arc);
    BoundParameters q(tape, ar_store, false);
    CHECK_THROWS_AS(backbone::generate_film_block(q, arc, 0, task, summary), ConfigError);
    CHECK_THROWS_AS(backbone::generate_film_block(q, arc, 1, task, std::nullopt), ConfigError);
  }

  TEST_CASE("gamma = 0 makes the block's modulated path input-independent") {
    const auto c = small_config(1);
    const auto store = make_store(c);
    Rng rng(7);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    const Tensor beta = random_tensor(1, c.width, rng);
    const backbone::FilmBlock film{tape.constant(Tensor(1, c.width, 0.0)), tape.constant(beta)};
    for (int trial = 0; trial < 3; ++trial) {
      const Tensor h = random_tensor(4, c.width, rng);
      const Tensor out = backbone::apply_block(p, 0, tape.constant(h), film).value();
      const Tensor path = out - h;
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t k = 0; k < c.width; ++k) CHECK(path(r, k) == doctest::Approx(ad::elu_value(beta(0, k))).epsilon(1e-14));
    }
  }

  TEST_CASE("gradients through gamma and beta match central differences") {
    const auto c = small_config(2);
    const auto store = make_store(c);
    Rng rng(8);
    const Tensor x = random_tensor(5, 4, rng);
    const Tensor w = random_tensor(5, c.embedding_dim, rng);
    std::vector<Tensor> film;
    for (int i = 0; i < 4; ++i) film.push_back(random_tensor(1, c.width, rng, 0.7));
    const auto report = finite_difference_check(
        [&](ad::Tape& tape, std::span<const ad::Var> v) {
          BoundParameters p(tape, store, false);
          backbone::FilmParams f{{{v[0], v[1]}, {v[2], v[3]}}};
          auto out = backbone::extract_features(p, c, tape.constant(x), f);
          return ad::sum_all(ad::mul(out, tape.constant(w)));
        },
        film);
    CHECK(report.max_relative_error <= 1e-4);
  }

  TEST_CASE("input width and block count mismatches") {
    const auto c = small_config(2);
    const auto store = make_store(c);
    ad::Tape tape;
    BoundParameters p(tape, store, false);
    CHECK_THROWS_AS(backbone::extract_features(p, c, tape.constant(Tensor(2, 5)), backbone::identity_film(tape, c)),
                    ShapeError);
    auto one_block = small_config(1);
    CHECK_THROWS_AS(backbone::extract_features(p, c, tape.constant(Tensor(2, 4)), backbone::identity_film(tape, one_block)),
                    ConfigError);
  }

  TEST_CASE("configuration limits") {
    auto c = small_config();
    c.blocks = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.embedding_dim = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.input_dim = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_SUITE("model") {
  TEST_CASE("every parameter receives a nonzero gradient on a generic episode") {
    for (bool ar : {false, true}) {
      for (const char* head : {"mahalanobis", "linear+p"}) {
        ModelConfig mc;
        mc.backbone = small_config(3, ar);
        mc.head = heads::parse_head(head);
        mc.head.classifier_hidden = 5;
        const auto store = initial_parameters(mc, 3);
        const auto ep = tiny_episode(4, 9);
        ad::Tape tape;
        BoundParameters p(tape, store);
        const auto fwd = forward_episode(p, mc, ep);
        tape.backward(fwd.loss);
        const auto grads = p.gradients();
        for (std::size_t i = 0; i < store.size(); ++i) {
          INFO(head << (ar ? " ar " : " ") << store.names()[i]);
          CHECK(max_abs(grads[i]) > 0.0);
        }
      }
    }
  }

  TEST_CASE("loss gradient through the adaptation networks matches central differences") {
    ModelConfig mc;
    mc.backbone = small_config(2, true);
    const auto base = initial_parameters(mc, 4);
    const auto ep = tiny_episode(4, 10);
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < base.size(); ++i)
      if (base.names()[i].rfind("film", 0) == 0 || base.names()[i].rfind("ar", 0) == 0 ||
          base.names()[i].rfind("encoder", 0) == 0)
        picked.push_back(i);
    std::vector<Tensor> values;
    for (auto i : picked) values.push_back(base.values()[i]);
    const auto report = finite_difference_check(
        [&](ad::Tape& tape, std::span<const ad::Var> v) {
          std::vector<ad::Var> leaves;
          std::size_t k = 0;
          for (std::size_t i = 0; i < base.size(); ++i)
            leaves.push_back(k < picked.size() && picked[k] == i ? v[k++] : tape.constant(base.values()[i]));
          BoundParameters p(tape, base, leaves);
          return forward_episode(p, mc, ep).loss;
        },
        values);
    CHECK(report.max_relative_error <= 1e-4);
  }

  TEST_CASE("constructing from a store checks names and shapes") {
    ModelConfig mc;
    mc.backbone = small_config();
    auto store = initial_parameters(mc, 1);
    CHECK_NOTHROW(Model(mc, store));
    auto wrong = mc;
    wrong.backbone.width = 7;
    CHECK_THROWS(Model(wrong, store));
    ParameterStore partial;
    partial.add("backbone.stem.w", store.get("backbone.stem.w"));
    CHECK_THROWS(Model(mc, partial));
  }

  TEST_CASE("fingerprint follows the model-defining fields") {
    ModelConfig a;
    a.backbone = small_config();
    ModelConfig b = a;
    CHECK(a.fingerprint() == b.fingerprint());
    b.head.beta = 2.0;
    CHECK(a.fingerprint() != b.fingerprint());
  }

  TEST_CASE("probabilities are normalized") {
    ModelConfig mc;
    mc.backbone = small_config();
    const Model model(mc, 5);
    const auto probs = model.probabilities(tiny_episode(4, 11));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double s = 0;
      for (std::size_t k = 0; k < probs.cols(); ++k) s += probs(r, k);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save then load is bit-exact") {
    testing::TempDir dir("ckpt");
    ModelConfig mc;
    mc.backbone = small_config(2, true);
    Checkpoint ck{initial_parameters(mc, 6), 1234, 0.8125, mc.fingerprint()};
    save_checkpoint(ck, dir / "c.bin");
    const auto back = load_checkpoint(dir / "c.bin");
    CHECK(back.params == ck.params);
    CHECK(back.episode == 1234);
    CHECK(back.validation_accuracy == 0.8125);
    CHECK(back.config_fingerprint == mc.fingerprint());
    CHECK(encode_checkpoint(back) == encode_checkpoint(ck));
  }

  TEST_CASE("layout: magic, version and little-endian fields") {
    ParameterStore s;
    s.add("a", Tensor::from_rows({{1.5}}));
    const auto bytes = encode_checkpoint({s, 7, 0.5, 0x0102030405060708ULL});
    CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "SCNPCKPT");
    CHECK(bytes[8] == 1);
    CHECK(bytes[12] == 7);
    CHECK(bytes[28] == 0x08);
    CHECK(bytes[35] == 0x01);
    // header 40 + name_len 4 + "a" 1 + rows 4 + cols 4 + one f64
    CHECK(bytes.size() == 40 + 4 + 1 + 4 + 4 + 8);
  }

  TEST_CASE("corrupt files are parse errors") {
    ParameterStore s;
    s.add("a", Tensor::from_rows({{1.5, 2.5}}));
    auto bytes = encode_checkpoint({s, 1, 0.5, 9});
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
    auto version = bytes;
    version[8] = 9;
    CHECK_THROWS_AS(decode_checkpoint(version), ParseError);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 1)), ParseError);
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(bytes), ParseError);
  }
}
