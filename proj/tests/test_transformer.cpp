#include "grokgeom/modular_data.hpp"
#include "grokgeom/transformer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace grokgeom;

namespace {

// Parameter count from the architecture, counted by hand per block.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, p = std::size_t(c.p);
  const std::size_t embed = p * d + c.seq_len * d;
  const std::size_t attn = 3 * d * d + 3 * d + d * d + d;
  const std::size_t mlp = f * d + f + d * f + d;
  const std::size_t norms = 4 * d;
  const std::size_t head = 2 * d + d * p + p;
  return embed + c.n_layers * (attn + mlp + norms) + head;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  const ModelConfig cfg;
  CHECK(expected_count(cfg) == 290401);
  CHECK(Transformer(cfg).param_count() == 290401);
  const auto tiny = testutil::tiny_model();
  CHECK(Transformer(tiny).param_count() == expected_count(tiny));
}

TEST_CASE("attention views tile the fused projection") {
  const Transformer model(ModelConfig{});
  const auto views = model.attention_views();
  REQUIRE(views.size() == 8);
  CHECK(views[0].key() == "L0.WQ");
  CHECK(views[1].offset == views[0].offset + 128 * 128);
  CHECK(views[2].offset == views[1].offset + 128 * 128);
  for (const auto& v : views) {
    CHECK(v.rows == 128);
    CHECK(v.cols == 128);
    CHECK(v.offset + v.size() <= model.param_count());
  }
}

TEST_CASE("init follows the documented scales") {
  const Transformer model(ModelConfig{});
  const auto theta = model.init(137);
  const auto& layout = *model.layout();
  const auto ln = layout.find("layers.0.ln1.gain");
  REQUIRE(ln.has_value());
  for (double g : theta.block(*ln)) CHECK(g == 1.0);
  const auto tok = layout.find("tok_emb");
  REQUIRE(tok.has_value());
  double s2 = 0.0;
  const auto emb = theta.block(*tok);
  for (double x : emb) s2 += x * x;
  CHECK(std::sqrt(s2 / double(emb.size())) == doctest::Approx(1.0).epsilon(0.03));
  const auto ff1 = layout.find("layers.0.ff1.weight");
  REQUIRE(ff1.has_value());
  const double bound = 1.0 / std::sqrt(128.0);
  for (double w : theta.block(*ff1)) CHECK(std::abs(w) <= bound);
  CHECK(model.init(137).values == theta.values);
  CHECK(model.init(138).values != theta.values);
}

TEST_CASE("taped logits agree with the graph-free forward pass") {
  const Transformer model(testutil::tiny_model());
  const auto theta = model.init(5);
  const auto ds = build_dataset(Operation::Add, 11, 0.5, 5);
  const Tensor direct = model.forward(theta, ds.train);
  ad::Tape tape;
  ParamVars vars;
  for (std::size_t i = 0; i < model.layout()->entries().size(); ++i) vars.vars.push_back(tape.constant(theta.unflatten(i)));
  const auto logits = model.logits(tape, vars, ds.train);
  CHECK(tape.value(logits) == direct);
  CHECK(direct.dim(0) == ds.train.size());
  CHECK(direct.dim(1) == 11);
}

TEST_CASE("evaluate chunks consistently") {
  const Transformer model(testutil::tiny_model());
  const auto theta = model.init(9);
  const auto ds = build_dataset(Operation::Add, 11, 0.5, 9);
  const auto a = model.evaluate(theta, ds.test, 7);
  const auto b = model.evaluate(theta, ds.test, 1024);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
  CHECK(a.accuracy == b.accuracy);
}

TEST_CASE("argmax accuracy counts exact hits") {
  const Tensor logits({3, 3}, std::vector<double>{0, 1, 0, 5, 0, 0, 0, 0, 1});
  const std::vector<int> targets{1, 1, 2};
  CHECK(argmax_accuracy(logits, targets) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("invalid model configs are rejected") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.embed_std = 0.0;
  CHECK_THROWS(c.validate());
}
