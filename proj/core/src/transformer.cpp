#include "grokgeom/transformer.hpp"

#include "grokgeom/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace grokgeom {

void ModelConfig::validate() const {
  if (p < 2) throw std::invalid_argument("model: p must be >= 2");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("model: d_model must be a positive multiple of n_heads");
  }
  if (d_ff == 0 || n_layers == 0 || seq_len == 0) throw std::invalid_argument("model: zero-sized dimension");
  if (!(embed_std > 0.0)) throw std::invalid_argument("model: embed_std must be positive");
}

std::string_view attn_matrix_name(AttnMatrix m) {
  switch (m) {
    case AttnMatrix::WQ: return "WQ";
    case AttnMatrix::WK: return "WK";
    case AttnMatrix::WV: return "WV";
    case AttnMatrix::WO: return "WO";
  }
  return "?";
}

std::string AttentionMatrixView::key() const {
  return "L" + std::to_string(layer) + "." + std::string(attn_matrix_name(name));
}

Transformer::Transformer(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff, v = std::size_t(cfg_.p);
  ParamLayout layout;
  tok_emb_ = layout.add("tok_emb", {v, d});
  pos_emb_ = layout.add("pos_emb", {cfg_.seq_len, d});
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams lp{};
    lp.ln1_gain = layout.add(pre + "ln1.gain", {d});
    lp.ln1_bias = layout.add(pre + "ln1.bias", {d});
    lp.in_weight = layout.add(pre + "attn.in_proj_weight", {3 * d, d});
    lp.in_bias = layout.add(pre + "attn.in_proj_bias", {3 * d});
    lp.out_weight = layout.add(pre + "attn.out_proj_weight", {d, d});
    lp.out_bias = layout.add(pre + "attn.out_proj_bias", {d});
    lp.ln2_gain = layout.add(pre + "ln2.gain", {d});
    lp.ln2_bias = layout.add(pre + "ln2.bias", {d});
    lp.ff1_weight = layout.add(pre + "ff1.weight", {f, d});
    lp.ff1_bias = layout.add(pre + "ff1.bias", {f});
    lp.ff2_weight = layout.add(pre + "ff2.weight", {d, f});
    lp.ff2_bias = layout.add(pre + "ff2.bias", {d});
    layers_.push_back(lp);
  }
  lnf_gain_ = layout.add("ln_f.gain", {d});
  lnf_bias_ = layout.add("ln_f.bias", {d});
  head_weight_ = layout.add("head.weight", {v, d});
  head_bias_ = layout.add("head.bias", {v});
  layout_ = std::make_shared<const ParamLayout>(std::move(layout));
}

ParamVector Transformer::init(std::uint64_t seed) const {
  ParamVector theta(layout_);
  Rng rng = Rng::stream(seed, "init");
  auto fill_uniform = [&](std::size_t entry) {
    const double bound = 1.0 / std::sqrt(double(layout_->entry(entry).shape.back()));
    for (double& x : theta.block(entry)) x = rng.uniform(-bound, bound);
  };
  auto fill_normal = [&](std::size_t entry) {
    const double scale = cfg_.embed_std;
    for (double& x : theta.block(entry)) x = rng.normal() * scale;
  };
  auto fill_ones = [&](std::size_t entry) {
    for (double& x : theta.block(entry)) x = 1.0;
  };
  fill_normal(tok_emb_);
  fill_normal(pos_emb_);
  for (const auto& lp : layers_) {
    fill_ones(lp.ln1_gain);
    fill_uniform(lp.in_weight);
    fill_uniform(lp.out_weight);
    fill_ones(lp.ln2_gain);
    fill_uniform(lp.ff1_weight);
    fill_uniform(lp.ff2_weight);
  }
  fill_ones(lnf_gain_);
  fill_uniform(head_weight_);
  return theta;
}

ad::Var Transformer::logits(ad::Tape& tape, const ParamVars& params, std::span<const Example> batch) const {
  const std::size_t s = cfg_.seq_len;
  if (s != 2) throw std::invalid_argument("Transformer: inputs are two-token sequences");
  std::vector<int> tokens, positions;
  tokens.reserve(batch.size() * s);
  positions.reserve(batch.size() * s);
  for (const auto& e : batch) {
    for (int tok : {e.a, e.b}) {
      if (tok < 0 || tok >= cfg_.p) {
        throw std::out_of_range("Transformer: token " + std::to_string(tok) + " outside [0, " +
                                std::to_string(cfg_.p) + ")");
      }
      tokens.push_back(tok);
    }
    positions.push_back(0);
    positions.push_back(1);
  }
  using namespace ad;
  Var x = add(tape, gather_rows(tape, params[tok_emb_], tokens), gather_rows(tape, params[pos_emb_], positions));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& lp = layers_[l];
    const Var h = layer_norm(tape, x, params[lp.ln1_gain], params[lp.ln1_bias], cfg_.ln_eps);
    Var mixed = attention_core(tape, linear(tape, h, params[lp.in_weight], params[lp.in_bias]), cfg_.n_heads, s);
    if (l + 1 == layers_.size()) {
      // Only position 0 reaches the head; everything after attention is row-wise.
      x = select_position(tape, x, s, 0);
      mixed = select_position(tape, mixed, s, 0);
    }
    x = add(tape, x, linear(tape, mixed, params[lp.out_weight], params[lp.out_bias]));
    const Var h2 = layer_norm(tape, x, params[lp.ln2_gain], params[lp.ln2_bias], cfg_.ln_eps);
    const Var ff = linear(tape, gelu(tape, linear(tape, h2, params[lp.ff1_weight], params[lp.ff1_bias])),
                          params[lp.ff2_weight], params[lp.ff2_bias]);
    x = add(tape, x, ff);
  }
  const Var normed = layer_norm(tape, x, params[lnf_gain_], params[lnf_bias_], cfg_.ln_eps);
  return linear(tape, normed, params[head_weight_], params[head_bias_]);
}

Tensor Transformer::forward(const ParamVector& theta, std::span<const Example> batch) const {
  ad::Tape tape;
  ParamVars vars;
  for (std::size_t i = 0; i < layout_->entries().size(); ++i) vars.vars.push_back(tape.constant(theta.unflatten(i)));
  return tape.value(logits(tape, vars, batch));
}

LossFn Transformer::loss_fn(std::span<const Example> batch) const {
  std::vector<Example> copy(batch.begin(), batch.end());
  std::vector<int> targets;
  targets.reserve(copy.size());
  for (const auto& e : copy) targets.push_back(e.label);
  return [this, copy = std::move(copy), targets = std::move(targets)](ad::Tape& tape, const ParamVars& params) {
    return ad::cross_entropy_mean(tape, logits(tape, params, copy), targets);
  };
}

double argmax_accuracy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data().data() + r * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) == targets[r]) ++correct;
  }
  return double(correct) / double(n);
}

EvalResult Transformer::evaluate(const ParamVector& theta, std::span<const Example> examples,
                                 std::size_t chunk) const {
  if (examples.empty()) return {};
  double loss_sum = 0.0, correct = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += chunk) {
    const auto part = examples.subspan(start, std::min(chunk, examples.size() - start));
    ad::Tape tape;
    ParamVars vars;
    for (std::size_t i = 0; i < layout_->entries().size(); ++i) {
      vars.vars.push_back(tape.constant(theta.unflatten(i)));
    }
    std::vector<int> targets;
    targets.reserve(part.size());
    for (const auto& e : part) targets.push_back(e.label);
    const ad::Var lg = logits(tape, vars, part);
    const ad::Var ce = ad::cross_entropy_mean(tape, lg, targets);
    loss_sum += tape.value(ce)[0] * double(part.size());
    correct += argmax_accuracy(tape.value(lg), targets) * double(part.size());
  }
  return {loss_sum / double(examples.size()), correct / double(examples.size())};
}

std::vector<AttentionMatrixView> Transformer::attention_views() const {
  std::vector<AttentionMatrixView> views;
  const std::size_t d = cfg_.d_model;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t in_off = layout_->entry(layers_[l].in_weight).offset;
    views.push_back({l, AttnMatrix::WQ, in_off, d, d});
    views.push_back({l, AttnMatrix::WK, in_off + d * d, d, d});
    views.push_back({l, AttnMatrix::WV, in_off + 2 * d * d, d, d});
    views.push_back({l, AttnMatrix::WO, layout_->entry(layers_[l].out_weight).offset, d, d});
  }
  return views;
}

}  // namespace grokgeom
