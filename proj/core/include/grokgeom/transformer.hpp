#pragma once

#include "grokgeom/modular_data.hpp"
#include "grokgeom/params.hpp"
#include "grokgeom/tensor.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

struct ModelConfig {
  int p = 97;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t n_layers = 2;
  std::size_t seq_len = 2;
  double ln_eps = 1e-5;
  double embed_std = 1.0;  // token/position embedding init std

  void validate() const;
};

enum class AttnMatrix { WQ, WK, WV, WO };
inline constexpr std::array<AttnMatrix, 4> kAttnMatrices = {AttnMatrix::WQ, AttnMatrix::WK, AttnMatrix::WV,
                                                            AttnMatrix::WO};
std::string_view attn_matrix_name(AttnMatrix m);

/// A d_model x d_model attention weight block inside the flat parameter
/// vector. WQ/WK/WV are row blocks 0..d, d..2d, 2d..3d of the fused input
/// projection; WO is the output projection.
struct AttentionMatrixView {
  std::size_t layer = 0;
  AttnMatrix name = AttnMatrix::WQ;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::string key() const;  // e.g. "L1.WQ"
  std::span<double> in(ParamVector& theta) const { return std::span(theta.values).subspan(offset, size()); }
  std::span<const double> in(const ParamVector& theta) const {
    return std::span<const double>(theta.values).subspan(offset, size());
  }
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Pre-norm transformer encoder over two-token inputs (a, b) with a linear
/// head read at position 0.
class Transformer {
 public:
  explicit Transformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::shared_ptr<const ParamLayout>& layout() const { return layout_; }
  std::size_t param_count() const { return layout_->total_size(); }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases, unit LayerNorm gains,
  /// N(0, embed_std^2) embeddings.
  ParamVector init(std::uint64_t seed) const;

  ad::Var logits(ad::Tape& tape, const ParamVars& params, std::span<const Example> batch) const;
  /// (batch, p) logits without recording a backward graph.
  Tensor forward(const ParamVector& theta, std::span<const Example> batch) const;
  /// Mean cross-entropy on a fixed batch (copied into the closure).
  LossFn loss_fn(std::span<const Example> batch) const;

  EvalResult evaluate(const ParamVector& theta, std::span<const Example> examples,
                      std::size_t chunk = 1024) const;

  /// n_layers x {WQ, WK, WV, WO}, layer-major.
  std::vector<AttentionMatrixView> attention_views() const;

 private:
  struct LayerParams {
    std::size_t ln1_gain, ln1_bias, in_weight, in_bias, out_weight, out_bias;
    std::size_t ln2_gain, ln2_bias, ff1_weight, ff1_bias, ff2_weight, ff2_bias;
  };

  ModelConfig cfg_;
  std::shared_ptr<const ParamLayout> layout_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_gain_ = 0, lnf_bias_ = 0, head_weight_ = 0, head_bias_ = 0;
  std::vector<LayerParams> layers_;
};

/// Fraction of rows whose argmax equals the target.
double argmax_accuracy(const Tensor& logits, std::span<const int> targets);

}  // namespace grokgeom
