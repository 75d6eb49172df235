#pragma once

#include "grokgeom/modular_data.hpp"
#include "grokgeom/optimizer.hpp"
#include "grokgeom/params.hpp"
#include "grokgeom/rng.hpp"
#include "grokgeom/trajectory.hpp"
#include "grokgeom/transformer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

enum class Regime { Fast, Slow };
std::string_view regime_tag(Regime r);
std::optional<Regime> parse_regime(std::string_view tag);

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  std::size_t batch_size = 512;
  double clip_norm = 1.0;
  std::int64_t max_steps = 200000;
  std::int64_t eval_interval = 100;
  std::int64_t snapshot_interval = 100;
  std::uint64_t seed = 137;
  Regime regime = Regime::Fast;
  double train_frac = 0.5;
  double grok_threshold = 0.90;
  double stop_threshold = 0.98;
  int stop_consecutive = 3;
  double memorization_threshold = 0.99;

  AdamWConfig adamw() const { return {lr, weight_decay, beta1, beta2, adam_eps, clip_norm}; }
  void validate() const;
};

/// Fast: lr 1e-3, wd 1.0, beta2 0.98. Slow: lr 5e-5, wd 0.1, beta2 0.999,
/// eval every 1000 steps (the 3-layer model lives in ModelConfig).
TrainConfig regime_preset(Regime r);
ModelConfig regime_model(Regime r);

struct MetricsRow {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
};

struct RunRecord {
  std::vector<MetricsRow> metrics;
  std::optional<std::int64_t> grok_step;          // first eval with test_acc >= grok_threshold
  std::optional<std::int64_t> memorization_step;  // first eval with train_acc >= memorization_threshold
  std::int64_t stopped_step = 0;
  bool early_stopped = false;                     // stop_threshold held for stop_consecutive evals
  bool failed = false;
  std::string failure;
  std::uint64_t batch_hash = 0xcbf29ce484222325ULL;  // FNV-1a over sampled training indices
};

/// Uniform with-replacement sample from the training split.
std::vector<Example> sample_batch(std::span<const Example> train, std::size_t batch_size, Rng& rng,
                                  std::uint64_t* index_hash = nullptr);

class Trainer;

/// Callbacks invoked synchronously from the training loop. Per step the order
/// is on_gradient -> (AdamW) -> after_update -> snapshot/eval -> after_eval ->
/// on_step_end.
class TrainingHook {
 public:
  virtual ~TrainingHook() = default;
  virtual void on_start(Trainer&) {}
  /// The clipped gradient, editable before the optimizer consumes it.
  virtual void on_gradient(Trainer&, std::span<double>) {}
  /// Parameters may be modified here (optimizer moments must not be).
  virtual void after_update(Trainer&) {}
  virtual void after_eval(Trainer&, const MetricsRow&) {}
  virtual void on_step_end(Trainer&) {}
  virtual void on_finish(Trainer&) {}
};

/// AdamW loop with clipping, periodic full-split evaluation, attention
/// snapshots, grok detection and early stopping.
class Trainer {
 public:
  Trainer(const Transformer& model, const DatasetSplit& data, TrainConfig cfg);

  void add_hook(TrainingHook& hook) { hooks_.push_back(&hook); }
  /// Replaces the freshly initialized parameters (e.g. resuming from a checkpoint).
  void set_parameters(ParamVector theta);

  RunRecord run();

  const Transformer& model() const { return model_; }
  const DatasetSplit& data() const { return data_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }
  const ParamVector& parameters() const { return theta_; }
  ParamVector& mutable_parameters() { return theta_; }
  const ParamVector& previous_parameters() const { return prev_theta_; }
  const OptimizerState& optimizer() const { return opt_; }
  /// Norm of the most recent AdamW displacement (before any hook edits).
  double last_update_norm() const { return last_update_norm_; }
  /// Gradient consumed by the most recent AdamW update (clipped, post-hook).
  std::span<const double> last_gradient() const { return last_grad_; }
  const TrajectoryLog& trajectory() const { return log_; }
  const RunRecord& record() const { return record_; }
  /// True at steps where this eval first crossed the threshold.
  bool grokked_this_step() const { return grok_event_; }
  bool memorized_this_step() const { return memo_event_; }

 private:
  MetricsRow evaluate_now();

  const Transformer& model_;
  const DatasetSplit& data_;
  TrainConfig cfg_;
  std::vector<TrainingHook*> hooks_;
  ParamVector theta_;
  ParamVector prev_theta_;
  OptimizerState opt_;
  Rng train_rng_;
  TrajectoryLog log_;
  RunRecord record_;
  std::vector<double> last_grad_;
  double last_update_norm_ = 0.0;
  std::int64_t step_ = 0;
  bool grok_event_ = false;
  bool memo_event_ = false;
};

}  // namespace grokgeom
