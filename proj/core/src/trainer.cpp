#include "grokgeom/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace grokgeom {

std::string_view regime_tag(Regime r) { return r == Regime::Fast ? "fast" : "slow"; }

std::optional<Regime> parse_regime(std::string_view tag) {
  if (tag == "fast") return Regime::Fast;
  if (tag == "slow") return Regime::Slow;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (max_steps < 0 || eval_interval <= 0 || snapshot_interval <= 0) {
    throw std::invalid_argument("train: step counts must be positive");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be positive");
}

TrainConfig regime_preset(Regime r) {
  TrainConfig c;
  c.regime = r;
  if (r == Regime::Slow) {
    c.lr = 5e-5;
    c.weight_decay = 0.1;
    c.beta2 = 0.999;
    c.eval_interval = 1000;
    c.max_steps = 700000;
  }
  return c;
}

ModelConfig regime_model(Regime r) {
  ModelConfig m;
  m.n_layers = r == Regime::Slow ? 3 : 2;
  return m;
}

std::vector<Example> sample_batch(std::span<const Example> train, std::size_t batch_size, Rng& rng,
                                  std::uint64_t* index_hash) {
  if (train.empty()) throw std::invalid_argument("sample_batch: empty training split");
  std::vector<Example> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto idx = rng.uniform_below(train.size());
    if (index_hash) {
      for (int b = 0; b < 8; ++b) {
        *index_hash ^= (idx >> (8 * b)) & 0xffU;
        *index_hash *= 0x100000001b3ULL;
      }
    }
    batch.push_back(train[idx]);
  }
  return batch;
}

Trainer::Trainer(const Transformer& model, const DatasetSplit& data, TrainConfig cfg)
    : model_(model),
      data_(data),
      cfg_(cfg),
      theta_(model.init(cfg.seed)),
      opt_(model.param_count()),
      train_rng_(Rng::stream(cfg.seed, "train")),
      log_(model.attention_views()) {
  cfg_.validate();
}

void Trainer::set_parameters(ParamVector theta) {
  if (theta.size() != model_.param_count()) throw std::invalid_argument("set_parameters: size mismatch");
  theta_ = std::move(theta);
}

MetricsRow Trainer::evaluate_now() {
  const auto tr = model_.evaluate(theta_, data_.train);
  const auto te = model_.evaluate(theta_, data_.test);
  return {step_, tr.loss, tr.accuracy, te.loss, te.accuracy};
}

RunRecord Trainer::run() {
  record_ = RunRecord{};
  step_ = 0;
  prev_theta_ = theta_;
  log_.set_initial(theta_);
  const AdamWConfig adam = cfg_.adamw();
  int consecutive = 0;

  auto eval_and_notify = [&]() {
    const MetricsRow row = evaluate_now();
    record_.metrics.push_back(row);
    if (!record_.grok_step && row.test_acc >= cfg_.grok_threshold) {
      record_.grok_step = step_;
      grok_event_ = true;
    }
    if (!record_.memorization_step && row.train_acc >= cfg_.memorization_threshold) {
      record_.memorization_step = step_;
      memo_event_ = true;
    }
    consecutive = row.test_acc >= cfg_.stop_threshold ? consecutive + 1 : 0;
    for (auto* h : hooks_) h->after_eval(*this, row);
  };

  for (auto* h : hooks_) h->on_start(*this);
  eval_and_notify();
  grok_event_ = memo_event_ = false;

  try {
    while (step_ < cfg_.max_steps) {
      const auto batch = sample_batch(data_.train, cfg_.batch_size, train_rng_, &record_.batch_hash);
      auto vg = value_and_grad(model_.loss_fn(batch), theta_);
      clip_global_norm(vg.grad, cfg_.clip_norm);
      for (auto* h : hooks_) h->on_gradient(*this, vg.grad);

      prev_theta_.values = theta_.values;
      adamw_update(opt_, theta_.values, vg.grad, adam);
      ++step_;
      double disp = 0.0;
      for (std::size_t i = 0; i < theta_.size(); ++i) {
        const double d = theta_.values[i] - prev_theta_.values[i];
        disp += d * d;
      }
      last_update_norm_ = std::sqrt(disp);
      last_grad_ = std::move(vg.grad);
      for (auto* h : hooks_) h->after_update(*this);

      if (step_ % cfg_.snapshot_interval == 0) log_.record(step_, theta_);
      grok_event_ = memo_event_ = false;
      bool stop = false;
      if (step_ % cfg_.eval_interval == 0) {
        eval_and_notify();
        if (consecutive >= cfg_.stop_consecutive) {
          record_.early_stopped = true;
          stop = true;
        }
      }
      for (auto* h : hooks_) h->on_step_end(*this);
      grok_event_ = memo_event_ = false;
      if (stop) break;
    }
  } catch (const DivergenceError& e) {
    record_.failed = true;
    record_.failure = std::string("diverged at step ") + std::to_string(step_) + ": " + e.what();
  }
  record_.stopped_step = step_;
  for (auto* h : hooks_) h->on_finish(*this);
  return record_;
}

}  // namespace grokgeom
