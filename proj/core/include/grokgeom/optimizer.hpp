#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace grokgeom {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double clip_norm = 1.0;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

double l2_norm(std::span<const double> x);

/// Rescales g in place so that ||g|| <= max_norm (scale max_norm / (||g|| + 1e-6)
/// when clipping). Returns the pre-clip norm.
double clip_global_norm(std::span<double> g, double max_norm);

/// Decoupled AdamW update on an already-clipped gradient:
/// theta <- theta * (1 - lr * wd), then theta -= lr * m_hat / (sqrt(v_hat) + eps).
/// Throws DivergenceError if the result is non-finite.
void adamw_update(OptimizerState& state, std::span<double> theta, std::span<const double> grad,
                  const AdamWConfig& cfg);

/// Clip (on a copy of grad) then adamw_update.
void adamw_step(OptimizerState& state, std::span<double> theta, std::span<const double> grad,
                const AdamWConfig& cfg);

}  // namespace grokgeom
