#include "grokgeom/optimizer.hpp"

#include "grokgeom/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace grokgeom {

double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(std::span<double> g, double max_norm) {
  const double norm = l2_norm(g);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (double& v : g) v *= scale;
  }
  return norm;
}

void adamw_update(OptimizerState& state, std::span<double> theta, std::span<const double> grad,
                  const AdamWConfig& cfg) {
  const std::size_t n = theta.size();
  if (grad.size() != n) throw std::invalid_argument("adamw: gradient size does not match parameters");
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  bool finite = true;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    theta[i] = theta[i] * decay - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    finite = finite && std::isfinite(theta[i]);
  }
  if (!finite) throw DivergenceError("adamw: non-finite parameter after update " + std::to_string(state.step));
}

void adamw_step(OptimizerState& state, std::span<double> theta, std::span<const double> grad,
                const AdamWConfig& cfg) {
  std::vector<double> clipped(grad.begin(), grad.end());
  clip_global_norm(clipped, cfg.clip_norm);
  adamw_update(state, theta, clipped, cfg);
}

}  // namespace grokgeom
