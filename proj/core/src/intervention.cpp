#include "grokgeom/intervention.hpp"

#include "grokgeom/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace grokgeom {

std::string_view intervention_tag(InterventionMode m) {
  switch (m) {
    case InterventionMode::None: return "none";
    case InterventionMode::SuppressPca: return "suppress_pca";
    case InterventionMode::SuppressRandom: return "suppress_random";
    case InterventionMode::KickCommutator: return "kick_commutator";
    case InterventionMode::KickRandom: return "kick_random";
  }
  return "none";
}

std::optional<InterventionMode> parse_intervention(std::string_view tag) {
  for (auto m : {InterventionMode::None, InterventionMode::SuppressPca, InterventionMode::SuppressRandom,
                 InterventionMode::KickCommutator, InterventionMode::KickRandom}) {
    if (intervention_tag(m) == tag) return m;
  }
  return std::nullopt;
}

std::string_view kick_scale_tag(KickScale s) {
  return s == KickScale::Update ? "update" : "grad_step";
}

std::optional<KickScale> parse_kick_scale(std::string_view tag) {
  if (tag == "grad_step") return KickScale::GradStep;
  if (tag == "update") return KickScale::Update;
  return std::nullopt;
}

void InterventionConfig::validate() const {
  if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("intervention: strength must be in [0, 1]");
  if (kick_gain < 0.0) throw std::invalid_argument("intervention: kick_gain must be >= 0");
  if (refresh_interval <= 0) throw std::invalid_argument("intervention: refresh_interval must be positive");
  if (start_step < 0) throw std::invalid_argument("intervention: start_step must be >= 0");
  if (!(baseline_factor > 0.0)) throw std::invalid_argument("intervention: baseline_factor must be positive");
}

FrozenBasis phase1_basis(const TrajectoryLog& baseline, std::size_t param_count, std::size_t n_pcs) {
  FrozenBasis b;
  const ExecutionBasis eb = build_execution_basis(baseline, param_count, n_pcs);
  b.columns = eb.columns;
  b.source = BasisSource::Phase1Pca;
  b.hash = eb.hash();
  return b;
}

FrozenBasis random_frozen_basis(std::size_t param_count, std::size_t k, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "intervention-basis");
  FrozenBasis b;
  b.columns = random_orthonormal_basis(param_count, k, rng);
  b.source = BasisSource::Random;
  b.hash = basis_hash(b.columns);
  return b;
}

void suppress_gradient(std::span<double> g, const Eigen::MatrixXd& basis, double s) {
  if (std::size_t(basis.rows()) != g.size()) throw std::invalid_argument("suppress_gradient: size mismatch");
  if (s == 0.0) return;
  VectorMap gv(g.data(), Eigen::Index(g.size()));
  // Aligned copy: the product must not depend on where g happens to live.
  const Eigen::VectorXd g0 = gv;
  const Eigen::VectorXd par = basis * (basis.transpose() * g0);
  gv = par + (1.0 - s) * (g0 - par);
}

SuppressionHook::SuppressionHook(const FrozenBasis& basis, double strength, std::int64_t start_step)
    : basis_(basis), strength_(strength), start_step_(start_step) {}

void SuppressionHook::on_gradient(Trainer& t, std::span<double> g) {
  if (t.step() + 1 >= start_step_) suppress_gradient(g, basis_.columns, strength_);
}

void commutator_kick(std::span<double> theta, std::span<const double> direction, double gain, double step_norm) {
  if (theta.size() != direction.size()) throw std::invalid_argument("commutator_kick: size mismatch");
  const double scale = gain * step_norm;
  if (scale == 0.0) return;
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += scale * direction[i];
}

KickHook::KickHook(const InterventionConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), rng_(Rng::stream(seed, "kick")) {}

void KickHook::on_start(Trainer&) {
  events_.clear();
  rng_ = Rng::stream(seed_, "kick");
}

double KickHook::kick_step_norm(const Trainer& t) const {
  if (cfg_.kick_scale == KickScale::Update) return t.last_update_norm();
  return t.config().lr * l2_norm(t.last_gradient());
}

void KickHook::after_update(Trainer& t) {
  const std::int64_t step = t.step();
  if (step < cfg_.start_step || step % cfg_.refresh_interval != 0) return;
  KickEvent ev;
  ev.step = step;
  ParamVector& theta = t.mutable_parameters();
  std::vector<double> dir;
  if (cfg_.mode == InterventionMode::KickCommutator) {
    Rng sub = rng_.split(std::uint64_t(step));
    const auto a = t.model().loss_fn(sample_batch(t.data().train, cfg_.batch_size, sub));
    const auto b = t.model().loss_fn(sample_batch(t.data().train, cfg_.batch_size, sub));
    CommutatorSample c = commutator_sample(theta, a, b, cfg_.probe_eta);
    const double n = l2_norm(c.delta);
    if (!c.valid || !(n > 0.0)) {
      ev.note = "invalid commutator sample";
      events_.push_back(ev);
      return;
    }
    dir = std::move(c.delta);
    for (double& x : dir) x /= n;
  } else {
    dir.resize(theta.size());
    for (double& x : dir) x = rng_.normal();
    const auto g = t.last_gradient();
    const double gg = l2_norm(g);
    if (gg > 0.0) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dir.size(); ++i) dot += dir[i] * g[i];
      const double c = dot / (gg * gg);
      for (std::size_t i = 0; i < dir.size(); ++i) dir[i] -= c * g[i];
    }
    const double n = l2_norm(dir);
    for (double& x : dir) x /= n;
  }
  const double step_norm = kick_step_norm(t);
  commutator_kick(theta.values, dir, cfg_.kick_gain, step_norm);
  ev.norm = cfg_.kick_gain * step_norm;
  ev.applied = true;
  events_.push_back(ev);
}

}  // namespace grokgeom
