#pragma once

#include "grokgeom/geometry.hpp"
#include "grokgeom/trainer.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

enum class InterventionMode { None, SuppressPca, SuppressRandom, KickCommutator, KickRandom };
std::string_view intervention_tag(InterventionMode m);
std::optional<InterventionMode> parse_intervention(std::string_view tag);

/// What a kick gain multiplies: lr * ||g|| of the latest step, or the realized AdamW displacement.
enum class KickScale { GradStep, Update };
std::string_view kick_scale_tag(KickScale s);
std::optional<KickScale> parse_kick_scale(std::string_view tag);

struct InterventionConfig {
  InterventionMode mode = InterventionMode::None;
  double strength = 1.0;       // suppression s
  double kick_gain = 100.0;
  KickScale kick_scale = KickScale::GradStep;
  std::int64_t start_step = 500;
  std::int64_t refresh_interval = 50;
  std::size_t basis_rank = 16;  // random-basis rank; the PCA basis rank follows n_pcs
  std::size_t n_pcs = 2;
  double probe_eta = 1e-3;
  std::size_t batch_size = 512;
  double baseline_factor = 3.0;  // suppression runs stop at factor x baseline grok step

  bool is_suppression() const {
    return mode == InterventionMode::SuppressPca || mode == InterventionMode::SuppressRandom;
  }
  bool is_kick() const { return mode == InterventionMode::KickCommutator || mode == InterventionMode::KickRandom; }
  void validate() const;
};

enum class BasisSource { Phase1Pca, Random };

struct FrozenBasis {
  Eigen::MatrixXd columns;
  BasisSource source = BasisSource::Random;
  std::uint64_t hash = 0;
};

/// Execution basis of a finished baseline trajectory.
FrozenBasis phase1_basis(const TrajectoryLog& baseline, std::size_t param_count, std::size_t n_pcs = 2);
FrozenBasis random_frozen_basis(std::size_t param_count, std::size_t k, std::uint64_t seed);

/// g <- B B^T g + (1 - s)(g - B B^T g), in place.
void suppress_gradient(std::span<double> g, const Eigen::MatrixXd& basis, double s);

/// Applies suppress_gradient to the clipped gradient of every update whose
/// resulting step index is >= start_step.
class SuppressionHook : public TrainingHook {
 public:
  SuppressionHook(const FrozenBasis& basis, double strength, std::int64_t start_step);
  void on_gradient(Trainer& t, std::span<double> g) override;

 private:
  const FrozenBasis& basis_;
  double strength_;
  std::int64_t start_step_;
};

/// theta <- theta + gain * step_norm * direction (direction assumed unit).
void commutator_kick(std::span<double> theta, std::span<const double> direction, double gain, double step_norm);

struct KickEvent {
  std::int64_t step = 0;
  double norm = 0.0;  // realized ||theta' - theta||
  bool applied = false;
  std::string note;
};

/// Every refresh_interval steps from start_step, draws a new unit direction
/// (a fresh commutator, or a Gaussian vector orthogonalized against the
/// current gradient) and displaces theta along it. Optimizer moments are
/// left alone.
class KickHook : public TrainingHook {
 public:
  KickHook(const InterventionConfig& cfg, std::uint64_t seed);
  void on_start(Trainer& t) override;
  void after_update(Trainer& t) override;
  const std::vector<KickEvent>& events() const { return events_; }

 private:
  double kick_step_norm(const Trainer& t) const;

  InterventionConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<KickEvent> events_;
};

}  // namespace grokgeom
