#pragma once

#include "grokgeom/geometry.hpp"
#include "grokgeom/trainer.hpp"
#include "grokgeom/transition.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace grokgeom {

struct ProbeConfig {
  bool enabled = true;
  std::int64_t interval = 100;
  std::size_t n_samples = 9;
  double eta = 1e-3;
  std::size_t batch_size = 512;
  std::size_t n_pcs = 2;
  std::size_t n_rand = 5;
  std::size_t n_align = 12;
  bool alignment = true;
  OnsetRule onset;
};

/// One defect.csv row. Quantities that could not be computed are NaN.
struct DefectRow {
  std::int64_t step = 0;
  double d_med = 0.0;
  double rho = 0.0;
  double exec_frac = 0.0;
  double rand_frac = 0.0;
  double exec_rand_ratio = 0.0;
  double alignment = 0.0;
  std::size_t n_valid = 0;
  std::size_t basis_k = 0;
  bool flagged = false;
  std::vector<std::string> tags;  // strategic checkpoints measured here
};

struct CheckpointMeasurement {
  DefectMeasurement defect;
  DefectRow row;
};

/// Full probe at theta: median defect, projection onto the execution basis
/// built from `log` (skipped with < 3 snapshots), random-basis control.
/// The same n_rand random bases serve every sample of the checkpoint.
CheckpointMeasurement measure_checkpoint(const Transformer& model, const DatasetSplit& data,
                                         const ParamVector& theta, const TrajectoryLog& log,
                                         const ProbeConfig& cfg, Rng& rng);

/// Mean |cos| between `step` and n_align fresh commutators at theta.
double measure_alignment(const Transformer& model, const DatasetSplit& data, const ParamVector& theta,
                         std::span<const double> step, const ProbeConfig& cfg, Rng& rng);

/// Periodic geometry probe plus alignment at the strategic checkpoints
/// (memorization, onset, grok, end of training). Reads theta only and draws
/// from its own RNG stream.
class DefectProbe : public TrainingHook {
 public:
  DefectProbe(ProbeConfig cfg, std::uint64_t seed);

  void on_start(Trainer& t) override;
  void after_eval(Trainer& t, const MetricsRow& row) override;
  void on_step_end(Trainer& t) override;
  void on_finish(Trainer& t) override;

  const std::vector<DefectRow>& rows() const { return rows_; }
  std::optional<std::int64_t> onset_step() const { return onset_; }
  const std::vector<std::pair<std::string, std::int64_t>>& checkpoints() const { return checkpoints_; }

 private:
  DefectRow& measure(Trainer& t);
  void add_alignment(Trainer& t, DefectRow& row, const std::string& tag);
  void check_onset(Trainer& t);

  ProbeConfig cfg_;
  Rng rng_;
  std::uint64_t seed_;
  std::vector<DefectRow> rows_;
  std::optional<std::int64_t> onset_;
  std::vector<std::pair<std::string, std::int64_t>> checkpoints_;
};

std::string defect_csv(const std::vector<DefectRow>& rows);

}  // namespace grokgeom
