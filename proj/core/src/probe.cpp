#include "grokgeom/probe.hpp"

#include "grokgeom/io.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace grokgeom {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

BatchLossSampler make_sampler(const Transformer& model, const DatasetSplit& data, std::size_t batch_size) {
  return [&model, &data, batch_size](Rng& r) { return model.loss_fn(sample_batch(data.train, batch_size, r)); };
}

}  // namespace

CheckpointMeasurement measure_checkpoint(const Transformer& model, const DatasetSplit& data,
                                         const ParamVector& theta, const TrajectoryLog& log,
                                         const ProbeConfig& cfg, Rng& rng) {
  CheckpointMeasurement m;
  m.defect = defect_median(theta, make_sampler(model, data, cfg.batch_size), cfg.n_samples, cfg.eta, rng);
  DefectRow& row = m.row;
  row.n_valid = m.defect.n_valid;
  row.flagged = m.defect.flagged;
  row.d_med = m.defect.n_valid ? m.defect.median_defect : kNaN;
  row.rho = row.exec_frac = row.rand_frac = row.exec_rand_ratio = row.alignment = kNaN;
  if (log.n_snapshots() < 3 || m.defect.n_valid == 0) return m;

  const ExecutionBasis basis = build_execution_basis(log, theta.size(), cfg.n_pcs);
  row.basis_k = basis.k();
  std::vector<const CommutatorSample*> usable;
  for (const auto& s : m.defect.samples) {
    if (s.valid && s.defect > 0.0) usable.push_back(&s);
  }
  if (usable.empty() || basis.k() == 0) return m;

  double rho = 0.0, exec = 0.0, rand = 0.0;
  for (const auto* s : usable) {
    const Projection p = project_decompose(s->delta, basis.columns);
    rho += p.rho;
    exec += p.parallel_fraction;
  }
  for (std::size_t r = 0; r < cfg.n_rand; ++r) {
    const Eigen::MatrixXd q = random_orthonormal_basis(theta.size(), basis.k(), rng);
    for (const auto* s : usable) rand += projection_fraction(s->delta, q);
  }
  const double n = double(usable.size());
  row.rho = rho / n;
  row.exec_frac = exec / n;
  if (cfg.n_rand > 0) {
    row.rand_frac = rand / (n * double(cfg.n_rand));
    row.exec_rand_ratio = row.rand_frac > 0.0 ? row.exec_frac / row.rand_frac : kNaN;
  }
  return m;
}

double measure_alignment(const Transformer& model, const DatasetSplit& data, const ParamVector& theta,
                         std::span<const double> step, const ProbeConfig& cfg, Rng& rng) {
  const auto sampler = make_sampler(model, data, cfg.batch_size);
  std::vector<CommutatorSample> samples;
  for (std::size_t i = 0; i < cfg.n_align; ++i) {
    Rng sub = rng.split(i);
    const LossFn a = sampler(sub);
    const LossFn b = sampler(sub);
    samples.push_back(commutator_sample(theta, a, b, cfg.eta));
  }
  return trajectory_alignment(step, samples);
}

DefectProbe::DefectProbe(ProbeConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(Rng::stream(seed, "probe")), seed_(seed) {}

void DefectProbe::on_start(Trainer&) {
  rows_.clear();
  onset_.reset();
  checkpoints_.clear();
  rng_ = Rng::stream(seed_, "probe");
}

void DefectProbe::after_eval(Trainer& t, const MetricsRow&) {
  // The step-0 evaluation runs before any update; periodic probes start there.
  if (cfg_.enabled && cfg_.interval > 0 && t.step() == 0 && rows_.empty()) {
    measure(t);
  }
}

DefectRow& DefectProbe::measure(Trainer& t) {
  auto m = measure_checkpoint(t.model(), t.data(), t.parameters(), t.trajectory(), cfg_, rng_);
  m.row.step = t.step();
  rows_.push_back(std::move(m.row));
  return rows_.back();
}

void DefectProbe::add_alignment(Trainer& t, DefectRow& row, const std::string& tag) {
  row.tags.push_back(tag);
  checkpoints_.emplace_back(tag, row.step);
  if (!cfg_.alignment || cfg_.n_align == 0) return;
  if (!std::isnan(row.alignment)) return;  // already measured at this step
  std::vector<double> step(t.parameters().size());
  for (std::size_t i = 0; i < step.size(); ++i) {
    step[i] = t.parameters().values[i] - t.previous_parameters().values[i];
  }
  row.alignment = measure_alignment(t.model(), t.data(), t.parameters(), step, cfg_, rng_);
}

void DefectProbe::check_onset(Trainer& t) {
  if (onset_) return;
  std::vector<std::int64_t> steps;
  std::vector<double> values;
  for (const auto& r : rows_) {
    if (std::isfinite(r.d_med)) {
      steps.push_back(r.step);
      values.push_back(r.d_med);
    }
  }
  if (values.size() < cfg_.onset.baseline_n) return;
  const auto det = detect_onset(steps, values, cfg_.onset);
  if (!det.onset_step) return;
  onset_ = det.onset_step;
  if (*onset_ == rows_.back().step) {
    add_alignment(t, rows_.back(), "onset");
  } else {
    checkpoints_.emplace_back("onset", *onset_);
  }
}

void DefectProbe::on_step_end(Trainer& t) {
  if (!cfg_.enabled) return;
  const bool periodic = cfg_.interval > 0 && t.step() % cfg_.interval == 0;
  const bool memo = t.memorized_this_step();
  const bool grok = t.grokked_this_step();
  if (!periodic && !memo && !grok) return;
  measure(t);
  check_onset(t);
  if (memo) add_alignment(t, rows_.back(), "memorization");
  if (grok) add_alignment(t, rows_.back(), "grok");
}

void DefectProbe::on_finish(Trainer& t) {
  if (!cfg_.enabled || t.step() == 0 || t.record().failed) return;
  try {
    if (rows_.empty() || rows_.back().step != t.step()) {
      measure(t);
      check_onset(t);
    }
    add_alignment(t, rows_.back(), "final");
  } catch (const DivergenceError&) {
    // A non-finite probe loss at the last step leaves the series as is.
  }
}

std::string defect_csv(const std::vector<DefectRow>& rows) {
  std::ostringstream os;
  os << "step,D_med,rho,exec_frac,rand_frac,exec_rand_ratio,alignment,n_valid_samples\n";
  for (const auto& r : rows) {
    os << r.step << ',' << fmt_f64(r.d_med) << ',' << fmt_f64(r.rho) << ',' << fmt_f64(r.exec_frac) << ','
       << fmt_f64(r.rand_frac) << ',' << fmt_f64(r.exec_rand_ratio) << ',' << fmt_f64(r.alignment) << ','
       << r.n_valid << '\n';
  }
  return os.str();
}

}  // namespace grokgeom
