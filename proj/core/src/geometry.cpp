#include "grokgeom/geometry.hpp"

#include "grokgeom/optimizer.hpp"
#include "grokgeom/pca.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace grokgeom {

CommutatorSample commutator_sample(const ParamVector& theta, const LossFn& loss_a, const LossFn& loss_b,
                                   double probe_eta) {
  CommutatorSample s;
  s.probe_eta = probe_eta;
  const auto ga = value_and_grad(loss_a, theta).grad;
  const auto gb = value_and_grad(loss_b, theta).grad;
  s.step_norm_a = probe_eta * l2_norm(ga);
  s.step_norm_b = probe_eta * l2_norm(gb);
  if (!(s.step_norm_a > 0.0) || !(s.step_norm_b > 0.0)) return s;

  ParamVector after_a = theta, after_b = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    after_a.values[i] -= probe_eta * ga[i];
    after_b.values[i] -= probe_eta * gb[i];
  }
  const auto gb_after_a = value_and_grad(loss_b, after_a).grad;
  const auto ga_after_b = value_and_grad(loss_a, after_b).grad;

  // theta_AB - theta_BA = eta [(g_B - g_A) + (g_A(theta_B) - g_B(theta_A))],
  // formed from gradient differences so the O(eta^2) result does not
  // cancel against theta itself.
  s.delta.resize(theta.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = probe_eta * ((gb[i] - ga[i]) + (ga_after_b[i] - gb_after_a[i]));
    s.delta[i] = d;
    sq += d * d;
  }
  s.defect = std::sqrt(sq) / (s.step_norm_a * s.step_norm_b);
  s.valid = std::isfinite(s.defect);
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

DefectMeasurement defect_median(const ParamVector& theta, const BatchLossSampler& sampler, std::size_t n_samples,
                                double probe_eta, Rng& rng) {
  std::vector<Rng> streams;
  streams.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) streams.push_back(rng.split(i));

  DefectMeasurement m;
  std::vector<double> defects;
  for (auto& sub : streams) {
    const LossFn a = sampler(sub);
    const LossFn b = sampler(sub);
    m.samples.push_back(commutator_sample(theta, a, b, probe_eta));
    if (m.samples.back().valid) defects.push_back(m.samples.back().defect);
  }
  m.n_valid = defects.size();
  m.flagged = (n_samples - m.n_valid) * 2 > n_samples;
  m.median_defect = median(std::move(defects));
  return m;
}

std::uint64_t ExecutionBasis::hash() const { return basis_hash(columns); }

std::uint64_t basis_hash(const Eigen::MatrixXd& columns) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(columns.data());
  const std::size_t n = std::size_t(columns.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& columns, std::vector<std::size_t>* kept, double tol) {
  std::vector<std::size_t> idx;
  for (Eigen::Index j = 0; j < columns.cols(); ++j) {
    if (columns.col(j).norm() > 0.0) idx.push_back(std::size_t(j));
  }
  while (true) {
    Eigen::MatrixXd a(columns.rows(), Eigen::Index(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) a.col(Eigen::Index(j)) = columns.col(Eigen::Index(idx[j]));
    if (idx.empty()) {
      if (kept) kept->clear();
      return a;
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const auto& r = qr.matrixQR();
    std::size_t bad = idx.size();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (std::abs(r(Eigen::Index(j), Eigen::Index(j))) <= tol * a.col(Eigen::Index(j)).norm()) {
        bad = j;
        break;
      }
    }
    if (bad == idx.size()) {
      if (kept) *kept = idx;
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), a.cols());
      return q;
    }
    idx.erase(idx.begin() + std::ptrdiff_t(bad));
  }
}

ExecutionBasis build_execution_basis(const TrajectoryLog& log, std::size_t param_count,
                                     std::size_t n_pcs_per_matrix) {
  if (log.n_snapshots() < 3) throw std::invalid_argument("build_execution_basis: need at least 3 snapshots");
  const auto& tracks = log.tracks();
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(Eigen::Index(param_count),
                                              Eigen::Index(tracks.size() * n_pcs_per_matrix));
  std::vector<BasisColumnSource> sources;
  Eigen::Index col = 0;
  for (const auto& track : tracks) {
    if (track.view.offset + track.dim() > param_count) {
      throw std::invalid_argument("build_execution_basis: track " + track.view.key() + " exceeds P");
    }
    const PcaResult r = pca(trajectory_matrix(track), n_pcs_per_matrix);
    for (std::size_t k = 0; k < n_pcs_per_matrix; ++k, ++col) {
      sources.push_back({track.view.key(), k});
      if (Eigen::Index(k) < r.components.rows()) {
        raw.col(col).segment(Eigen::Index(track.view.offset), Eigen::Index(track.dim())) =
            r.components.row(Eigen::Index(k)).transpose();
      }
    }
  }
  ExecutionBasis basis;
  basis.requested = sources.size();
  std::vector<std::size_t> kept;
  basis.columns = orthonormalize(raw, &kept);
  for (std::size_t j : kept) basis.provenance.push_back(sources[j]);
  return basis;
}

Eigen::MatrixXd random_orthonormal_basis(std::size_t dim, std::size_t k, Rng& rng) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  return q;
}

Projection project_decompose(std::span<const double> delta, const Eigen::MatrixXd& basis) {
  if (std::size_t(basis.rows()) != delta.size()) throw std::invalid_argument("project_decompose: size mismatch");
  Projection p;
  const ConstVectorMap d(delta.data(), Eigen::Index(delta.size()));
  const double norm = d.norm();
  p.parallel.assign(delta.size(), 0.0);
  p.perpendicular.assign(delta.begin(), delta.end());
  if (!(norm > 0.0)) return p;
  const Eigen::VectorXd coeff = basis.transpose() * d;
  VectorMap par(p.parallel.data(), Eigen::Index(delta.size()));
  par.noalias() = basis * coeff;
  VectorMap perp(p.perpendicular.data(), Eigen::Index(delta.size()));
  perp = d - par;
  p.rho = perp.norm() / norm;
  p.parallel_fraction = par.norm() / norm;
  p.valid = true;
  return p;
}

double projection_fraction(std::span<const double> delta, const Eigen::MatrixXd& basis) {
  const ConstVectorMap d(delta.data(), Eigen::Index(delta.size()));
  const double norm = d.norm();
  if (!(norm > 0.0)) return 0.0;
  return (basis.transpose() * d).norm() / norm;
}

double random_basis_control(std::span<const double> delta, std::size_t k, std::size_t n_rand, Rng& rng) {
  if (k >= delta.size()) throw std::invalid_argument("random_basis_control: K must be < P");
  if (n_rand == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < n_rand; ++r) {
    sum += projection_fraction(delta, random_orthonormal_basis(delta.size(), k, rng));
  }
  return sum / double(n_rand);
}

double trajectory_alignment(std::span<const double> step, std::span<const CommutatorSample> samples) {
  const ConstVectorMap s(step.data(), Eigen::Index(step.size()));
  const double sn = s.norm();
  if (!(sn > 0.0)) return 0.0;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : samples) {
    if (!c.valid || c.delta.size() != step.size()) continue;
    const ConstVectorMap d(c.delta.data(), Eigen::Index(c.delta.size()));
    const double dn = d.norm();
    if (!(dn > 0.0)) continue;
    sum += std::abs(s.dot(d)) / (sn * dn);
    ++n;
  }
  return n ? sum / double(n) : 0.0;
}

}  // namespace grokgeom
