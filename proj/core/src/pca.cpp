#include "grokgeom/pca.hpp"

#include "grokgeom/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace grokgeom {

namespace {

// Deltas from W0, uncentered.
RowMatrix delta_rows(const MatrixTrack& track, std::size_t n_rows) {
  const std::size_t dim = track.dim();
  RowMatrix y(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(dim));
  const ConstVectorMap w0(track.initial.data(), Eigen::Index(dim));
  for (std::size_t t = 0; t < n_rows; ++t) {
    y.row(Eigen::Index(t)) = (ConstVectorMap(track.snapshot(t).data(), Eigen::Index(dim)) - w0).transpose();
  }
  return y;
}

std::vector<double> descending_clamped(const Eigen::VectorXd& ascending) {
  std::vector<double> out(std::size_t(ascending.size()));
  for (Eigen::Index i = 0; i < ascending.size(); ++i) {
    out[std::size_t(i)] = std::max(0.0, ascending[ascending.size() - 1 - i]);
  }
  return out;
}

double pc1_from_spectrum(const std::vector<double>& lambda) {
  const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  return total > 0.0 ? 100.0 * lambda.front() / total : 0.0;
}

}  // namespace

RowMatrix trajectory_matrix(const MatrixTrack& track) {
  if (track.n_snapshots() < 2) throw std::invalid_argument("trajectory_matrix: need at least 2 snapshots");
  RowMatrix x = delta_rows(track, track.n_snapshots());
  x.rowwise() -= x.colwise().mean();
  return x;
}

std::vector<double> gram_spectrum(const RowMatrix& x) {
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  return descending_clamped(eig.eigenvalues());
}

double pc1_percent_of(const RowMatrix& x) { return pc1_from_spectrum(gram_spectrum(x)); }

PcaResult pca(const RowMatrix& x, std::size_t n_components) {
  if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument("pca: empty matrix");
  PcaResult r;
  r.n_snapshots = std::size_t(x.rows());
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const auto lambda = descending_clamped(eig.eigenvalues());
  const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  r.singular_values.reserve(lambda.size());
  for (double l : lambda) r.singular_values.push_back(std::sqrt(l));
  if (!(total > 0.0)) {
    r.degenerate = true;
    r.explained_ratio.assign(lambda.size(), 0.0);
    r.components.resize(0, x.cols());
    return r;
  }
  for (double l : lambda) r.explained_ratio.push_back(l / total);

  // v_k = X^T u_k / sigma_k for components above the numerical noise floor.
  const double floor = r.singular_values.front() * 1e-7;
  std::size_t k = 0;
  while (k < std::min(n_components, lambda.size()) && r.singular_values[k] > floor) ++k;
  r.components.resize(Eigen::Index(k), x.cols());
  const Eigen::Index n = eig.eigenvectors().cols();
  for (std::size_t i = 0; i < k; ++i) {
    const Eigen::VectorXd u = eig.eigenvectors().col(n - 1 - Eigen::Index(i));
    r.components.row(Eigen::Index(i)) = (x.transpose() * u).transpose() / r.singular_values[i];
  }
  return r;
}

std::vector<double> step_norms(const MatrixTrack& track) {
  std::vector<double> out;
  std::span<const double> prev = track.initial;
  for (std::size_t t = 0; t < track.n_snapshots(); ++t) {
    const auto cur = track.snapshot(t);
    double s = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) s += (cur[i] - prev[i]) * (cur[i] - prev[i]);
    out.push_back(std::sqrt(s));
    prev = cur;
  }
  return out;
}

NullModelResult random_walk_null(double observed_pc1_percent, std::span<const double> norms, std::size_t dim,
                                 std::size_t n_trials, std::uint64_t seed) {
  if (n_trials < 100) throw std::invalid_argument("random_walk_null: need at least 100 trials");
  if (norms.size() < 2 || dim == 0) throw std::invalid_argument("random_walk_null: need >= 2 steps");
  Rng rng = Rng::stream(seed, "null-model");
  const std::size_t steps = norms.size();
  RowMatrix x(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd pos(static_cast<Eigen::Index>(dim)), z(static_cast<Eigen::Index>(dim));
  std::vector<double> samples;
  samples.reserve(n_trials);
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    pos.setZero();
    for (std::size_t t = 0; t < steps; ++t) {
      for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
      pos += z * (norms[t] / z.norm());
      x.row(Eigen::Index(t)) = pos.transpose();
    }
    x.rowwise() -= x.colwise().mean();
    samples.push_back(pc1_percent_of(x));
  }
  NullModelResult r;
  r.null_mean = std::accumulate(samples.begin(), samples.end(), 0.0) / double(samples.size());
  double ss = 0.0;
  for (double s : samples) ss += (s - r.null_mean) * (s - r.null_mean);
  r.null_std = std::sqrt(ss / double(samples.size() - 1));
  if (r.null_std > 0.0) {
    r.z_score = (observed_pc1_percent - r.null_mean) / r.null_std;
  } else {
    r.degenerate = true;
  }
  return r;
}

std::vector<std::pair<std::int64_t, double>> expanding_window_pc1(const MatrixTrack& track,
                                                                  std::span<const std::int64_t> steps) {
  const std::size_t total = track.n_snapshots();
  if (total < 3) throw std::invalid_argument("expanding_window_pc1: need at least 3 snapshots");
  if (steps.size() != total) throw std::invalid_argument("expanding_window_pc1: step axis length mismatch");
  const RowMatrix y = delta_rows(track, total);
  const Eigen::MatrixXd gram = y * y.transpose();
  std::vector<std::pair<std::int64_t, double>> out;
  for (std::size_t n = 3; n <= total; ++n) {
    const auto m = Eigen::Index(n);
    const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(m, m) - Eigen::MatrixXd::Constant(m, m, 1.0 / double(n));
    const Eigen::MatrixXd centered = h * gram.topLeftCorner(m, m) * h;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered, Eigen::EigenvaluesOnly);
    out.emplace_back(steps[n - 1], pc1_from_spectrum(descending_clamped(eig.eigenvalues())));
  }
  return out;
}

}  // namespace grokgeom
