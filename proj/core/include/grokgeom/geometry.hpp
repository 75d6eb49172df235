#pragma once

#include "grokgeom/params.hpp"
#include "grokgeom/rng.hpp"
#include "grokgeom/trajectory.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

/// delta = theta_AB - theta_BA for one pair of batches, and the
/// scale-normalized defect D = ||delta|| / (||eta g_A|| * ||eta g_B||).
struct CommutatorSample {
  std::vector<double> delta;
  double defect = 0.0;
  double probe_eta = 0.0;
  double step_norm_a = 0.0;  // ||eta g_A(theta)||
  double step_norm_b = 0.0;
  bool valid = false;        // false when either gradient vanishes
};

/// theta_AB = theta - eta g_A(theta) - eta g_B(theta - eta g_A(theta)), and
/// symmetrically for BA, with plain gradient steps. theta is not modified.
CommutatorSample commutator_sample(const ParamVector& theta, const LossFn& loss_a, const LossFn& loss_b,
                                   double probe_eta);

/// Draws a fresh mini-batch from rng and returns its loss.
using BatchLossSampler = std::function<LossFn(Rng&)>;

struct DefectMeasurement {
  double median_defect = 0.0;
  std::vector<CommutatorSample> samples;
  std::size_t n_valid = 0;
  bool flagged = false;  // more than half of the samples invalid
};

/// n_samples commutators, each from two independent batches on a per-sample
/// substream of rng; median over valid samples.
DefectMeasurement defect_median(const ParamVector& theta, const BatchLossSampler& sampler, std::size_t n_samples,
                                double probe_eta, Rng& rng);

/// Median of a list (mean of the middle pair for even sizes); 0 when empty.
double median(std::vector<double> values);

struct BasisColumnSource {
  std::string key;  // "L<layer>.<matrix>"
  std::size_t pc_index = 0;
};

/// Orthonormal P x K basis; provenance lists the pre-orthonormalization
/// columns that were kept.
struct ExecutionBasis {
  Eigen::MatrixXd columns;
  std::vector<BasisColumnSource> provenance;
  std::size_t requested = 0;  // columns before dropping dependent ones

  std::size_t k() const { return std::size_t(columns.cols()); }
  std::size_t dim() const { return std::size_t(columns.rows()); }
  std::uint64_t hash() const;
};

/// FNV-1a over the raw column-major bytes.
std::uint64_t basis_hash(const Eigen::MatrixXd& columns);

/// Top n_pcs PCA directions of every tracked matrix embedded at the matrix's
/// offset in a length-P vector, stacked and orthonormalized by QR.
/// Requires >= 3 snapshots per track; dependent columns are dropped.
ExecutionBasis build_execution_basis(const TrajectoryLog& log, std::size_t param_count,
                                     std::size_t n_pcs_per_matrix = 2);

/// Orthonormalizes the given P x K columns by Householder QR, dropping columns
/// whose R diagonal falls below tol relative to the column norm.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& columns, std::vector<std::size_t>* kept = nullptr,
                               double tol = 1e-10);

/// Q factor of a Gaussian P x K matrix.
Eigen::MatrixXd random_orthonormal_basis(std::size_t dim, std::size_t k, Rng& rng);

struct Projection {
  std::vector<double> parallel;
  std::vector<double> perpendicular;
  double rho = 0.0;                  // ||delta_perp|| / ||delta||
  double parallel_fraction = 0.0;    // ||delta_par|| / ||delta||
  bool valid = false;                // false for zero delta
};

/// delta_par = B B^T delta, delta_perp = delta - delta_par.
Projection project_decompose(std::span<const double> delta, const Eigen::MatrixXd& basis);

/// ||B B^T delta|| / ||delta|| = ||B^T delta|| / ||delta|| for orthonormal B.
double projection_fraction(std::span<const double> delta, const Eigen::MatrixXd& basis);

/// Mean projection fraction over n_rand random K-dimensional orthonormal bases.
double random_basis_control(std::span<const double> delta, std::size_t k, std::size_t n_rand, Rng& rng);

/// Mean |cos(step, delta_k)| over the valid samples; 0 when none are valid.
double trajectory_alignment(std::span<const double> step, std::span<const CommutatorSample> samples);

}  // namespace grokgeom
