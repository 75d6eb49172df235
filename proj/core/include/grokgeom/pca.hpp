#pragma once

#include "grokgeom/tensor.hpp"
#include "grokgeom/trajectory.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace grokgeom {

struct PcaResult {
  std::vector<double> singular_values;  // descending
  std::vector<double> explained_ratio;  // sums to 1 unless degenerate
  RowMatrix components;                 // top-K right singular vectors as rows (K x dim)
  std::size_t n_snapshots = 0;
  bool degenerate = false;              // all-zero trajectory

  double pc_percent(std::size_t k) const {
    return k < explained_ratio.size() ? 100.0 * explained_ratio[k] : 0.0;
  }
  double pc1_percent() const { return pc_percent(0); }
};

/// Rows vec(W_t - W0) for every snapshot, columns mean-centered.
/// Throws std::invalid_argument with fewer than 2 snapshots.
RowMatrix trajectory_matrix(const MatrixTrack& track);

/// PCA of a centered T x dim matrix via the T x T Gram matrix X X^T.
/// Returns up to n_components right singular vectors.
PcaResult pca(const RowMatrix& x, std::size_t n_components = 5);

/// Descending eigenvalues of X X^T (= sigma_k^2), clamped at zero.
std::vector<double> gram_spectrum(const RowMatrix& x);

/// Percentage of variance on the first component; 0 for a zero matrix.
double pc1_percent_of(const RowMatrix& x);

/// ||W_t - W_{t-1}|| for t = 1..T (W_0 = initial).
std::vector<double> step_norms(const MatrixTrack& track);

struct NullModelResult {
  double null_mean = 0.0;
  double null_std = 0.0;
  double z_score = 0.0;
  bool degenerate = false;  // null_std == 0
};

/// Isotropic Gaussian random walks in `dim` dimensions whose per-step norms
/// equal `step_norms`; PC1% of each walk forms the null distribution.
NullModelResult random_walk_null(double observed_pc1_percent, std::span<const double> step_norms,
                                 std::size_t dim, std::size_t n_trials, std::uint64_t seed);

/// PC1% on trajectory prefixes of length 3..T; returns (step, PC1%).
std::vector<std::pair<std::int64_t, double>> expanding_window_pc1(const MatrixTrack& track,
                                                                  std::span<const std::int64_t> steps);

}  // namespace grokgeom
