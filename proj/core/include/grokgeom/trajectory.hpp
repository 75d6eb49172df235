#pragma once

#include "grokgeom/params.hpp"
#include "grokgeom/transformer.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

/// Snapshots of one attention matrix: the initial weights W0 plus a
/// time-ordered list of later snapshots, stored contiguously.
struct MatrixTrack {
  AttentionMatrixView view;
  std::vector<double> initial;
  std::vector<double> values;  // n_snapshots * view.size()

  std::size_t dim() const { return view.size(); }
  std::size_t n_snapshots() const { return dim() == 0 ? 0 : values.size() / dim(); }
  std::span<const double> snapshot(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim(), dim());
  }
};

/// Attention-weight trajectory for every (layer, matrix), sharing one step axis.
class TrajectoryLog {
 public:
  TrajectoryLog() = default;
  explicit TrajectoryLog(std::vector<AttentionMatrixView> views);

  void set_initial(const ParamVector& theta);
  /// Appends a snapshot; steps must be strictly increasing.
  void record(std::int64_t step, const ParamVector& theta);

  const std::vector<MatrixTrack>& tracks() const { return tracks_; }
  const MatrixTrack& track(std::string_view key) const;
  const std::vector<std::int64_t>& steps() const { return steps_; }
  std::size_t n_snapshots() const { return steps_.size(); }

  /// Copy restricted to the first n snapshots.
  TrajectoryLog prefix(std::size_t n) const;

  /// snapshots/manifest.json + one <key>.f64 per matrix holding W0 followed by
  /// the snapshots, row-major.
  void save(const std::filesystem::path& dir) const;
  static TrajectoryLog load(const std::filesystem::path& dir);

 private:
  std::vector<MatrixTrack> tracks_;
  std::vector<std::int64_t> steps_;
};

}  // namespace grokgeom
