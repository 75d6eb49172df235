#include "grokgeom/pca.hpp"
#include "grokgeom/trajectory.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace grokgeom;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("Gram spectrum agrees with an independent Jacobi eigensolver") {
  RowMatrix x = random_matrix(7, 40, 11);
  x.rowwise() -= x.colwise().mean();
  const auto ours = gram_spectrum(x);
  const auto ref = testutil::jacobi_eigen(x.transpose() * x).values;
  for (std::size_t k = 0; k < ours.size(); ++k) CHECK(ours[k] == doctest::Approx(ref[k]).epsilon(1e-9));
  // Remaining covariance eigenvalues vanish (rank <= T - 1 after centering).
  CHECK(std::abs(ref[7]) < 1e-9);
}

TEST_CASE("PCA components are orthonormal and explain the variance") {
  RowMatrix x = random_matrix(10, 30, 12);
  x.rowwise() -= x.colwise().mean();
  const auto r = pca(x, 5);
  REQUIRE(r.components.rows() == 5);
  const Eigen::MatrixXd gram = r.components * r.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).norm() < 1e-10);
  double total = 0;
  for (double e : r.explained_ratio) total += e;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // X v_k has norm sigma_k.
  for (Eigen::Index k = 0; k < 5; ++k) {
    CHECK((x * r.components.row(k).transpose()).norm() ==
          doctest::Approx(r.singular_values[std::size_t(k)]).epsilon(1e-9));
  }
}

TEST_CASE("a straight-line trajectory has PC1 = 100%") {
  RowMatrix x(6, 4);
  for (Eigen::Index t = 0; t < 6; ++t) x.row(t) << double(t), 2.0 * t, -double(t), 0.5 * t;
  x.rowwise() -= x.colwise().mean();
  CHECK(pc1_percent_of(x) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(pc1_percent_of(RowMatrix::Zero(4, 3)) == 0.0);
}

TEST_CASE("trajectory matrix subtracts W0 and centers columns") {
  MatrixTrack track;
  track.view.rows = 1;
  track.view.cols = 2;
  track.initial = {1.0, 1.0};
  track.values = {2.0, 1.0, 4.0, 1.0, 6.0, 1.0};
  const auto x = trajectory_matrix(track);
  CHECK(x(0, 0) == doctest::Approx(-2.0));
  CHECK(x(2, 0) == doctest::Approx(2.0));
  CHECK(x(1, 1) == 0.0);
  CHECK(step_norms(track) == std::vector<double>{1.0, 2.0, 2.0});
  MatrixTrack one = track;
  one.values.resize(2);
  CHECK_THROWS_AS(trajectory_matrix(one), std::invalid_argument);
}

TEST_CASE("random-walk null model") {
  const std::vector<double> norms(20, 1.0);
  const auto near_null = random_walk_null(50.0, norms, 64, 100, 3);
  CHECK(near_null.null_mean > 40.0);
  CHECK(near_null.null_mean < 90.0);
  CHECK(near_null.null_std > 0.0);
  const auto far = random_walk_null(99.9, norms, 64, 100, 3);
  CHECK(far.z_score > near_null.z_score);
  CHECK(far.null_mean == near_null.null_mean);  // same seed, same null
}

TEST_CASE("expanding-window PC1 starts at three snapshots") {
  MatrixTrack track;
  track.view.rows = 1;
  track.view.cols = 3;
  track.initial = {0, 0, 0};
  Rng rng(1);
  for (int t = 0; t < 6; ++t)
    for (int j = 0; j < 3; ++j) track.values.push_back(rng.normal());
  const std::vector<std::int64_t> steps{100, 200, 300, 400, 500, 600};
  const auto w = expanding_window_pc1(track, steps);
  REQUIRE(w.size() == 4);
  CHECK(w.front().first == 300);
  CHECK(w.back().first == 600);
}

TEST_CASE("trajectory log saves and loads losslessly") {
  const Transformer model(testutil::tiny_model());
  TrajectoryLog log(model.attention_views());
  auto theta = model.init(1);
  log.set_initial(theta);
  log.record(10, theta);
  theta.values[model.attention_views()[0].offset] += 1.0;
  log.record(20, theta);
  CHECK_THROWS(log.record(20, theta));
  const auto dir = testutil::temp_dir("trajectory");
  log.save(dir);
  const auto back = TrajectoryLog::load(dir);
  CHECK(back.steps() == log.steps());
  CHECK(back.tracks()[0].values == log.tracks()[0].values);
  CHECK(back.tracks()[0].initial == log.tracks()[0].initial);
  CHECK(log.prefix(1).n_snapshots() == 1);
  CHECK(log.track("L0.WQ").view.offset == model.attention_views()[0].offset);
}
