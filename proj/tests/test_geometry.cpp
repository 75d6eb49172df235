#include "grokgeom/geometry.hpp"
#include "grokgeom/optimizer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace grokgeom;

namespace {

// L(theta) = ||W theta + c||^2 on a single (1, n) block: g = H theta + 2 W^T c
// with constant Hessian H = 2 W^T W.
struct Quadratic {
  Tensor w, c;
  Eigen::MatrixXd hessian() const {
    const Eigen::MatrixXd m = w.matrix();
    return 2.0 * m.transpose() * m;
  }
  LossFn loss() const {
    return [w = w, c = c](ad::Tape& t, const ParamVars& p) {
      return ad::sum_squares(t, ad::linear(t, p[0], t.constant(w), t.constant(c)));
    };
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const {
    const Eigen::MatrixXd m = w.matrix();
    const Eigen::VectorXd cv = Eigen::Map<const Eigen::VectorXd>(c.data().data(), Eigen::Index(c.size()));
    return 2.0 * m.transpose() * (m * theta + cv);
  }
};

Quadratic random_quadratic(std::size_t n, Rng& rng) {
  return {testutil::random_tensor({n, n}, rng), testutil::random_tensor({n}, rng)};
}

ParamVector flat_params(std::size_t n, Rng& rng) {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("x", {1, n});
  ParamVector theta(layout);
  for (auto& v : theta.values) v = rng.normal();
  return theta;
}

}  // namespace

TEST_CASE("commutator equals eta^2 (H_B g_A - H_A g_B) on quadratic losses") {
  Rng rng(7);
  const std::size_t n = 6;
  const auto qa = random_quadratic(n, rng), qb = random_quadratic(n, rng);
  const auto theta = flat_params(n, rng);
  const double eta = 1e-2;
  const auto s = commutator_sample(theta, qa.loss(), qb.loss(), eta);
  REQUIRE(s.valid);
  const Eigen::VectorXd th = Eigen::Map<const Eigen::VectorXd>(theta.values.data(), Eigen::Index(n));
  const Eigen::VectorXd ga = qa.grad(th), gb = qb.grad(th);
  const Eigen::VectorXd expect = eta * eta * (qb.hessian() * ga - qa.hessian() * gb);
  const Eigen::VectorXd got = Eigen::Map<const Eigen::VectorXd>(s.delta.data(), Eigen::Index(n));
  CHECK((got - expect).norm() / expect.norm() < 1e-9);
  CHECK(s.defect == doctest::Approx(expect.norm() / (eta * ga.norm() * eta * gb.norm())).epsilon(1e-9));
  CHECK(s.step_norm_a == doctest::Approx(eta * ga.norm()).epsilon(1e-12));
}

TEST_CASE("commutator is antisymmetric and vanishes for identical batches") {
  Rng rng(8);
  const auto qa = random_quadratic(5, rng), qb = random_quadratic(5, rng);
  const auto theta = flat_params(5, rng);
  const auto ab = commutator_sample(theta, qa.loss(), qb.loss(), 1e-3);
  const auto ba = commutator_sample(theta, qb.loss(), qa.loss(), 1e-3);
  for (std::size_t i = 0; i < 5; ++i) CHECK(ab.delta[i] == -ba.delta[i]);
  const auto aa = commutator_sample(theta, qa.loss(), qa.loss(), 1e-3);
  for (double d : aa.delta) CHECK(d == 0.0);
  CHECK(aa.defect == 0.0);
}

TEST_CASE("a zero gradient yields an invalid sample") {
  Rng rng(9);
  auto theta = flat_params(3, rng);
  const LossFn zero = [](ad::Tape& t, const ParamVars& p) {
    return ad::dot(t, p[0], Tensor({1, 3}, 0.0));
  };
  const auto s = commutator_sample(theta, zero, zero, 1e-3);
  CHECK_FALSE(s.valid);
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK(median({}) == 0.0);
}

TEST_CASE("defect median flags runs with mostly invalid samples") {
  Rng rng(10);
  const auto theta = flat_params(3, rng);
  const BatchLossSampler zero = [](Rng&) -> LossFn {
    return [](ad::Tape& t, const ParamVars& p) { return ad::dot(t, p[0], Tensor({1, 3}, 0.0)); };
  };
  Rng r2(1);
  const auto m = defect_median(theta, zero, 9, 1e-3, r2);
  CHECK(m.n_valid == 0);
  CHECK(m.flagged);
}

TEST_CASE("orthonormalize drops dependent and zero columns") {
  Eigen::MatrixXd a(5, 4);
  a.setZero();
  a.col(0) << 1, 2, 0, 0, 1;
  a.col(1) = 3.0 * a.col(0);
  a.col(3) << 0, 1, 1, 0, 0;
  std::vector<std::size_t> kept;
  const auto q = orthonormalize(a, &kept);
  CHECK(kept == std::vector<std::size_t>{0, 3});
  REQUIRE(q.cols() == 2);
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("projection decomposition") {
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(4, 1);
  basis(0, 0) = 1.0;
  const std::vector<double> delta{3.0, 4.0, 0.0, 0.0};
  const auto p = project_decompose(delta, basis);
  CHECK(p.valid);
  CHECK(p.rho == doctest::Approx(0.8));
  CHECK(p.parallel_fraction == doctest::Approx(0.6));
  CHECK(projection_fraction(delta, basis) == doctest::Approx(0.6));
  CHECK(p.parallel[0] == 3.0);
  CHECK(p.perpendicular[1] == 4.0);
  CHECK(p.rho * p.rho + p.parallel_fraction * p.parallel_fraction == doctest::Approx(1.0));
}

TEST_CASE("random K-dimensional bases capture about sqrt(K/P) of a vector") {
  Rng rng(11);
  const std::size_t dim = 4000, k = 16;
  std::vector<double> delta(dim);
  for (auto& x : delta) x = rng.normal();
  const double frac = random_basis_control(delta, k, 20, rng);
  CHECK(frac == doctest::Approx(std::sqrt(double(k) / double(dim))).epsilon(0.15));
  const auto q = random_orthonormal_basis(50, 5, rng);
  CHECK((q.transpose() * q - Eigen::MatrixXd::Identity(5, 5)).norm() < 1e-12);
  CHECK_THROWS(random_basis_control(std::vector<double>(4, 1.0), 4, 1, rng));
}

TEST_CASE("trajectory alignment is the mean absolute cosine") {
  CommutatorSample a, b, bad;
  a.delta = {1, 0};
  a.valid = true;
  b.delta = {-1, 1};
  b.valid = true;
  bad.delta = {1, 1};
  const std::vector<CommutatorSample> samples{a, b, bad};
  const std::vector<double> step{1, 0};
  CHECK(trajectory_alignment(step, samples) == doctest::Approx(0.5 * (1.0 + 1.0 / std::sqrt(2.0))));
}

TEST_CASE("execution basis embeds per-matrix PCs at their offsets") {
  const Transformer model(testutil::tiny_model());
  TrajectoryLog log(model.attention_views());
  auto theta = model.init(3);
  log.set_initial(theta);
  Rng rng(3);
  for (int t = 1; t <= 5; ++t) {
    for (auto& v : theta.values) v += 0.01 * rng.normal();
    log.record(t * 10, theta);
  }
  const auto basis = build_execution_basis(log, model.param_count(), 2);
  CHECK(basis.requested == 16);
  CHECK(basis.k() == 16);
  CHECK(basis.dim() == model.param_count());
  CHECK((basis.columns.transpose() * basis.columns - Eigen::MatrixXd::Identity(16, 16)).norm() < 1e-10);
  // Columns live only on attention coordinates.
  const auto views = model.attention_views();
  const auto emb_end = views.front().offset;
  CHECK(basis.columns.topRows(Eigen::Index(emb_end)).norm() < 1e-14);
  CHECK(basis.hash() == basis_hash(basis.columns));
  CHECK_THROWS(build_execution_basis(log.prefix(2), model.param_count(), 2));
}
