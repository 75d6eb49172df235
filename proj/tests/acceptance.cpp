// Acceptance checks. `--suite property` runs the fast numerical checks;
// `--suite desk` trains (or reuses) the desk-scale runs under --root and
// checks the reproduction targets. One PASS/FAIL line per criterion.

#include "grokgeom/experiment.hpp"
#include "grokgeom/geometry.hpp"
#include "grokgeom/io.hpp"
#include "grokgeom/pca.hpp"
#include "grokgeom/transition.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

using namespace grokgeom;
namespace fs = std::filesystem;

namespace {

struct Report {
  int passed = 0;
  int failed = 0;

  void line(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    (ok ? passed : failed)++;
  }
};

std::string num(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

// ---------------------------------------------------------------- property

void gradient_fd(Report& rep) {
  const Transformer model(ModelConfig{});
  const auto ds = build_dataset(Operation::Add, 97, 0.5, 137);
  const auto theta = model.init(137);
  const std::span<const Example> batch(ds.train.data(), 512);
  const auto loss = model.loss_fn(batch);
  const auto vg = value_and_grad(loss, theta);
  ParamVector probe = theta;
  auto f = [&](std::size_t i, double d) {
    probe.values[i] = theta.values[i] + d;
    const double v = value_only(loss, probe);
    probe.values[i] = theta.values[i];
    return v;
  };
  Rng rng = Rng::stream(137, "fd-coordinates");
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = rng.uniform_below(theta.size());
    worst = std::max(worst, testutil::rel_err(vg.grad[i], testutil::central_diff6(f, i, 4e-3), 1e-300));
  }
  rep.line(worst < 1e-5, "gradient_finite_difference",
           "max rel err " + num(worst) + " over 100 coords of P=" + std::to_string(theta.size()) + " (< 1e-5)");
}

// L(theta) = ||W theta + c||^2 on two parameters: g = H theta + 2 W^T c,
// H = 2 W^T W.
struct Quad2 {
  Eigen::Matrix2d w;
  Eigen::Vector2d c;
  LossFn loss() const {
    Tensor wt({2, 2}, std::vector<double>{w(0, 0), w(0, 1), w(1, 0), w(1, 1)});
    Tensor ct({2}, std::vector<double>{c(0), c(1)});
    return [wt, ct](ad::Tape& t, const ParamVars& p) {
      return ad::sum_squares(t, ad::linear(t, p[0], t.constant(wt), t.constant(ct)));
    };
  }
  Eigen::Matrix2d h() const { return 2.0 * w.transpose() * w; }
  Eigen::Vector2d g(const Eigen::Vector2d& x) const { return 2.0 * w.transpose() * (w * x + c); }
};

void commutator_oracle(Report& rep) {
  auto layout = std::make_shared<ParamLayout>();
  layout->add("theta", {1, 2});
  Rng rng(31);
  const double eta = 1e-3;
  double worst = 0.0;
  bool zero_same = true, zero_linear = true;
  for (int trial = 0; trial < 20; ++trial) {
    Quad2 a, b;
    for (auto* q : {&a, &b}) {
      for (int i = 0; i < 4; ++i) q->w(i / 2, i % 2) = rng.normal();
      q->c << rng.normal(), rng.normal();
    }
    ParamVector theta(layout);
    theta.values = {rng.normal(), rng.normal()};
    const Eigen::Vector2d x(theta.values[0], theta.values[1]);
    const auto s = commutator_sample(theta, a.loss(), b.loss(), eta);
    const Eigen::Vector2d expect = eta * eta * (b.h() * a.g(x) - a.h() * b.g(x));
    const Eigen::Vector2d got(s.delta[0], s.delta[1]);
    worst = std::max(worst, (got - expect).norm() / expect.norm());

    zero_same = zero_same && commutator_sample(theta, a.loss(), a.loss(), eta).defect == 0.0;
    const Tensor ca({1, 2}, std::vector<double>{rng.normal(), rng.normal()});
    const Tensor cb({1, 2}, std::vector<double>{rng.normal(), rng.normal()});
    const LossFn la = [ca](ad::Tape& t, const ParamVars& p) { return ad::dot(t, p[0], ca); };
    const LossFn lb = [cb](ad::Tape& t, const ParamVars& p) { return ad::dot(t, p[0], cb); };
    zero_linear = zero_linear && commutator_sample(theta, la, lb, eta).defect == 0.0;
  }
  rep.line(worst < 1e-3 && zero_same && zero_linear, "commutator_quadratic_oracle",
           "max rel err " + num(worst) + " (< 1e-3, eta 1e-3); D(A,A)=0 " + (zero_same ? "yes" : "no") +
               "; D(linear)=0 " + (zero_linear ? "yes" : "no"));
}

void projection_algebra(Report& rep) {
  const Transformer model(ModelConfig{});
  const std::size_t P = model.layout()->total_size();
  TrajectoryLog log(model.attention_views());
  auto theta = model.init(5);
  log.set_initial(theta);
  Rng rng(5);
  for (int t = 1; t <= 6; ++t) {
    for (auto& v : theta.values) v += 0.01 * rng.normal();
    log.record(t * 100, theta);
  }
  const auto basis = build_execution_basis(log, P, 2);
  const double orth = (basis.columns.transpose() * basis.columns -
                       Eigen::MatrixXd::Identity(Eigen::Index(basis.k()), Eigen::Index(basis.k())))
                          .cwiseAbs()
                          .maxCoeff();
  double pyth = 0.0, idem = 0.0;
  bool rho_ok = true;
  std::vector<double> rand_fracs;
  Rng rr(6);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> delta(P);
    for (auto& x : delta) x = rng.normal();
    // Put a known share of the vector inside the basis.
    Eigen::VectorXd coeff(Eigen::Index(basis.k()));
    for (auto& c : coeff) c = 30.0 * rng.normal();
    const Eigen::VectorXd inside = basis.columns * coeff;
    for (std::size_t i = 0; i < P; ++i) delta[i] += inside(Eigen::Index(i));
    const auto p = project_decompose(delta, basis.columns);
    const double n2 = std::inner_product(delta.begin(), delta.end(), delta.begin(), 0.0);
    const double a2 = std::inner_product(p.parallel.begin(), p.parallel.end(), p.parallel.begin(), 0.0);
    const double b2 =
        std::inner_product(p.perpendicular.begin(), p.perpendicular.end(), p.perpendicular.begin(), 0.0);
    pyth = std::max(pyth, std::abs(a2 + b2 - n2) / n2);
    const auto again = project_decompose(p.parallel, basis.columns);
    double diff = 0.0;
    for (std::size_t i = 0; i < P; ++i) diff = std::max(diff, std::abs(again.parallel[i] - p.parallel[i]));
    idem = std::max(idem, diff / std::sqrt(a2));
    rho_ok = rho_ok && p.rho >= 0.0 && p.rho <= 1.0;
    rand_fracs.push_back(random_basis_control(delta, 16, 5, rr));
  }
  const double expect = std::sqrt(16.0 / double(P));
  const double rf = mean(rand_fracs);
  double rf_dev = 0.0;
  for (double f : rand_fracs) rf_dev = std::max(rf_dev, std::abs(f - expect));
  const bool ok = basis.k() == 16 && orth < 1e-10 && pyth < 1e-12 && idem < 1e-12 && rho_ok && rf_dev < 3e-3;
  rep.line(ok, "projection_algebra",
           "K=" + std::to_string(basis.k()) + " |B'B-I|max " + num(orth) + " (< 1e-10); pythagoras " + num(pyth) +
               " (< 1e-12); idempotence " + num(idem) + " (< 1e-12); rho in [0,1] " + (rho_ok ? "yes" : "no") +
               "; random frac " + num(rf) + " vs sqrt(K/P) " + num(expect) + ", max dev " + num(rf_dev) +
               " (< 3e-3)");
}

void pca_oracle(Report& rep) {
  double worst_val = 0.0, worst_vec = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(100 + std::uint64_t(trial));
    const Eigen::Index t = 6 + trial, d = 12;
    RowMatrix x(t, d);
    for (Eigen::Index i = 0; i < t; ++i)
      for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal() * (1.0 + double(j % 4));
    x.rowwise() -= x.colwise().mean();
    const auto ours = pca(x, 3);
    const auto ref = testutil::jacobi_eigen(x.transpose() * x);  // d x d covariance, brute force
    double total = 0.0;
    for (double v : ref.values) total += std::max(v, 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
      worst_val = std::max(worst_val, std::abs(ours.explained_ratio[k] - ref.values[k] / total));
      const double c = std::abs(ours.components.row(Eigen::Index(k)).dot(ref.vectors.col(Eigen::Index(k))));
      worst_vec = std::max(worst_vec, std::abs(1.0 - c));
    }
  }
  RowMatrix line(5, 7);
  Rng rng(9);
  Eigen::RowVectorXd dir(7);
  for (Eigen::Index j = 0; j < 7; ++j) dir(j) = rng.normal();
  for (Eigen::Index i = 0; i < 5; ++i) line.row(i) = double(i * i) * dir;
  line.rowwise() -= line.colwise().mean();
  const double pc1 = pc1_percent_of(line);
  const bool ok = worst_val < 1e-8 && worst_vec < 1e-8 && std::abs(pc1 - 100.0) < 1e-8;
  rep.line(ok, "pca_vs_covariance_eigen",
           "explained-ratio err " + num(worst_val) + ", |1-|cos|| " + num(worst_vec) + " (< 1e-8); rank-1 PC1% " +
               num(pc1, 12));
}

void stats_anchors(Report& rep) {
  const double p = sign_test(12, 12);
  std::vector<std::pair<double, double>> pts;
  for (double t : {1200.0, 1900.0, 2600.0, 3400.0, 5100.0, 8000.0}) pts.emplace_back(t, 0.05 * std::pow(t, 1.27));
  const auto fit = power_law_fit(pts);
  const bool ok = p == std::ldexp(1.0, -12) && std::abs(fit.alpha - 1.27) < 1e-10;
  rep.line(ok, "sign_test_and_power_law", "sign_test(12/12) " + num(p, 17) + " (2^-12 = " +
                                              num(std::ldexp(1.0, -12), 17) + "); alpha " + num(fit.alpha, 15));
}

// -------------------------------------------------------------------- desk

const std::vector<Operation> kGrokOps{Operation::Add, Operation::Sub, Operation::Mul, Operation::X2Y2};
const std::vector<std::uint64_t> kSeeds{137, 42, 7};

struct Desk {
  fs::path root;
  RunOptions opt;

  LoadedRun run(RunConfig cfg) {
    const auto id = cfg.run_id();
    std::fprintf(stderr, "[desk] %s\n", id.c_str());
    const auto s = execute_run(cfg, root, opt);
    if (s.status != RunStatus::Done) std::fprintf(stderr, "[desk] %s did not finish: %s\n", id.c_str(), s.failure.c_str());
    return load_run(s.dir);
  }
  static RunConfig base(Operation op, std::uint64_t seed) {
    RunConfig c;
    c.op = op;
    c.train.seed = seed;
    return c;
  }
};

bool read_early_stop(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_file(dir / "events.json"));
  return j.value("early_stopped", false);
}

// Mean exec/random ratio over checkpoints in the second half of the
// pre-generalization window [t_grok / 2, t_grok].
double late_ratio(const LoadedRun& r) {
  if (!r.summary.grok_step) return std::nan("");
  const auto g = *r.summary.grok_step;
  std::vector<double> v;
  for (const auto& row : r.defect) {
    if (row.step * 2 >= g && row.step <= g && std::isfinite(row.exec_rand_ratio)) v.push_back(row.exec_rand_ratio);
  }
  return mean(v);
}

void desk_suite(Report& rep, Desk& desk) {
  std::vector<LoadedRun> grok;
  for (auto op : kGrokOps)
    for (auto seed : kSeeds) grok.push_back(desk.run(Desk::base(op, seed)));

  std::vector<LoadedRun> nongrok;  // x2_xy_y2 over 10k steps
  for (auto seed : kSeeds) {
    auto c = Desk::base(Operation::X2XYY2, seed);
    c.train.max_steps = 10000;
    nongrok.push_back(desk.run(c));
  }
  std::vector<LoadedRun> controls = nongrok;
  {
    auto c = Desk::base(Operation::X3XY, 137);
    c.train.max_steps = 10000;
    controls.push_back(desk.run(c));
    auto w = Desk::base(Operation::Add, 137);
    w.train.weight_decay = 0.0;
    w.train.max_steps = 10000;
    controls.push_back(desk.run(w));
  }

  std::map<double, std::vector<LoadedRun>> by_lr;
  for (double lr : {3e-4, 1e-3, 3e-3}) {
    for (std::uint64_t seed : {137ULL, 42ULL}) {
      auto c = Desk::base(Operation::Add, seed);
      c.train.lr = lr;
      by_lr[lr].push_back(desk.run(c));
    }
  }

  // 1. grokking and the non-grokking control
  {
    std::string bad;
    for (const auto& r : grok) {
      const bool ok = r.summary.grok_step && *r.summary.grok_step >= 1000 && *r.summary.grok_step <= 8000 &&
                      read_early_stop(r.dir) && r.summary.final_test_acc >= 0.98;
      if (!ok) bad += " " + r.summary.run_id + "(grok " + fmt_opt(r.summary.grok_step) + ")";
    }
    double worst_ng = 0.0;
    for (const auto& r : nongrok) worst_ng = std::max(worst_ng, r.summary.max_test_acc);
    std::vector<double> gs;
    for (const auto& r : grok)
      if (r.summary.grok_step) gs.push_back(double(*r.summary.grok_step));
    const auto [mn, mx] = std::minmax_element(gs.begin(), gs.end());
    rep.line(bad.empty() && worst_ng < 0.80 && gs.size() == grok.size(), "grokking_and_nongrokking",
             std::to_string(gs.size()) + "/12 grok, steps " + (gs.empty() ? "-" : num(*mn) + ".." + num(*mx)) +
                 " (in [1000, 8000], >= 0.98 sustained); x2_xy_y2 max test acc " + num(worst_ng) +
                 " over 10k steps (< 0.80)" + (bad.empty() ? "" : "; failing:" + bad));
  }

  // 2. PC1% and null-model z
  {
    double lo = 1e9, hi = -1e9, zmin = 1e9;
    for (const auto& r : grok) {
      const auto rows = read_pca_summary(r.dir / "pca_summary.csv");
      std::vector<double> pc1;
      for (const auto& row : rows) {
        pc1.push_back(row.pc_percent.at(0));
        zmin = std::min(zmin, row.z_score);
      }
      const double m = mean(pc1);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    rep.line(lo >= 60.0 && hi <= 90.0 && zmin > 3.0, "pc1_and_null_z",
             "per-run mean PC1% " + num(lo) + ".." + num(hi) + " (in [60, 90]); min z " + num(zmin) + " (> 3)");
  }

  // 3. invariance and exec/random ratio
  {
    double rho_min = 1.0;
    std::size_t n_ck = 0;
    auto scan = [&](const LoadedRun& r) {
      for (const auto& row : r.defect) {
        if (!std::isfinite(row.rho)) continue;
        rho_min = std::min(rho_min, row.rho);
        ++n_ck;
      }
    };
    for (const auto& r : grok) scan(r);
    for (const auto& r : controls) scan(r);
    for (const auto& [lr, runs] : by_lr)
      for (const auto& r : runs) scan(r);
    double rlo = 1e9, rhi = -1e9;
    std::vector<double> post;
    for (const auto& r : grok) {
      const double v = late_ratio(r);
      rlo = std::min(rlo, std::isfinite(v) ? v : -1.0);
      rhi = std::max(rhi, std::isfinite(v) ? v : 1e9);
      if (!r.defect.empty()) post.push_back(r.defect.back().exec_rand_ratio);
    }
    rep.line(rho_min >= 0.995 && rlo >= 1.3 && rhi <= 4.0, "rho_and_exec_random_ratio",
             "min rho " + num(rho_min, 6) + " over " + std::to_string(n_ck) + " checkpoints (>= 0.995); late pre-grok " +
                 "exec/random " + num(rlo) + ".." + num(rhi) + " (in [1.3, 4.0]); at final checkpoint mean " +
                 num(mean(post)));
  }

  // 4. temporal ordering and defect growth
  {
    std::vector<OnsetReport> reps;
    double gmin = 1e300;
    for (const auto& r : grok) {
      reps.push_back({std::string(op_tag(r.config.op)), r.summary.onset_step, r.summary.grok_step, 0.0});
      gmin = std::min(gmin, r.summary.defect_growth);
    }
    const auto ls = lead_stats(reps);
    double cmax = 0.0;
    for (const auto& r : controls) cmax = std::max(cmax, r.summary.defect_growth);
    const bool ok = ls.n_positive >= 11 && ls.mean_lead >= 300 && ls.mean_lead <= 3000 && gmin >= 100.0 &&
                    cmax <= 100.0;
    rep.line(ok, "onset_lead_and_defect_growth",
             "onset before grok " + std::to_string(ls.n_positive) + "/12 (>= 11); mean lead " + num(ls.mean_lead) +
                 " (in [300, 3000]); growth min " + num(gmin) + "x grokking (>= 100) vs max " + num(cmax) +
                 "x controls (<= 100)");
  }

  // 5. learning-rate sweep and power law
  {
    std::vector<double> gmean, fmean;
    std::string detail;
    bool all_grok = true;
    for (const auto& [lr, runs] : by_lr) {
      std::vector<double> g, f;
      for (const auto& r : runs) {
        if (!r.summary.grok_step) {
          all_grok = false;
          continue;
        }
        g.push_back(double(*r.summary.grok_step));
        if (r.summary.onset_step) {
          f.push_back(double(*r.summary.grok_step - *r.summary.onset_step) / double(*r.summary.grok_step));
        }
      }
      gmean.push_back(mean(g));
      fmean.push_back(mean(f));
      detail += " lr " + num(lr) + ": grok " + num(gmean.back()) + " lead frac " + num(fmean.back()) + ";";
    }
    // by_lr is ascending in lr: grok steps must fall, lead fractions too.
    const bool grok_dec = gmean[0] > gmean[1] && gmean[1] > gmean[2];
    const bool frac_inc = fmean[0] > fmean[1] && fmean[1] > fmean[2];

    std::vector<fs::path> dirs;
    for (const auto& r : grok) dirs.push_back(r.dir);
    for (const auto& [lr, runs] : by_lr)
      for (const auto& r : runs) dirs.push_back(r.dir);
    // the lr=1e-3 cell shares run ids with the baseline grokking runs
    std::sort(dirs.begin(), dirs.end());
    dirs.erase(std::unique(dirs.begin(), dirs.end()), dirs.end());
    const auto analysis = analyze_runs(dirs, desk.root / "analysis");
    const double alpha = analysis.fit ? analysis.fit->alpha : std::nan("");
    const bool ok = all_grok && grok_dec && frac_inc && alpha >= 0.9 && alpha <= 1.6;
    rep.line(ok, "lr_sweep_and_power_law",
             std::string("grok step decreasing in lr ") + (grok_dec ? "yes" : "no") +
                 ", lead fraction increasing as lr falls " + (frac_inc ? "yes" : "no") + ";" + detail + " alpha " +
                 num(alpha) + " (in [0.9, 1.6], n=" + std::to_string(analysis.fit ? analysis.fit->n_points : 0) + ")");
  }

  // 6. interventions
  {
    InterventionGrid pca_grid;
    pca_grid.ops = {Operation::Add, Operation::Sub};
    pca_grid.seeds = kSeeds;
    pca_grid.mode = InterventionMode::SuppressPca;
    pca_grid.levels = {1.0};
    const auto pca_rows = run_intervention_grid(pca_grid, desk.root, desk.opt);
    int n_pca = 0, n_pca_grok = 0;
    for (const auto& r : pca_rows) {
      if (r.mode == "none") continue;
      ++n_pca;
      if (r.grok_step) ++n_pca_grok;
    }

    InterventionGrid rnd = pca_grid;
    rnd.ops = {Operation::Add};
    rnd.mode = InterventionMode::SuppressRandom;
    rnd.levels = {0.5};
    double rnd_dev = 0.0;
    bool rnd_all = true;
    for (const auto& r : run_intervention_grid(rnd, desk.root, desk.opt)) {
      if (r.mode == "none") continue;
      if (!r.grok_step || !r.baseline_grok_step) {
        rnd_all = false;
        continue;
      }
      rnd_dev = std::max(rnd_dev, std::abs(double(*r.grok_step) / double(*r.baseline_grok_step) - 1.0));
    }

    InterventionGrid kick = rnd;
    kick.mode = InterventionMode::KickCommutator;
    kick.levels = {100.0};
    std::vector<double> base, kicked;
    bool kick_all = true;
    for (const auto& r : run_intervention_grid(kick, desk.root, desk.opt)) {
      if (r.mode == "none") {
        if (r.grok_step) base.push_back(double(*r.grok_step));
      } else if (r.grok_step) {
        kicked.push_back(double(*r.grok_step));
      } else {
        kick_all = false;
      }
    }
    const double bmean = mean(base);
    double kick_dev = 0.0;
    for (double k : kicked) kick_dev = std::max(kick_dev, std::abs(k / bmean - 1.0));

    const bool ok = n_pca == 6 && n_pca_grok == 0 && rnd_all && rnd_dev <= 0.20 && kick_all && kick_dev <= 0.25;
    rep.line(ok, "interventions",
             "PCA s=1 grokked " + std::to_string(n_pca_grok) + "/" + std::to_string(n_pca) +
                 " within 3x baseline (0 expected); random s=0.5 max dev " + num(rnd_dev) + (rnd_all ? "" : " (some failed)") +
                 " (<= 0.20); commutator kick x100 max dev " + num(kick_dev) + " from baseline mean " + num(bmean) +
                 (kick_all ? "" : " (some failed)") + " (<= 0.25)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grokgeom acceptance checks"};
  std::string suite = "property";
  std::string root;
  bool verbose = false;
  app.add_option("--suite", suite, "property | desk | all")->check(CLI::IsMember({"property", "desk", "all"}));
  app.add_option("--root", root, "artifact root for desk runs (default $GROKGEOM_ACCEPTANCE_ROOT or ./acceptance_runs)");
  app.add_flag("-v,--verbose", verbose, "per-eval training progress on stderr");
  CLI11_PARSE(app, argc, argv);

  Report rep;
  try {
    if (suite == "property" || suite == "all") {
      gradient_fd(rep);
      commutator_oracle(rep);
      projection_algebra(rep);
      pca_oracle(rep);
      stats_anchors(rep);
    }
    if (suite == "desk" || suite == "all") {
      if (root.empty()) {
        const char* env = std::getenv("GROKGEOM_ACCEPTANCE_ROOT");
        root = env ? env : "acceptance_runs";
      }
      Desk desk{root, {}};
      desk.opt.quiet = !verbose;
      desk_suite(rep, desk);
    }
  } catch (const std::exception& e) {
    std::printf("FAIL  %-34s %s\n", "acceptance_harness", e.what());
    return 2;
  }
  std::printf("%d passed, %d failed\n", rep.passed, rep.failed);
  return rep.failed == 0 ? 0 : 1;
}
