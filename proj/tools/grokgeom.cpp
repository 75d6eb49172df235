// grokgeom: train, sweep, analyze, intervene, probe and pca subcommands.
#include "grokgeom/experiment.hpp"
#include "grokgeom/io.hpp"
#include "grokgeom/pca.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace grokgeom;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRunFailure = 2;

struct Common {
  std::string out;
  std::string config_file;
  std::vector<std::string> sets;
  bool force = false;
  bool long_runs = false;
  bool verbose = false;
};

fs::path artifact_root(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("GROKGEOM_OUT"); env && *env) return env;
  return "grokgeom_out";
}

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

std::string summary_text(const RunSummary& s) {
  json j = {{"run_id", s.run_id},
            {"dir", s.dir.string()},
            {"status", std::string(status_tag(s.status))},
            {"skipped", s.skipped},
            {"grok_step", s.grok_step ? json(*s.grok_step) : json(nullptr)},
            {"onset_step", s.onset_step ? json(*s.onset_step) : json(nullptr)},
            {"stopped_step", s.stopped_step}};
  if (!s.failure.empty()) j["failure"] = s.failure;
  return j.dump(2);
}

template <class T, class F>
std::vector<T> parse_list(const std::vector<std::string>& items, F parse) {
  std::vector<T> out;
  for (const auto& s : items) out.push_back(parse(s));
  return out;
}

Operation op_or_throw(const std::string& s) {
  const auto op = parse_op(s);
  if (!op) throw ConfigError("unknown operation '" + s + "'");
  return *op;
}

void check_budget(const RunConfig& c, bool long_runs) {
  if (long_runs) return;
  if (c.train.regime == Regime::Slow) throw ConfigError("the slow regime needs --long");
  if (c.train.lr < 3e-4) throw ConfigError("lr < 3e-4 needs --long");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grokking geometry lab: training, commutator probes, trajectory PCA and interventions"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", common.out, "Artifact root (default: $GROKGEOM_OUT or ./grokgeom_out)");
    sub->add_option("--set", common.sets, "Config override key=value (repeatable)");
    sub->add_flag("--force", common.force, "Re-run finished runs");
    sub->add_flag("--long", common.long_runs, "Allow the slow regime and lr < 3e-4");
    sub->add_flag("-v,--verbose", common.verbose, "Progress on stderr");
  };

  // train
  auto* train = app.add_subcommand("train", "Run one training run with probes");
  std::string op = "add", regime;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, wd;
  std::optional<std::int64_t> max_steps;
  bool with_baseline = false;
  train->add_option("--config", common.config_file, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--op", op, "Operation tag");
  train->add_option("--regime", regime, "fast | slow");
  train->add_option("--seed", seed, "Seed");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--wd", wd, "Weight decay");
  train->add_option("--max-steps", max_steps, "Step budget");
  train->add_flag("--with-baseline", with_baseline, "Train a missing intervention baseline first");
  add_common(train);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Grid over operations, learning rates, weight decays and seeds");
  std::vector<std::string> sweep_ops{"add"};
  std::vector<double> sweep_lrs{3e-4, 1e-3, 3e-3}, sweep_wds{1.0};
  std::vector<std::uint64_t> sweep_seeds{137, 42, 7};
  std::size_t parallel = 1;
  sweep->add_option("--ops", sweep_ops, "Operations")->delimiter(',');
  sweep->add_option("--lrs", sweep_lrs, "Learning rates")->delimiter(',');
  sweep->add_option("--wds", sweep_wds, "Weight decays")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Seeds")->delimiter(',');
  sweep->add_option("--regime", regime, "fast | slow");
  sweep->add_option("--max-steps", max_steps, "Per-run step budget");
  sweep->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);
  add_common(sweep);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Onset, lead-time, sign-test and power-law analysis");
  std::vector<std::string> run_dirs;
  std::string analysis_out;
  analyze->add_option("runs", run_dirs, "Run directories (default: every run under the artifact root)");
  analyze->add_option("--to", analysis_out, "Output directory (default: <root>/analysis)");
  add_common(analyze);

  // intervene
  auto* intervene = app.add_subcommand("intervene", "Suppression dose-response or kick grid");
  std::string mode = "suppress_pca";
  std::vector<std::string> iv_ops{"add"};
  std::vector<std::uint64_t> iv_seeds{137, 42, 7};
  std::vector<double> levels{1.0};
  intervene->add_option("--mode", mode, "suppress_pca | suppress_random | kick_commutator | kick_random");
  intervene->add_option("--ops", iv_ops, "Operations")->delimiter(',');
  intervene->add_option("--seeds", iv_seeds, "Seeds")->delimiter(',');
  intervene->add_option("--levels", levels, "Strengths s (suppression) or gains (kicks)")->delimiter(',');
  add_common(intervene);

  // probe
  auto* probe = app.add_subcommand("probe", "One-shot geometry probe on a finished run's checkpoint");
  std::string probe_run;
  std::size_t probe_samples = 9, probe_pcs = 2;
  double probe_eta = 1e-3;
  std::uint64_t probe_seed = 0;
  probe->add_option("--run", probe_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--samples", probe_samples, "Commutator samples");
  probe->add_option("--eta", probe_eta, "Probe step size");
  probe->add_option("--n-pcs", probe_pcs, "PCs per attention matrix in the execution basis");
  probe->add_option("--seed", probe_seed, "Probe RNG seed");

  // pca
  auto* pca_cmd = app.add_subcommand("pca", "Trajectory PCA and null model for a finished run");
  std::string pca_run;
  std::size_t null_trials = 100;
  pca_cmd->add_option("--run", pca_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  pca_cmd->add_option("--null-trials", null_trials, "Random-walk trials")->check(CLI::Range(100, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const RunOptions run_opt{common.force, with_baseline, !common.verbose};
  try {
    const fs::path root = artifact_root(common);
    if (train->parsed()) {
      RunConfig cfg;
      std::vector<std::pair<std::string, std::string>> pairs;
      if (!common.config_file.empty()) {
        cfg.apply_text(read_file(common.config_file));
      }
      if (!regime.empty()) pairs.emplace_back("regime", regime);
      if (train->count("--op")) pairs.emplace_back("op", op);
      if (seed) pairs.emplace_back("seed", std::to_string(*seed));
      if (lr) pairs.emplace_back("lr", fmt_f64(*lr));
      if (wd) pairs.emplace_back("weight_decay", fmt_f64(*wd));
      if (max_steps) pairs.emplace_back("max_steps", std::to_string(*max_steps));
      for (auto& kv : parse_sets(common.sets)) pairs.push_back(kv);
      cfg.apply_pairs(pairs);
      cfg.validate();
      check_budget(cfg, common.long_runs);
      const RunSummary s = execute_run(cfg, root, run_opt);
      std::cout << summary_text(s) << '\n';
      return s.status == RunStatus::Done ? kOk : kRunFailure;
    }

    if (sweep->parsed()) {
      SweepSpec spec;
      spec.ops = parse_list<Operation>(sweep_ops, op_or_throw);
      spec.lrs = sweep_lrs;
      spec.weight_decays = sweep_wds;
      spec.seeds = sweep_seeds;
      if (!regime.empty()) {
        const auto r = parse_regime(regime);
        if (!r) throw ConfigError("unknown regime '" + regime + "'");
        spec.regime = *r;
      }
      spec.max_steps = max_steps;
      spec.parallel = parallel;
      spec.overrides = parse_sets(common.sets);
      for (const auto& c : spec.expand()) check_budget(c, common.long_runs);
      const SweepResult res = run_sweep(spec, root, run_opt);
      std::cout << "sweep: " << res.dir.string() << "\n";
      for (const auto& r : res.runs) std::cout << summary_text(r) << '\n';
      return res.n_failed == 0 ? kOk : kRunFailure;
    }

    if (analyze->parsed()) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      if (dirs.empty() && fs::exists(root / "runs")) {
        for (const auto& e : fs::directory_iterator(root / "runs")) {
          if (e.is_directory()) dirs.push_back(e.path());
        }
        std::sort(dirs.begin(), dirs.end());
      }
      const fs::path out = analysis_out.empty() ? root / "analysis" : fs::path(analysis_out);
      analyze_runs(dirs, out);
      std::cout << read_file(out / "analysis.json");
      return kOk;
    }

    if (intervene->parsed()) {
      InterventionGrid grid;
      const auto m = parse_intervention(mode);
      if (!m || *m == InterventionMode::None) throw ConfigError("unknown intervention mode '" + mode + "'");
      grid.mode = *m;
      grid.ops = parse_list<Operation>(iv_ops, op_or_throw);
      grid.seeds = iv_seeds;
      grid.levels = levels;
      grid.overrides = parse_sets(common.sets);
      const auto rows = run_intervention_grid(grid, root, run_opt);
      std::cout << dose_response_csv(rows);
      return kOk;
    }

    if (probe->parsed()) {
      const LoadedRun run = load_run(probe_run);
      RunConfig cfg = run.config;
      cfg.probe.n_samples = probe_samples;
      cfg.probe.eta = probe_eta;
      cfg.probe.n_pcs = probe_pcs;
      const Transformer model(cfg.model);
      const DatasetSplit data = build_dataset(cfg.op, cfg.model.p, cfg.train.train_frac, cfg.train.seed);
      const ParamVector theta = load_checkpoint(fs::path(probe_run) / "checkpoint");
      const TrajectoryLog log = TrajectoryLog::load(fs::path(probe_run) / "snapshots");
      Rng rng = Rng::stream(probe_seed ? probe_seed : cfg.train.seed, "probe-cli");
      const auto m = measure_checkpoint(model, data, theta, log, cfg.probe, rng);
      auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
      json samples = json::array();
      for (const auto& s : m.defect.samples) {
        samples.push_back({{"defect", num(s.defect)}, {"valid", s.valid}, {"step_norm_a", s.step_norm_a},
                           {"step_norm_b", s.step_norm_b}});
      }
      json j = {{"run_id", run.summary.run_id},
                {"D_med", num(m.row.d_med)},
                {"rho", num(m.row.rho)},
                {"exec_frac", num(m.row.exec_frac)},
                {"rand_frac", num(m.row.rand_frac)},
                {"exec_rand_ratio", num(m.row.exec_rand_ratio)},
                {"basis_k", m.row.basis_k},
                {"n_valid_samples", m.row.n_valid},
                {"flagged", m.row.flagged},
                {"samples", samples}};
      std::cout << j.dump(2) << '\n';
      return kOk;
    }

    if (pca_cmd->parsed()) {
      const LoadedRun run = load_run(pca_run);
      const TrajectoryLog log = TrajectoryLog::load(fs::path(pca_run) / "snapshots");
      std::cout << pca_summary_csv(pca_summary(log, null_trials, run.config.train.seed));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailure;
  }
  return kUsage;
}
