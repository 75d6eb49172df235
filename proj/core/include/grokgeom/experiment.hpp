#pragma once

#include "grokgeom/intervention.hpp"
#include "grokgeom/probe.hpp"
#include "grokgeom/trainer.hpp"
#include "grokgeom/transition.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grokgeom {

/// Bad configuration key or value; maps to the CLI usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything that determines one training run. Keys accepted by set() are
/// the field names below (see README for the full list).
struct RunConfig {
  Operation op = Operation::Add;
  ModelConfig model;
  TrainConfig train;
  ProbeConfig probe;
  InterventionConfig intervention;
  std::size_t null_trials = 100;

  RunConfig();

  /// Resets the regime-dependent train/model fields to the preset, then
  /// applies the desk budget (fast regime: 20k steps).
  void set_regime(Regime r);
  void set(const std::string& key, const std::string& value);
  /// key = value lines; '#' starts a comment. `regime` is applied first.
  void apply_text(const std::string& text);
  void apply_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
  void validate() const;

  /// Sorted key=value lines covering every field.
  std::string canonical() const;
  std::string run_id() const;
  std::string to_json() const;

  /// Same run with no intervention and probes on: the run whose trajectory
  /// and grok step an intervention is compared against.
  RunConfig baseline() const;
};

enum class RunStatus { Pending, Running, Done, Failed };
std::string_view status_tag(RunStatus s);
std::optional<RunStatus> parse_status(std::string_view tag);

struct RunSummary {
  std::string run_id;
  std::filesystem::path dir;
  RunStatus status = RunStatus::Pending;
  bool skipped = false;  // already done on disk
  std::optional<std::int64_t> grok_step;
  std::optional<std::int64_t> memorization_step;
  std::optional<std::int64_t> onset_step;
  std::int64_t stopped_step = 0;
  double final_test_acc = 0.0;
  double max_test_acc = 0.0;
  double max_defect = 0.0;
  double defect_growth = 0.0;
  std::string failure;
};

struct RunOptions {
  bool force = false;
  bool with_baseline = false;  // run a missing baseline instead of failing
  bool quiet = true;
};

/// Missing or unusable baseline for an intervention run.
class BaselineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// <root>/runs/<run_id>
std::filesystem::path run_directory(const std::filesystem::path& root, const RunConfig& cfg);

/// Trains (or skips a finished run) and writes every artifact.
RunSummary execute_run(const RunConfig& cfg, const std::filesystem::path& root, const RunOptions& opt = {});

/// Reads run.json of a run directory.
std::optional<RunSummary> load_summary(const std::filesystem::path& dir);

struct LoadedRun {
  std::filesystem::path dir;
  RunConfig config;
  RunSummary summary;
  std::vector<DefectRow> defect;
};
LoadedRun load_run(const std::filesystem::path& dir);
std::vector<DefectRow> read_defect_csv(const std::filesystem::path& path);

struct PcaRow {
  std::string key;
  std::size_t layer = 0;
  std::string matrix;
  std::vector<double> pc_percent;  // PC1..PC5
  double z_score = 0.0;
  double null_mean = 0.0;
  double null_std = 0.0;
  std::size_t n_snapshots = 0;
};
std::vector<PcaRow> pca_summary(const TrajectoryLog& log, std::size_t null_trials, std::uint64_t seed);
std::string pca_summary_csv(const std::vector<PcaRow>& rows);
std::vector<PcaRow> read_pca_summary(const std::filesystem::path& path);

struct SweepSpec {
  std::vector<Operation> ops{Operation::Add};
  std::vector<double> lrs{1e-3};
  std::vector<double> weight_decays{1.0};
  std::vector<std::uint64_t> seeds{137, 42, 7};
  Regime regime = Regime::Fast;
  std::optional<std::int64_t> max_steps;
  std::size_t parallel = 1;
  std::vector<std::pair<std::string, std::string>> overrides;

  std::vector<RunConfig> expand() const;
  std::string sweep_id() const;
};

struct SweepResult {
  std::filesystem::path dir;
  std::vector<RunSummary> runs;
  std::size_t n_failed = 0;
};

/// Runs every grid cell (skipping finished ones), keeping
/// <root>/sweeps/<id>/manifest.json current, then writes the analysis files.
SweepResult run_sweep(const SweepSpec& spec, const std::filesystem::path& root, const RunOptions& opt = {});

struct AnalysisResult {
  std::vector<OnsetReport> reports;
  LeadStats leads;
  std::optional<double> sign_p;
  std::optional<PowerLawFit> fit;
  std::string fit_error;
};

/// Transition analysis over completed, intervention-free runs. Writes
/// analysis.json, phase_diagram.csv and scaling.csv into out_dir.
AnalysisResult analyze_runs(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

struct DoseRow {
  std::string op;
  std::string mode;
  double level = 0.0;  // s or kick gain
  std::uint64_t seed = 0;
  std::optional<std::int64_t> grok_step;
  std::optional<std::int64_t> baseline_grok_step;
  std::int64_t stopped_step = 0;
};

struct InterventionGrid {
  std::vector<Operation> ops{Operation::Add};
  std::vector<std::uint64_t> seeds{137, 42, 7};
  InterventionMode mode = InterventionMode::SuppressPca;
  std::vector<double> levels{1.0};  // strengths or gains
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string grid_id() const;
};

/// Runs baselines as needed, then each (op, seed, level) intervention;
/// writes dose_response.csv under <root>/interventions/<id>/.
std::vector<DoseRow> run_intervention_grid(const InterventionGrid& grid, const std::filesystem::path& root,
                                           const RunOptions& opt = {});
std::string dose_response_csv(const std::vector<DoseRow>& rows);

}  // namespace grokgeom
