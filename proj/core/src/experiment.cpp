#include "grokgeom/experiment.hpp"

#include "grokgeom/io.hpp"
#include "grokgeom/pca.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace grokgeom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid number for '" + key + "': '" + v + "'");
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  // Accept integral values written in float notation ("2e4").
  const double d = to_double(key, v);
  if (d == std::floor(d) && std::abs(d) < 9e15) return std::int64_t(d);
  throw ConfigError("invalid integer for '" + key + "': '" + v + "'");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const auto x = to_int(key, v);
  if (x < 0) throw ConfigError("'" + key + "' must be non-negative");
  return std::size_t(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
}

std::string hex64(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

// Typed view of every field; canonical text and JSON are both derived from it.
std::vector<std::pair<std::string, json>> config_fields(const RunConfig& c) {
  const auto& t = c.train;
  const auto& m = c.model;
  const auto& p = c.probe;
  const auto& i = c.intervention;
  std::vector<std::pair<std::string, json>> fields{
      {"op", std::string(op_tag(c.op))},
      {"regime", std::string(regime_tag(t.regime))},
      {"seed", t.seed},
      {"lr", t.lr},
      {"weight_decay", t.weight_decay},
      {"beta1", t.beta1},
      {"beta2", t.beta2},
      {"adam_eps", t.adam_eps},
      {"batch_size", t.batch_size},
      {"clip_norm", t.clip_norm},
      {"max_steps", t.max_steps},
      {"eval_interval", t.eval_interval},
      {"snapshot_interval", t.snapshot_interval},
      {"train_frac", t.train_frac},
      {"grok_threshold", t.grok_threshold},
      {"stop_threshold", t.stop_threshold},
      {"stop_consecutive", t.stop_consecutive},
      {"memorization_threshold", t.memorization_threshold},
      {"p", m.p},
      {"d_model", m.d_model},
      {"n_heads", m.n_heads},
      {"d_ff", m.d_ff},
      {"n_layers", m.n_layers},
      {"ln_eps", m.ln_eps},
      {"embed_std", m.embed_std},
      {"probe", p.enabled},
      {"probe_interval", p.interval},
      {"probe_samples", p.n_samples},
      {"probe_eta", p.eta},
      {"probe_batch_size", p.batch_size},
      {"probe_n_pcs", p.n_pcs},
      {"probe_n_rand", p.n_rand},
      {"probe_n_align", p.n_align},
      {"probe_alignment", p.alignment},
      {"onset_baseline_n", p.onset.baseline_n},
      {"onset_multiplier", p.onset.multiplier},
      {"onset_floor", p.onset.abs_floor},
      {"intervention", std::string(intervention_tag(i.mode))},
      {"strength", i.strength},
      {"kick_gain", i.kick_gain},
      {"start_step", i.start_step},
      {"refresh_interval", i.refresh_interval},
      {"basis_rank", i.basis_rank},
      {"basis_pcs", i.n_pcs},
      {"kick_eta", i.probe_eta},
      {"kick_batch_size", i.batch_size},
      {"baseline_factor", i.baseline_factor},
      {"null_trials", c.null_trials},
  };
  // Only kick runs carry the scale, so ids of all other runs are unaffected by it.
  if (i.is_kick()) fields.emplace_back("kick_scale", std::string(kick_scale_tag(i.kick_scale)));
  return fields;
}

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_float()) return fmt_f64(v.get<double>());
  return v.dump();
}

json opt_json(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }
std::optional<std::int64_t> json_opt(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::int64_t>();
}
json num_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double json_num(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return kNaN;
  return j[key].get<double>();
}

json summary_json(const RunSummary& s) {
  return {{"run_id", s.run_id},
          {"status", std::string(status_tag(s.status))},
          {"grok_step", opt_json(s.grok_step)},
          {"memorization_step", opt_json(s.memorization_step)},
          {"onset_step", opt_json(s.onset_step)},
          {"stopped_step", s.stopped_step},
          {"final_test_acc", num_json(s.final_test_acc)},
          {"max_test_acc", num_json(s.max_test_acc)},
          {"max_defect", num_json(s.max_defect)},
          {"defect_growth", num_json(s.defect_growth)},
          {"failure", s.failure}};
}

RunSummary summary_from_json(const json& j, const fs::path& dir) {
  RunSummary s;
  s.dir = dir;
  s.run_id = j.value("run_id", std::string());
  s.status = parse_status(j.value("status", std::string("pending"))).value_or(RunStatus::Pending);
  s.grok_step = json_opt(j, "grok_step");
  s.memorization_step = json_opt(j, "memorization_step");
  s.onset_step = json_opt(j, "onset_step");
  s.stopped_step = j.value("stopped_step", std::int64_t(0));
  s.final_test_acc = json_num(j, "final_test_acc");
  s.max_test_acc = json_num(j, "max_test_acc");
  s.max_defect = json_num(j, "max_defect");
  s.defect_growth = json_num(j, "defect_growth");
  s.failure = j.value("failure", std::string());
  return s;
}

void write_status(const fs::path& dir, const RunSummary& s) {
  write_file_atomic(dir / "run.json", summary_json(s).dump(2) + "\n");
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "step,train_loss,train_acc,test_loss,test_acc\n";
  for (const auto& r : rows) {
    os << r.step << ',' << fmt_f64(r.train_loss) << ',' << fmt_f64(r.train_acc) << ',' << fmt_f64(r.test_loss)
       << ',' << fmt_f64(r.test_acc) << '\n';
  }
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_field(const std::string& s) {
  if (s.empty()) return kNaN;
  return std::strtod(s.c_str(), nullptr);
}

struct DefectStats {
  double max_defect = kNaN;
  double growth = kNaN;
  OnsetDetection onset;
  bool has_onset_eval = false;
};

DefectStats defect_stats(const std::vector<DefectRow>& rows, const OnsetRule& rule) {
  DefectStats s;
  std::vector<std::int64_t> steps;
  std::vector<double> values;
  for (const auto& r : rows) {
    if (std::isfinite(r.d_med)) {
      steps.push_back(r.step);
      values.push_back(r.d_med);
    }
  }
  if (values.empty()) return s;
  s.max_defect = *std::max_element(values.begin(), values.end());
  if (values.size() >= rule.baseline_n) {
    s.onset = detect_onset(steps, values, rule);
    s.has_onset_eval = true;
    if (s.onset.baseline > 0.0) s.growth = s.max_defect / s.onset.baseline;
  }
  return s;
}

class ProgressHook : public TrainingHook {
 public:
  explicit ProgressHook(std::string id) : id_(std::move(id)) {}
  void after_eval(Trainer& t, const MetricsRow& row) override {
    if (row.step % 1000 == 0 || t.grokked_this_step()) {
      std::fprintf(stderr, "[%s] step %lld train_acc %.4f test_acc %.4f test_loss %.4f\n", id_.c_str(),
                   static_cast<long long>(row.step), row.train_acc, row.test_acc, row.test_loss);
    }
  }

 private:
  std::string id_;
};

}  // namespace

// ---------------------------------------------------------------- RunConfig

RunConfig::RunConfig() { set_regime(Regime::Fast); }

void RunConfig::set_regime(Regime r) {
  const auto seed = train.seed;
  train = regime_preset(r);
  train.seed = seed;
  model.n_layers = regime_model(r).n_layers;
  if (r == Regime::Fast) {
    train.max_steps = 20000;
    probe.interval = 100;
  } else {
    train.snapshot_interval = 1000;
    probe.interval = 1000;
  }
}

void RunConfig::set(const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string v = trim(value_in);
  auto& t = train;
  auto& m = model;
  auto& p = probe;
  auto& i = intervention;
  if (key == "op") {
    const auto o = parse_op(v);
    if (!o) throw ConfigError("unknown operation '" + v + "'");
    op = *o;
  } else if (key == "regime") {
    const auto r = parse_regime(v);
    if (!r) throw ConfigError("unknown regime '" + v + "'");
    set_regime(*r);
  } else if (key == "seed") {
    t.seed = std::uint64_t(to_int(key, v));
  } else if (key == "lr") {
    t.lr = to_double(key, v);
  } else if (key == "weight_decay" || key == "wd") {
    t.weight_decay = to_double(key, v);
  } else if (key == "beta1") {
    t.beta1 = to_double(key, v);
  } else if (key == "beta2") {
    t.beta2 = to_double(key, v);
  } else if (key == "adam_eps") {
    t.adam_eps = to_double(key, v);
  } else if (key == "batch_size") {
    t.batch_size = to_size(key, v);
  } else if (key == "clip_norm") {
    t.clip_norm = to_double(key, v);
  } else if (key == "max_steps") {
    t.max_steps = to_int(key, v);
  } else if (key == "eval_interval") {
    t.eval_interval = to_int(key, v);
  } else if (key == "snapshot_interval") {
    t.snapshot_interval = to_int(key, v);
  } else if (key == "train_frac") {
    t.train_frac = to_double(key, v);
  } else if (key == "grok_threshold") {
    t.grok_threshold = to_double(key, v);
  } else if (key == "stop_threshold") {
    t.stop_threshold = to_double(key, v);
  } else if (key == "stop_consecutive") {
    t.stop_consecutive = int(to_int(key, v));
  } else if (key == "memorization_threshold") {
    t.memorization_threshold = to_double(key, v);
  } else if (key == "p") {
    m.p = int(to_int(key, v));
  } else if (key == "d_model") {
    m.d_model = to_size(key, v);
  } else if (key == "n_heads") {
    m.n_heads = to_size(key, v);
  } else if (key == "d_ff") {
    m.d_ff = to_size(key, v);
  } else if (key == "n_layers") {
    m.n_layers = to_size(key, v);
  } else if (key == "ln_eps") {
    m.ln_eps = to_double(key, v);
  } else if (key == "embed_std") {
    m.embed_std = to_double(key, v);
  } else if (key == "probe") {
    p.enabled = to_bool(key, v);
  } else if (key == "probe_interval") {
    p.interval = to_int(key, v);
  } else if (key == "probe_samples") {
    p.n_samples = to_size(key, v);
  } else if (key == "probe_eta") {
    p.eta = to_double(key, v);
  } else if (key == "probe_batch_size") {
    p.batch_size = to_size(key, v);
  } else if (key == "probe_n_pcs") {
    p.n_pcs = to_size(key, v);
  } else if (key == "probe_n_rand") {
    p.n_rand = to_size(key, v);
  } else if (key == "probe_n_align") {
    p.n_align = to_size(key, v);
  } else if (key == "probe_alignment") {
    p.alignment = to_bool(key, v);
  } else if (key == "onset_baseline_n") {
    p.onset.baseline_n = to_size(key, v);
  } else if (key == "onset_multiplier") {
    p.onset.multiplier = to_double(key, v);
  } else if (key == "onset_floor") {
    p.onset.abs_floor = to_double(key, v);
  } else if (key == "intervention") {
    const auto mode = parse_intervention(v);
    if (!mode) throw ConfigError("unknown intervention '" + v + "'");
    i.mode = *mode;
  } else if (key == "strength") {
    i.strength = to_double(key, v);
  } else if (key == "kick_gain") {
    i.kick_gain = to_double(key, v);
  } else if (key == "kick_scale") {
    const auto scale = parse_kick_scale(v);
    if (!scale) throw ConfigError("unknown kick_scale '" + v + "' (grad_step or update)");
    i.kick_scale = *scale;
  } else if (key == "start_step") {
    i.start_step = to_int(key, v);
  } else if (key == "refresh_interval") {
    i.refresh_interval = to_int(key, v);
  } else if (key == "basis_rank") {
    i.basis_rank = to_size(key, v);
  } else if (key == "basis_pcs") {
    i.n_pcs = to_size(key, v);
  } else if (key == "kick_eta") {
    i.probe_eta = to_double(key, v);
  } else if (key == "kick_batch_size") {
    i.batch_size = to_size(key, v);
  } else if (key == "baseline_factor") {
    i.baseline_factor = to_double(key, v);
  } else if (key == "null_trials") {
    null_trials = to_size(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::apply_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  for (const auto& [k, v] : pairs) {
    if (trim(k) == "regime") set(k, v);
  }
  for (const auto& [k, v] : pairs) {
    if (trim(k) != "regime") set(k, v);
  }
}

void RunConfig::apply_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  apply_pairs(pairs);
}

void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
    intervention.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(train.train_frac > 0.0 && train.train_frac < 1.0)) throw ConfigError("train_frac must be in (0, 1)");
  if (probe.n_samples == 0 || probe.batch_size == 0) throw ConfigError("probe sizes must be positive");
  if (!(probe.eta > 0.0)) throw ConfigError("probe_eta must be positive");
  if (probe.interval < 0) throw ConfigError("probe_interval must be >= 0");
  if (probe.onset.baseline_n == 0) throw ConfigError("onset_baseline_n must be positive");
  if (null_trials < 100) throw ConfigError("null_trials must be >= 100");
}

std::string RunConfig::canonical() const {
  auto fields = config_fields(*this);
  std::sort(fields.begin(), fields.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out;
  for (const auto& [k, v] : fields) out += k + " = " + json_scalar_text(v) + "\n";
  return out;
}

std::string RunConfig::run_id() const {
  std::string id = std::string(op_tag(op)) + "_" + std::string(regime_tag(train.regime)) + "_s" +
                   std::to_string(train.seed);
  if (intervention.mode != InterventionMode::None) id += "_" + std::string(intervention_tag(intervention.mode));
  return id + "_" + hex64(fnv1a64(canonical())).substr(0, 12);
}

std::string RunConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : config_fields(*this)) j[k] = v;
  j["run_id"] = run_id();
  return j.dump(2) + "\n";
}

RunConfig RunConfig::baseline() const {
  RunConfig b = *this;
  b.intervention = InterventionConfig{};
  b.probe.enabled = true;
  return b;
}

std::string_view status_tag(RunStatus s) {
  switch (s) {
    case RunStatus::Pending: return "pending";
    case RunStatus::Running: return "running";
    case RunStatus::Done: return "done";
    case RunStatus::Failed: return "failed";
  }
  return "pending";
}

std::optional<RunStatus> parse_status(std::string_view tag) {
  for (auto s : {RunStatus::Pending, RunStatus::Running, RunStatus::Done, RunStatus::Failed}) {
    if (status_tag(s) == tag) return s;
  }
  return std::nullopt;
}

fs::path run_directory(const fs::path& root, const RunConfig& cfg) { return root / "runs" / cfg.run_id(); }

std::optional<RunSummary> load_summary(const fs::path& dir) {
  const auto path = dir / "run.json";
  if (!fs::exists(path)) return std::nullopt;
  try {
    return summary_from_json(json::parse(read_file(path)), dir);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

// ------------------------------------------------------------------- PCA

std::vector<PcaRow> pca_summary(const TrajectoryLog& log, std::size_t null_trials, std::uint64_t seed) {
  std::vector<PcaRow> rows;
  for (const auto& track : log.tracks()) {
    if (track.n_snapshots() < 2) continue;
    PcaRow row;
    row.key = track.view.key();
    row.layer = track.view.layer;
    row.matrix = std::string(attn_matrix_name(track.view.name));
    row.n_snapshots = track.n_snapshots();
    const PcaResult r = pca(trajectory_matrix(track), 5);
    for (std::size_t k = 0; k < 5; ++k) row.pc_percent.push_back(r.pc_percent(k));
    const auto norms = step_norms(track);
    const auto null = random_walk_null(r.pc1_percent(), norms, track.dim(), null_trials, seed ^ fnv1a64(row.key));
    row.z_score = null.degenerate ? kNaN : null.z_score;
    row.null_mean = null.null_mean;
    row.null_std = null.null_std;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string pca_summary_csv(const std::vector<PcaRow>& rows) {
  std::ostringstream os;
  os << "layer,matrix,PC1,PC2,PC3,PC4,PC5,z_score,null_mean,null_std,n_snapshots\n";
  for (const auto& r : rows) {
    os << r.layer << ',' << r.matrix;
    for (double x : r.pc_percent) os << ',' << fmt_f64(x);
    os << ',' << fmt_f64(r.z_score) << ',' << fmt_f64(r.null_mean) << ',' << fmt_f64(r.null_std) << ','
       << r.n_snapshots << '\n';
  }
  return os.str();
}

std::vector<PcaRow> read_pca_summary(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  std::vector<PcaRow> rows;
  while (std::getline(is, line)) {
    const auto f = split_csv_line(line);
    if (f.size() < 11) continue;
    PcaRow r;
    r.layer = std::size_t(std::stoul(f[0]));
    r.matrix = f[1];
    r.key = "L" + f[0] + "." + f[1];
    for (int k = 0; k < 5; ++k) r.pc_percent.push_back(parse_field(f[2 + k]));
    r.z_score = parse_field(f[7]);
    r.null_mean = parse_field(f[8]);
    r.null_std = parse_field(f[9]);
    r.n_snapshots = std::size_t(std::stoul(f[10]));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<DefectRow> read_defect_csv(const fs::path& path) {
  std::vector<DefectRow> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto f = split_csv_line(line);
    if (f.size() < 8) continue;
    DefectRow r;
    r.step = std::stoll(f[0]);
    r.d_med = parse_field(f[1]);
    r.rho = parse_field(f[2]);
    r.exec_frac = parse_field(f[3]);
    r.rand_frac = parse_field(f[4]);
    r.exec_rand_ratio = parse_field(f[5]);
    r.alignment = parse_field(f[6]);
    r.n_valid = std::size_t(std::stoul(f[7]));
    rows.push_back(std::move(r));
  }
  return rows;
}

LoadedRun load_run(const fs::path& dir) {
  LoadedRun r;
  r.dir = dir;
  r.config.apply_text(read_file(dir / "config.txt"));
  const auto s = load_summary(dir);
  if (!s) throw std::runtime_error("no run.json in " + dir.string());
  r.summary = *s;
  r.defect = read_defect_csv(dir / "defect.csv");
  return r;
}

// ------------------------------------------------------------- execution

RunSummary execute_run(const RunConfig& cfg, const fs::path& root, const RunOptions& opt) {
  cfg.validate();
  const fs::path dir = run_directory(root, cfg);
  if (!opt.force) {
    if (auto s = load_summary(dir); s && (s->status == RunStatus::Done || s->status == RunStatus::Failed)) {
      s->skipped = true;
      return *s;
    }
  }

  const DatasetSplit data = build_dataset(cfg.op, cfg.model.p, cfg.train.train_frac, cfg.train.seed);
  const Transformer model(cfg.model);
  TrainConfig tc = cfg.train;
  const auto& iv = cfg.intervention;

  // Intervention runs need their baseline first.
  std::optional<FrozenBasis> basis;
  std::optional<RunSummary> base_summary;
  std::string base_id;
  if (iv.mode != InterventionMode::None) {
    const RunConfig base = cfg.baseline();
    base_id = base.run_id();
    base_summary = load_summary(run_directory(root, base));
    if (!base_summary || base_summary->status != RunStatus::Done) {
      if (!opt.with_baseline) {
        throw BaselineError("baseline run " + base_id + " not found under " + root.string() +
                            " (run it first or pass --with-baseline)");
      }
      RunOptions bopt = opt;
      bopt.force = false;
      base_summary = execute_run(base, root, bopt);
      if (base_summary->status != RunStatus::Done) throw BaselineError("baseline run " + base_id + " failed");
    }
    if (iv.is_suppression()) {
      if (!base_summary->grok_step) throw BaselineError("baseline run " + base_id + " never grokked");
      const auto cap = std::int64_t(std::ceil(iv.baseline_factor * double(*base_summary->grok_step)));
      tc.max_steps = std::min(tc.max_steps, cap);
      if (iv.mode == InterventionMode::SuppressPca) {
        const auto log = TrajectoryLog::load(run_directory(root, base) / "snapshots");
        basis = phase1_basis(log, model.param_count(), iv.n_pcs);
      } else {
        basis = random_frozen_basis(model.param_count(), iv.basis_rank, cfg.train.seed);
      }
    }
  }

  fs::create_directories(dir);
  write_file_atomic(dir / "config.txt", cfg.canonical());
  write_file_atomic(dir / "config.json", cfg.to_json());
  RunSummary summary;
  summary.run_id = cfg.run_id();
  summary.dir = dir;
  summary.status = RunStatus::Running;
  write_status(dir, summary);

  Trainer trainer(model, data, tc);
  DefectProbe probe(cfg.probe, cfg.train.seed);
  if (cfg.probe.enabled) trainer.add_hook(probe);
  std::optional<SuppressionHook> suppress;
  std::optional<KickHook> kick;
  if (basis) {
    suppress.emplace(*basis, iv.strength, iv.start_step);
    trainer.add_hook(*suppress);
  }
  if (iv.is_kick()) {
    kick.emplace(iv, cfg.train.seed);
    trainer.add_hook(*kick);
  }
  ProgressHook progress(summary.run_id);
  if (!opt.quiet) trainer.add_hook(progress);

  const RunRecord rec = trainer.run();

  write_file_atomic(dir / "metrics.csv", metrics_csv(rec.metrics));
  trainer.trajectory().save(dir / "snapshots");
  if (!rec.failed) save_checkpoint(trainer.parameters(), dir / "checkpoint");

  const auto& rows = probe.rows();
  if (cfg.probe.enabled) write_file_atomic(dir / "defect.csv", defect_csv(rows));
  const DefectStats ds = defect_stats(rows, cfg.probe.onset);

  if (trainer.trajectory().n_snapshots() >= 2) {
    write_file_atomic(dir / "pca_summary.csv",
                      pca_summary_csv(pca_summary(trainer.trajectory(), cfg.null_trials, cfg.train.seed)));
  }
  if (trainer.trajectory().n_snapshots() >= 3) {
    std::ostringstream os;
    os << "layer,matrix,step,pc1_percent\n";
    for (const auto& track : trainer.trajectory().tracks()) {
      for (const auto& [step, pc1] : expanding_window_pc1(track, trainer.trajectory().steps())) {
        os << track.view.layer << ',' << attn_matrix_name(track.view.name) << ',' << step << ',' << fmt_f64(pc1)
           << '\n';
      }
    }
    write_file_atomic(dir / "pc1_expanding.csv", os.str());
  }

  json events = {{"run_id", summary.run_id},
                 {"op", std::string(op_tag(cfg.op))},
                 {"seed", cfg.train.seed},
                 {"lr", cfg.train.lr},
                 {"weight_decay", cfg.train.weight_decay},
                 {"grok_step", opt_json(rec.grok_step)},
                 {"memorization_step", opt_json(rec.memorization_step)},
                 {"onset_step", opt_json(ds.onset.onset_step)},
                 {"onset_baseline", num_json(ds.has_onset_eval ? ds.onset.baseline : kNaN)},
                 {"onset_threshold", num_json(ds.has_onset_eval ? ds.onset.threshold : kNaN)},
                 {"stopped_step", rec.stopped_step},
                 {"early_stopped", rec.early_stopped},
                 {"failed", rec.failed},
                 {"failure", rec.failure},
                 {"max_defect", num_json(ds.max_defect)},
                 {"defect_growth", num_json(ds.growth)},
                 {"batch_hash", hex64(rec.batch_hash)}};
  json checkpoints = json::array();
  for (const auto& [tag, step] : probe.checkpoints()) checkpoints.push_back({{"tag", tag}, {"step", step}});
  events["checkpoints"] = checkpoints;
  write_file_atomic(dir / "events.json", events.dump(2) + "\n");

  if (iv.mode != InterventionMode::None) {
    json ij = {{"mode", std::string(intervention_tag(iv.mode))},
               {"strength", iv.strength},
               {"kick_gain", iv.kick_gain},
               {"start_step", iv.start_step},
               {"refresh_interval", iv.refresh_interval},
               {"baseline_run_id", base_id},
               {"baseline_grok_step", opt_json(base_summary ? base_summary->grok_step : std::nullopt)},
               {"max_steps", tc.max_steps},
               {"grok_step", opt_json(rec.grok_step)}};
    if (basis) {
      ij["basis_hash"] = hex64(basis->hash);
      ij["basis_source"] = basis->source == BasisSource::Phase1Pca ? "phase1_pca" : "random";
      ij["basis_rank"] = basis->columns.cols();
    }
    if (kick) {
      ij["kick_scale"] = std::string(kick_scale_tag(iv.kick_scale));
      json kicks = json::array();
      for (const auto& k : kick->events()) {
        kicks.push_back({{"step", k.step}, {"norm", k.norm}, {"applied", k.applied}, {"note", k.note}});
      }
      ij["kicks"] = kicks;
    }
    write_file_atomic(dir / "intervention.json", ij.dump(2) + "\n");
  }

  summary.status = rec.failed ? RunStatus::Failed : RunStatus::Done;
  summary.grok_step = rec.grok_step;
  summary.memorization_step = rec.memorization_step;
  summary.onset_step = ds.onset.onset_step;
  summary.stopped_step = rec.stopped_step;
  summary.failure = rec.failure;
  summary.max_defect = ds.max_defect;
  summary.defect_growth = ds.growth;
  summary.final_test_acc = rec.metrics.empty() ? kNaN : rec.metrics.back().test_acc;
  summary.max_test_acc = 0.0;
  for (const auto& m : rec.metrics) summary.max_test_acc = std::max(summary.max_test_acc, m.test_acc);
  write_status(dir, summary);
  return summary;
}

// ---------------------------------------------------------------- sweeps

std::vector<RunConfig> SweepSpec::expand() const {
  std::vector<RunConfig> out;
  for (auto op : ops) {
    for (double lr : lrs) {
      for (double wd : weight_decays) {
        for (auto seed : seeds) {
          RunConfig c;
          c.set_regime(regime);
          c.op = op;
          c.train.lr = lr;
          c.train.weight_decay = wd;
          c.train.seed = seed;
          if (max_steps) c.train.max_steps = *max_steps;
          std::vector<std::pair<std::string, std::string>> rest;
          for (const auto& kv : overrides) {
            if (kv.first != "regime") rest.push_back(kv);
          }
          c.apply_pairs(rest);
          out.push_back(std::move(c));
        }
      }
    }
  }
  return out;
}

std::string SweepSpec::sweep_id() const {
  std::string all;
  for (const auto& c : expand()) all += c.run_id() + "\n";
  return "sweep_" + hex64(fnv1a64(all)).substr(0, 12);
}

SweepResult run_sweep(const SweepSpec& spec, const fs::path& root, const RunOptions& opt) {
  const auto configs = spec.expand();
  if (configs.empty()) throw ConfigError("sweep grid is empty");
  for (const auto& c : configs) c.validate();
  SweepResult result;
  result.dir = root / "sweeps" / spec.sweep_id();
  fs::create_directories(result.dir);
  result.runs.resize(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    result.runs[i].run_id = configs[i].run_id();
    result.runs[i].dir = run_directory(root, configs[i]);
    if (auto s = load_summary(result.runs[i].dir)) result.runs[i].status = s->status;
  }

  std::mutex mu;
  auto write_manifest = [&] {
    json runs = json::array();
    for (const auto& r : result.runs) {
      runs.push_back({{"run_id", r.run_id},
                      {"dir", r.dir.string()},
                      {"status", std::string(status_tag(r.status))},
                      {"grok_step", opt_json(r.grok_step)},
                      {"failure", r.failure}});
    }
    json m = {{"sweep_id", spec.sweep_id()}, {"runs", runs}};
    write_file_atomic(result.dir / "manifest.json", m.dump(2) + "\n");
  };
  write_manifest();

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      {
        std::lock_guard lock(mu);
        if (result.runs[i].status != RunStatus::Done) result.runs[i].status = RunStatus::Running;
        write_manifest();
      }
      RunSummary s;
      try {
        s = execute_run(configs[i], root, opt);
      } catch (const std::exception& e) {
        s.run_id = configs[i].run_id();
        s.dir = run_directory(root, configs[i]);
        s.status = RunStatus::Failed;
        s.failure = e.what();
      }
      std::lock_guard lock(mu);
      result.runs[i] = s;
      write_manifest();
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.parallel, configs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<fs::path> dirs;
  for (const auto& r : result.runs) {
    if (r.status == RunStatus::Failed) ++result.n_failed;
    dirs.push_back(r.dir);
  }
  analyze_runs(dirs, result.dir);
  return result;
}

// -------------------------------------------------------------- analysis

AnalysisResult analyze_runs(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  struct Meta {
    LoadedRun run;
    DefectStats stats;
  };
  std::vector<Meta> runs;
  std::size_t n_excluded = 0;
  for (const auto& d : run_dirs) {
    try {
      LoadedRun r = load_run(d);
      if (r.summary.status != RunStatus::Done || r.config.intervention.mode != InterventionMode::None) {
        ++n_excluded;
        continue;
      }
      DefectStats st = defect_stats(r.defect, r.config.probe.onset);
      runs.push_back({std::move(r), st});
    } catch (const std::exception&) {
      ++n_excluded;
    }
  }
  if (runs.empty()) throw std::runtime_error("analyze: no completed runs");

  AnalysisResult res;
  std::vector<std::pair<double, double>> points;
  json reports = json::array();
  std::ostringstream phase, scaling;
  phase << "lr,op,seed,grokked,grok_step,max_defect,onset_step,lead,weight_decay,run_id\n";
  scaling << "run_id,op,lr,seed,t_grok,lead,lead_fraction,included\n";
  for (const auto& m : runs) {
    const auto& c = m.run.config;
    OnsetReport rep;
    rep.label = std::string(op_tag(c.op));
    rep.onset_step = m.stats.onset.onset_step;
    rep.grok_step = m.run.summary.grok_step;
    rep.baseline = m.stats.has_onset_eval ? m.stats.onset.baseline : kNaN;
    res.reports.push_back(rep);

    json jr = {{"run_id", m.run.summary.run_id},
               {"op", rep.label},
               {"lr", c.train.lr},
               {"weight_decay", c.train.weight_decay},
               {"seed", c.train.seed},
               {"onset_step", opt_json(rep.onset_step)},
               {"grok_step", opt_json(rep.grok_step)},
               {"baseline", num_json(rep.baseline)},
               {"max_defect", num_json(m.stats.max_defect)},
               {"defect_growth", num_json(m.stats.growth)},
               {"lead", rep.has_lead() ? json(rep.lead_time()) : json(nullptr)},
               {"lead_fraction", rep.has_lead() ? json(rep.lead_fraction()) : json(nullptr)}};
    reports.push_back(jr);

    phase << fmt_f64(c.train.lr) << ',' << rep.label << ',' << c.train.seed << ',' << (rep.grok_step ? 1 : 0)
          << ',' << fmt_opt(rep.grok_step) << ',' << fmt_f64(m.stats.max_defect) << ','
          << fmt_opt(rep.onset_step) << ',' << (rep.has_lead() ? std::to_string(rep.lead_time()) : "") << ','
          << fmt_f64(c.train.weight_decay) << ',' << m.run.summary.run_id << '\n';
    if (rep.has_lead()) {
      const bool included = rep.lead_time() > 0;
      scaling << m.run.summary.run_id << ',' << rep.label << ',' << fmt_f64(c.train.lr) << ',' << c.train.seed
              << ',' << *rep.grok_step << ',' << rep.lead_time() << ',' << fmt_f64(rep.lead_fraction()) << ','
              << (included ? 1 : 0) << '\n';
      points.emplace_back(double(*rep.grok_step), double(rep.lead_time()));
    }
  }
  res.leads = lead_stats(res.reports);
  if (!res.leads.leads.empty()) res.sign_p = sign_test(res.leads.leads);
  try {
    res.fit = power_law_fit(points);
  } catch (const std::invalid_argument& e) {
    res.fit_error = e.what();
  }

  // Per (op, lr, wd) cells.
  struct Cell {
    std::size_t n = 0, grokked = 0, with_lead = 0;
    double grok_sum = 0.0, frac_sum = 0.0, defect_sum = 0.0;
  };
  std::map<std::tuple<std::string, double, double>, Cell> cells;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& c = runs[i].run.config;
    auto& cell = cells[{std::string(op_tag(c.op)), c.train.lr, c.train.weight_decay}];
    const auto& rep = res.reports[i];
    ++cell.n;
    if (std::isfinite(runs[i].stats.max_defect)) cell.defect_sum += runs[i].stats.max_defect;
    if (rep.grok_step) {
      ++cell.grokked;
      cell.grok_sum += double(*rep.grok_step);
    }
    if (rep.has_lead()) {
      ++cell.with_lead;
      cell.frac_sum += rep.lead_fraction();
    }
  }
  json jcells = json::array();
  for (const auto& [key, cell] : cells) {
    jcells.push_back({{"op", std::get<0>(key)},
                      {"lr", std::get<1>(key)},
                      {"weight_decay", std::get<2>(key)},
                      {"n", cell.n},
                      {"grok_fraction", double(cell.grokked) / double(cell.n)},
                      {"mean_grok_step", cell.grokked ? json(cell.grok_sum / double(cell.grokked)) : json(nullptr)},
                      {"mean_lead_fraction",
                       cell.with_lead ? json(cell.frac_sum / double(cell.with_lead)) : json(nullptr)},
                      {"mean_max_defect", cell.defect_sum / double(cell.n)}});
  }

  json by_op = json::object();
  for (const auto& [label, g] : res.leads.by_label) {
    by_op[label] = {{"n", g.n},
                    {"mean_lead", g.mean_lead},
                    {"mean_grok_step", g.mean_grok_step},
                    {"mean_lead_fraction", g.mean_lead_fraction}};
  }
  json j = {{"n_runs", runs.size()},
            {"n_excluded", n_excluded},
            {"reports", reports},
            {"lead_stats",
             {{"mean_lead", res.leads.n_with_lead ? json(res.leads.mean_lead) : json(nullptr)},
              {"n_with_lead", res.leads.n_with_lead},
              {"n_positive", res.leads.n_positive},
              {"n_no_grok", res.leads.n_no_grok},
              {"n_onset_no_grok", res.leads.n_onset_no_grok},
              {"n_grok_no_onset", res.leads.n_grok_no_onset},
              {"by_op", by_op}}},
            {"sign_test_p", res.sign_p ? json(*res.sign_p) : json(nullptr)},
            {"cells", jcells}};
  if (res.fit) {
    j["power_law"] = {{"alpha", res.fit->alpha},
                      {"alpha_stderr", res.fit->alpha_stderr},
                      {"intercept", res.fit->intercept},
                      {"r_squared", res.fit->r_squared},
                      {"n_points", res.fit->n_points},
                      {"n_excluded", res.fit->n_excluded}};
  } else {
    j["power_law"] = nullptr;
    j["power_law_error"] = res.fit_error;
  }
  fs::create_directories(out_dir);
  write_file_atomic(out_dir / "analysis.json", j.dump(2) + "\n");
  write_file_atomic(out_dir / "phase_diagram.csv", phase.str());
  write_file_atomic(out_dir / "scaling.csv", scaling.str());
  return res;
}

// ---------------------------------------------------------- interventions

std::string InterventionGrid::grid_id() const {
  std::string s(intervention_tag(mode));
  for (auto op : ops) s += "," + std::string(op_tag(op));
  for (auto seed : seeds) s += "," + std::to_string(seed);
  for (double l : levels) s += "," + fmt_f64(l);
  for (const auto& [k, v] : overrides) s += "," + k + "=" + v;
  return std::string(intervention_tag(mode)) + "_" + hex64(fnv1a64(s)).substr(0, 12);
}

std::vector<DoseRow> run_intervention_grid(const InterventionGrid& grid, const fs::path& root,
                                           const RunOptions& opt) {
  if (grid.mode == InterventionMode::None) throw ConfigError("intervention grid needs a mode other than none");
  std::vector<DoseRow> rows;
  for (auto op : grid.ops) {
    for (auto seed : grid.seeds) {
      RunConfig cfg;
      cfg.apply_pairs(grid.overrides);
      cfg.op = op;
      cfg.train.seed = seed;
      cfg.probe.enabled = false;
      cfg.intervention.mode = grid.mode;

      RunOptions bopt = opt;
      bopt.force = false;
      const RunSummary base = execute_run(cfg.baseline(), root, bopt);
      rows.push_back({std::string(op_tag(op)), "none", 0.0, seed, base.grok_step, base.grok_step, base.stopped_step});

      for (double level : grid.levels) {
        RunConfig c = cfg;
        if (c.intervention.is_suppression()) {
          c.intervention.strength = level;
        } else {
          c.intervention.kick_gain = level;
        }
        RunOptions iopt = opt;
        iopt.with_baseline = true;
        const RunSummary s = execute_run(c, root, iopt);
        rows.push_back({std::string(op_tag(op)), std::string(intervention_tag(grid.mode)), level, seed, s.grok_step,
                        base.grok_step, s.stopped_step});
      }
    }
  }
  const fs::path dir = root / "interventions" / grid.grid_id();
  write_file_atomic(dir / "dose_response.csv", dose_response_csv(rows));
  return rows;
}

std::string dose_response_csv(const std::vector<DoseRow>& rows) {
  std::ostringstream os;
  os << "op,mode,s_or_gain,seed,grok_step_or_null,baseline_grok_step,stopped_step\n";
  for (const auto& r : rows) {
    os << r.op << ',' << r.mode << ',' << fmt_f64(r.level) << ',' << r.seed << ','
       << (r.grok_step ? std::to_string(*r.grok_step) : std::string("null")) << ','
       << fmt_opt(r.baseline_grok_step) << ',' << r.stopped_step << '\n';
  }
  return os.str();
}

}  // namespace grokgeom
