#include "grokgeom/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace grokgeom {

TrajectoryLog::TrajectoryLog(std::vector<AttentionMatrixView> views) {
  for (auto& v : views) tracks_.push_back(MatrixTrack{v, {}, {}});
}

void TrajectoryLog::set_initial(const ParamVector& theta) {
  for (auto& t : tracks_) {
    const auto src = t.view.in(theta);
    t.initial.assign(src.begin(), src.end());
  }
}

void TrajectoryLog::record(std::int64_t step, const ParamVector& theta) {
  if (!steps_.empty() && step <= steps_.back()) {
    throw std::invalid_argument("TrajectoryLog: snapshot steps must be strictly increasing");
  }
  steps_.push_back(step);
  for (auto& t : tracks_) {
    const auto src = t.view.in(theta);
    t.values.insert(t.values.end(), src.begin(), src.end());
  }
}

const MatrixTrack& TrajectoryLog::track(std::string_view key) const {
  for (const auto& t : tracks_) {
    if (t.view.key() == key) return t;
  }
  throw std::out_of_range("TrajectoryLog: no track " + std::string(key));
}

TrajectoryLog TrajectoryLog::prefix(std::size_t n) const {
  TrajectoryLog out;
  n = std::min(n, steps_.size());
  out.steps_.assign(steps_.begin(), steps_.begin() + std::ptrdiff_t(n));
  for (const auto& t : tracks_) {
    MatrixTrack c{t.view, t.initial, {}};
    c.values.assign(t.values.begin(), t.values.begin() + std::ptrdiff_t(n * t.dim()));
    out.tracks_.push_back(std::move(c));
  }
  return out;
}

namespace {

std::string file_name(const AttentionMatrixView& v) {
  return "L" + std::to_string(v.layer) + "_" + std::string(attn_matrix_name(v.name)) + ".f64";
}

AttnMatrix parse_matrix(const std::string& s) {
  for (AttnMatrix m : kAttnMatrices) {
    if (attn_matrix_name(m) == s) return m;
  }
  throw std::runtime_error("unknown attention matrix " + s);
}

}  // namespace

void TrajectoryLog::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["steps"] = steps_;
  auto& arr = manifest["tracks"] = nlohmann::json::array();
  for (const auto& t : tracks_) {
    const std::string file = file_name(t.view);
    arr.push_back({{"key", t.view.key()},
                   {"layer", t.view.layer},
                   {"name", attn_matrix_name(t.view.name)},
                   {"offset", t.view.offset},
                   {"rows", t.view.rows},
                   {"cols", t.view.cols},
                   {"file", file}});
    std::ofstream os(dir / file, std::ios::binary);
    write_f64(os, t.initial);
    write_f64(os, t.values);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

TrajectoryLog TrajectoryLog::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing " + (dir / "manifest.json").string());
  const auto manifest = nlohmann::json::parse(is);
  TrajectoryLog log;
  log.steps_ = manifest.at("steps").get<std::vector<std::int64_t>>();
  for (const auto& t : manifest.at("tracks")) {
    AttentionMatrixView v{t.at("layer").get<std::size_t>(), parse_matrix(t.at("name").get<std::string>()),
                          t.at("offset").get<std::size_t>(), t.at("rows").get<std::size_t>(),
                          t.at("cols").get<std::size_t>()};
    auto data = read_f64_file(dir / t.at("file").get<std::string>());
    if (data.size() != v.size() * (log.steps_.size() + 1)) {
      throw std::runtime_error("snapshot file " + t.at("file").get<std::string>() + " has unexpected length");
    }
    MatrixTrack track{v, std::vector<double>(data.begin(), data.begin() + std::ptrdiff_t(v.size())), {}};
    track.values.assign(data.begin() + std::ptrdiff_t(v.size()), data.end());
    log.tracks_.push_back(std::move(track));
  }
  return log;
}

}  // namespace grokgeom
