#include "grokgeom/params.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace grokgeom {

std::size_t ParamLayout::add(std::string name, Shape shape) {
  if (find(name)) throw std::invalid_argument("ParamLayout: duplicate entry " + name);
  const std::size_t size = shape_size(shape);
  entries_.push_back({std::move(name), total_, std::move(shape)});
  total_ += size;
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (total_ != other.total_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.offset != b.offset || a.shape != b.shape) return false;
  }
  return true;
}

std::string ParamLayout::to_json() const {
  nlohmann::json j;
  j["total_size"] = total_;
  auto& arr = j["entries"] = nlohmann::json::array();
  for (const auto& e : entries_) arr.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
  return j.dump(2);
}

ParamLayout ParamLayout::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ParamLayout layout;
  for (const auto& e : j.at("entries")) {
    const std::size_t idx = layout.add(e.at("name").get<std::string>(), e.at("shape").get<Shape>());
    if (layout.entry(idx).offset != e.at("offset").get<std::size_t>()) {
      throw std::runtime_error("ParamLayout: non-contiguous offset for " + layout.entry(idx).name);
    }
  }
  if (layout.total_size() != j.at("total_size").get<std::size_t>()) {
    throw std::runtime_error("ParamLayout: total_size does not match entries");
  }
  return layout;
}

std::span<double> ParamVector::block(std::size_t entry) {
  const auto& e = layout->entry(entry);
  return std::span<double>(values).subspan(e.offset, e.size());
}

std::span<const double> ParamVector::block(std::size_t entry) const {
  const auto& e = layout->entry(entry);
  return std::span<const double>(values).subspan(e.offset, e.size());
}

Tensor ParamVector::unflatten(std::size_t entry) const {
  const auto b = block(entry);
  return Tensor(layout->entry(entry).shape, std::vector<double>(b.begin(), b.end()));
}

void ParamVector::flatten_into(std::size_t entry, const Tensor& t) {
  const auto b = block(entry);
  if (t.shape() != layout->entry(entry).shape) {
    throw std::invalid_argument("flatten_into: shape mismatch for " + layout->entry(entry).name);
  }
  std::copy(t.data().begin(), t.data().end(), b.begin());
}

ValueAndGrad value_and_grad(const LossFn& loss, const ParamVector& theta) {
  ad::Tape tape;
  ParamVars vars;
  const auto& entries = theta.layout->entries();
  vars.vars.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) vars.vars.push_back(tape.parameter(theta.unflatten(i)));
  const ad::Var out = loss(tape, vars);
  const double value = tape.value(out)[0];
  if (!std::isfinite(value)) throw DivergenceError("non-finite loss");
  tape.backward(out);
  ValueAndGrad result{value, std::vector<double>(theta.size(), 0.0)};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Tensor& g = tape.grad(vars[i]);
    if (!g.empty()) std::copy(g.data().begin(), g.data().end(), result.grad.begin() + std::ptrdiff_t(entries[i].offset));
  }
  return result;
}

double value_only(const LossFn& loss, const ParamVector& theta) {
  ad::Tape tape;
  ParamVars vars;
  for (std::size_t i = 0; i < theta.layout->entries().size(); ++i) {
    vars.vars.push_back(tape.constant(theta.unflatten(i)));
  }
  return tape.value(loss(tape, vars))[0];
}

void write_f64(std::ostream& os, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      std::reverse(std::begin(bytes), std::end(bytes));
      os.write(bytes, sizeof bytes);
    }
  }
  if (!os) throw std::runtime_error("write_f64: stream write failed");
}

std::vector<double> read_f64_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % sizeof(double) != 0) throw std::runtime_error(path.string() + ": size is not a multiple of 8");
  is.seekg(0);
  std::vector<double> values(bytes / sizeof(double));
  is.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
  if constexpr (std::endian::native != std::endian::little) {
    for (double& v : values) {
      char b[sizeof(double)];
      std::memcpy(b, &v, sizeof v);
      std::reverse(std::begin(b), std::end(b));
      std::memcpy(&v, b, sizeof v);
    }
  }
  return values;
}

void save_checkpoint(const ParamVector& theta, const std::filesystem::path& stem) {
  {
    std::ofstream js(stem.string() + ".json");
    js << theta.layout->to_json() << '\n';
  }
  std::ofstream bin(stem.string() + ".f64", std::ios::binary);
  write_f64(bin, theta.values);
}

ParamVector load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw std::runtime_error("cannot open " + stem.string() + ".json");
  const std::string text((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
  auto layout = std::make_shared<const ParamLayout>(ParamLayout::from_json(text));
  ParamVector theta(layout);
  theta.values = read_f64_file(stem.string() + ".f64");
  if (theta.values.size() != layout->total_size()) {
    throw std::runtime_error("checkpoint " + stem.string() + ": value count does not match layout");
  }
  return theta;
}

}  // namespace grokgeom
