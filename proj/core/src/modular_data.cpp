#include "grokgeom/modular_data.hpp"

#include "grokgeom/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace grokgeom {

std::string_view op_tag(Operation op) {
  switch (op) {
    case Operation::Add: return "add";
    case Operation::Sub: return "sub";
    case Operation::Mul: return "mul";
    case Operation::X2Y2: return "x2_y2";
    case Operation::X2XYY2: return "x2_xy_y2";
    case Operation::X3XY: return "x3_xy";
  }
  return "?";
}

std::optional<Operation> parse_op(std::string_view tag) {
  for (Operation op : kAllOperations) {
    if (op_tag(op) == tag) return op;
  }
  return std::nullopt;
}

bool groks_expected(Operation op) {
  return op == Operation::Add || op == Operation::Sub || op == Operation::Mul || op == Operation::X2Y2;
}

int apply_op(Operation op, int a, int b, int p) {
  const std::int64_t x = a, y = b, m = p;
  std::int64_t v = 0;
  switch (op) {
    case Operation::Add: v = x + y; break;
    case Operation::Sub: v = x - y; break;
    case Operation::Mul: v = x * y; break;
    case Operation::X2Y2: v = x * x + y * y; break;
    case Operation::X2XYY2: v = x * x + x * y + y * y; break;
    case Operation::X3XY: v = (x * x % m) * x + x * y; break;
  }
  return static_cast<int>(((v % m) + m) % m);
}

DatasetSplit build_dataset(Operation op, int p, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("train_frac must be in (0, 1)");
  if (p < 2) throw std::invalid_argument("modulus must be >= 2");
  std::vector<Example> all;
  all.reserve(std::size_t(p) * std::size_t(p));
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) all.push_back({a, b, apply_op(op, a, b, p)});
  }
  Rng rng = Rng::stream(seed, "split");
  for (std::size_t i = all.size() - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_below(i + 1);
    std::swap(all[i], all[j]);
  }
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * double(all.size())));
  DatasetSplit ds{op, p, {}, {}};
  ds.train.assign(all.begin(), all.begin() + std::ptrdiff_t(n_train));
  ds.test.assign(all.begin() + std::ptrdiff_t(n_train), all.end());
  return ds;
}

std::string dataset_csv(const DatasetSplit& ds) {
  std::ostringstream os;
  os << "a,b,label,split\n";
  for (const auto& e : ds.train) os << e.a << ',' << e.b << ',' << e.label << ",train\n";
  for (const auto& e : ds.test) os << e.a << ',' << e.b << ',' << e.label << ",test\n";
  return os.str();
}

void write_dataset_csv(const DatasetSplit& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << dataset_csv(ds);
}

}  // namespace grokgeom
