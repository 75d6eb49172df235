#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grokgeom {

enum class Operation { Add, Sub, Mul, X2Y2, X2XYY2, X3XY };

inline constexpr std::array<Operation, 6> kAllOperations = {
    Operation::Add, Operation::Sub, Operation::Mul, Operation::X2Y2, Operation::X2XYY2, Operation::X3XY};

std::string_view op_tag(Operation op);
std::optional<Operation> parse_op(std::string_view tag);
/// Whether the operation groks under the fast-regime hyperparameters.
bool groks_expected(Operation op);

/// f(a, b) mod p.
int apply_op(Operation op, int a, int b, int p);

struct Example {
  int a = 0;
  int b = 0;
  int label = 0;
  bool operator==(const Example&) const = default;
};

struct DatasetSplit {
  Operation op = Operation::Add;
  int p = 97;
  std::vector<Example> train;
  std::vector<Example> test;
};

/// All p^2 pairs in lexicographic order, Fisher-Yates shuffled by `seed`; the
/// first floor(train_frac * p^2) go to train.
DatasetSplit build_dataset(Operation op, int p, double train_frac, std::uint64_t seed);

/// CSV with header a,b,label,split.
std::string dataset_csv(const DatasetSplit& ds);
void write_dataset_csv(const DatasetSplit& ds, const std::filesystem::path& path);

}  // namespace grokgeom
