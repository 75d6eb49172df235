#pragma once

#include "grokgeom/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace grokgeom {

struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  Shape shape;
  std::size_t size() const { return shape_size(shape); }
};

/// Ordered manifest of named parameter blocks packed into one flat vector.
class ParamLayout {
 public:
  /// Appends a block at the current end; returns its index.
  std::size_t add(std::string name, Shape shape);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t total_size() const { return total_; }

  std::string to_json() const;
  static ParamLayout from_json(const std::string& text);

  bool operator==(const ParamLayout&) const;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

/// Flat vector of all model parameters plus its layout.
struct ParamVector {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> l)
      : layout(std::move(l)), values(layout->total_size(), 0.0) {}

  std::size_t size() const { return values.size(); }
  std::span<double> block(std::size_t entry);
  std::span<const double> block(std::size_t entry) const;

  /// Copy of one block as a shaped tensor.
  Tensor unflatten(std::size_t entry) const;
  void flatten_into(std::size_t entry, const Tensor& t);
};

/// Handles to every parameter block registered on a tape, in layout order.
struct ParamVars {
  std::vector<ad::Var> vars;
  ad::Var operator[](std::size_t entry) const { return vars.at(entry); }
};

using LossFn = std::function<ad::Var(ad::Tape&, const ParamVars&)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// Evaluates the loss and its full flat gradient; theta is not modified.
/// Throws DivergenceError on a non-finite loss.
ValueAndGrad value_and_grad(const LossFn& loss, const ParamVector& theta);

/// Loss only; parameters are registered as constants (no backward closures).
double value_only(const LossFn& loss, const ParamVector& theta);

/// Checkpoint: <stem>.json (layout manifest) + <stem>.f64 (little-endian doubles).
void save_checkpoint(const ParamVector& theta, const std::filesystem::path& stem);
ParamVector load_checkpoint(const std::filesystem::path& stem);

// Raw little-endian f64 helpers.
void write_f64(std::ostream& os, std::span<const double> values);
std::vector<double> read_f64_file(const std::filesystem::path& path);

}  // namespace grokgeom
