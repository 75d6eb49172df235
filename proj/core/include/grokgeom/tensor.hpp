#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace grokgeom {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles. Storage is SIMD-aligned so Eigen
/// kernels take the same code path, and round the same way, on every call.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Rows = product of leading axes, cols = last axis (scalars are 1x1).
  std::size_t rows() const;
  std::size_t cols() const;
  MatrixMap matrix() { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
  ConstMatrixMap matrix() const {
    return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())};
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

/// Thrown when a loss or update becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ad {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  std::size_t index() const { return index_; }
  bool valid() const { return index_ != kInvalid; }

 private:
  friend class Tape;
  explicit Var(std::size_t i) : index_(i) {}
  static constexpr std::size_t kInvalid = static_cast<std::size_t>(-1);
  std::size_t index_ = kInvalid;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
/// creation order is a valid topological order for backward().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.index()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.index()).requires_grad; }

  /// Gradient accumulated at v by the last backward(); empty if none reached it.
  const Tensor& grad(Var v) const { return nodes_.at(v.index()).grad; }

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var out);

  // Op-author interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Tensor& grad_buffer(Var v);  // zero-initialized on first access

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Ops. Every op treats its inputs as immutable and records a backward closure
// only when some input requires a gradient.

/// out[i] = table[indices[i]]; table is (n, d), output (len(indices), d).
Var gather_rows(Tape& t, Var table, std::span<const int> indices);
Var add(Tape& t, Var a, Var b);
/// x (n, in) @ weight(out, in)^T + bias(out).
Var linear(Tape& t, Var x, Var weight, Var bias);
/// Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Tape& t, Var x);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps);
/// Scaled dot-product attention over a fused (n, 3d) QKV tensor laid out as
/// [batch * seq_len] rows; no masking. Output (n, d), heads concatenated.
Var attention_core(Tape& t, Var qkv, std::size_t n_heads, std::size_t seq_len);
/// Full MHA block: fused input projection (3d, d) + bias, attention, output
/// projection (d, d) + bias.
Var multi_head_attention(Tape& t, Var x, Var in_weight, Var in_bias, Var out_weight,
                         Var out_bias, std::size_t n_heads, std::size_t seq_len);
/// Rows at sequence position `position` from a (batch * seq_len, d) tensor.
Var select_position(Tape& t, Var x, std::size_t seq_len, std::size_t position);
/// Mean over rows of -log softmax(logits)[target].
Var cross_entropy_mean(Tape& t, Var logits, std::span<const int> targets);
Var sum_squares(Tape& t, Var x);
/// sum(x * c) for a fixed tensor c of the same size.
Var dot(Tape& t, Var x, const Tensor& c);

}  // namespace ad

/// Scalar exact GELU, shared by the op and tests.
double gelu_scalar(double x);

}  // namespace grokgeom
