#include "grokgeom/tensor.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <utility>

namespace grokgeom {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

namespace ad {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.index()).requires_grad;
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.index());
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw std::invalid_argument("backward: output must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(out)[0] = 1.0;
  for (std::size_t i = out.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

Var gather_rows(Tape& t, Var table, std::span<const int> indices) {
  const Tensor& tab = t.value(table);
  require(tab.rank() == 2, "gather_rows: table must be 2-D");
  const std::size_t n = tab.dim(0), d = tab.dim(1);
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int r = indices[i];
    if (r < 0 || static_cast<std::size_t>(r) >= n) {
      throw std::out_of_range("gather_rows: index " + std::to_string(r) + " outside [0, " +
                              std::to_string(n) + ")");
    }
    std::copy_n(tab.data().begin() + std::ptrdiff_t(r * d), d, out.data().begin() + std::ptrdiff_t(i * d));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {table}, [table, idx = std::move(idx), d](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = g.data().data() + i * d;
      double* dst = gt.data().data() + std::size_t(idx[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.shape() == bv.shape(), "add: shape mismatch " + shape_string(av.shape()) + " vs " +
                                        shape_string(bv.shape()));
  Tensor out(av.shape());
  out.matrix() = av.matrix() + bv.matrix();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad_buffer(a).matrix() += g.matrix();
    if (tp.requires_grad(b)) tp.grad_buffer(b).matrix() += g.matrix();
  });
}

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  require(wv.rank() == 2, "linear: weight must be 2-D");
  require(xv.cols() == wv.dim(1), "linear: input width " + std::to_string(xv.cols()) +
                                      " does not match weight " + shape_string(wv.shape()));
  require(bv.size() == wv.dim(0), "linear: bias length mismatch");
  Shape shape = xv.shape();
  shape.back() = wv.dim(0);
  Tensor out(shape);
  auto om = out.matrix();
  om.noalias() = xv.matrix() * wv.matrix().transpose();
  om.rowwise() += ConstVectorMap(bv.data().data(), Eigen::Index(bv.size())).transpose();
  return t.record(std::move(out), {x, weight, bias}, [x, weight, bias](Tape& tp, const Tensor& g) {
    const auto gm = g.matrix();
    if (tp.requires_grad(x)) tp.grad_buffer(x).matrix().noalias() += gm * tp.value(weight).matrix();
    if (tp.requires_grad(weight)) {
      tp.grad_buffer(weight).matrix().noalias() += gm.transpose() * tp.value(x).matrix();
    }
    if (tp.requires_grad(bias)) {
      Tensor& gb = tp.grad_buffer(bias);
      VectorMap(gb.data().data(), Eigen::Index(gb.size())) += gm.colwise().sum().transpose();
    }
  });
}

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  // d/dx gelu = cdf(x) + x pdf(x), cached from the forward pass.
  std::vector<double> slope(xv.size());
  const double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    out[i] = v * cdf;
    slope[i] = cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  }
  return t.record(std::move(out), {x}, [x, slope = std::move(slope)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < slope.size(); ++i) gx[i] += g[i] * slope[i];
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gain);
  const Tensor& bv = t.value(bias);
  const std::size_t n = xv.rows(), d = xv.cols();
  require(gv.size() == d && bv.size() == d, "layer_norm: gain/bias length must equal last axis");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    double* xh = xhat.data().data() + r * d;
    double* o = out.data().data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - mean) * inv;
      o[j] = xh[j] * gv[j] + bv[j];
    }
  }
  return t.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](
                      Tape& tp, const Tensor& g) {
                    const Tensor& gv = tp.value(gain);
                    if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
                      Tensor& gg = tp.grad_buffer(gain);
                      Tensor& gb = tp.grad_buffer(bias);
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t j = 0; j < d; ++j) {
                          gg[j] += g[r * d + j] * xhat[r * d + j];
                          gb[j] += g[r * d + j];
                        }
                      }
                    }
                    if (!tp.requires_grad(x)) return;
                    Tensor& gx = tp.grad_buffer(x);
                    std::vector<double> dxhat(d);
                    for (std::size_t r = 0; r < n; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        dxhat[j] = g[r * d + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                      }
                      mean_d /= double(d);
                      mean_dx /= double(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                      }
                    }
                  });
}

Var attention_core(Tape& t, Var qkv, std::size_t n_heads, std::size_t seq_len) {
  const Tensor& in = t.value(qkv);
  const std::size_t n = in.rows();
  require(in.cols() % 3 == 0, "attention: fused projection width must be 3 * d_model");
  const std::size_t d = in.cols() / 3;
  require(n_heads > 0 && d % n_heads == 0,
          "attention: d_model " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) + " heads");
  require(seq_len > 0 && n % seq_len == 0, "attention: rows not divisible by sequence length");
  const std::size_t batch = n / seq_len, dh = d / n_heads, w = 3 * d;
  const double scale = 1.0 / std::sqrt(double(dh));

  Tensor out({n, d});
  // probs[((b * H + h) * S + i) * S + j]
  std::vector<double> probs(batch * n_heads * seq_len * seq_len);
  std::vector<double> scores(seq_len);
  const double* q = in.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* p = probs.data() + (b * n_heads + h) * seq_len * seq_len;
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = q + (b * seq_len + i) * w + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq_len; ++j) {
          const double* kj = q + (b * seq_len + j) * w + d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[i * seq_len + j] = std::exp(scores[j] - mx);
          z += p[i * seq_len + j];
        }
        double* oi = out.data().data() + (b * seq_len + i) * d + h * dh;
        for (std::size_t j = 0; j < seq_len; ++j) {
          p[i * seq_len + j] /= z;
          const double* vj = q + (b * seq_len + j) * w + 2 * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[i * seq_len + j] * vj[c];
        }
      }
    }
  }
  return t.record(std::move(out), {qkv},
                  [qkv, probs = std::move(probs), batch, n_heads, seq_len, d, dh, w, scale](
                      Tape& tp, const Tensor& g) {
                    const double* q = tp.value(qkv).data().data();
                    double* gq = tp.grad_buffer(qkv).data().data();
                    std::vector<double> dp(seq_len * seq_len);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t h = 0; h < n_heads; ++h) {
                        const double* p = probs.data() + (b * n_heads + h) * seq_len * seq_len;
                        for (std::size_t i = 0; i < seq_len; ++i) {
                          const double* gi = g.data().data() + (b * seq_len + i) * d + h * dh;
                          for (std::size_t j = 0; j < seq_len; ++j) {
                            const double* vj = q + (b * seq_len + j) * w + 2 * d + h * dh;
                            double* gvj = gq + (b * seq_len + j) * w + 2 * d + h * dh;
                            double s = 0.0;
                            const double pij = p[i * seq_len + j];
                            for (std::size_t c = 0; c < dh; ++c) {
                              s += gi[c] * vj[c];
                              gvj[c] += pij * gi[c];
                            }
                            dp[i * seq_len + j] = s;
                          }
                        }
                        for (std::size_t i = 0; i < seq_len; ++i) {
                          double row = 0.0;
                          for (std::size_t j = 0; j < seq_len; ++j) row += p[i * seq_len + j] * dp[i * seq_len + j];
                          const double* qi = q + (b * seq_len + i) * w + h * dh;
                          double* gqi = gq + (b * seq_len + i) * w + h * dh;
                          for (std::size_t j = 0; j < seq_len; ++j) {
                            const double ds = p[i * seq_len + j] * (dp[i * seq_len + j] - row) * scale;
                            const double* kj = q + (b * seq_len + j) * w + d + h * dh;
                            double* gkj = gq + (b * seq_len + j) * w + d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) {
                              gqi[c] += ds * kj[c];
                              gkj[c] += ds * qi[c];
                            }
                          }
                        }
                      }
                    }
                  });
}

Var multi_head_attention(Tape& t, Var x, Var in_weight, Var in_bias, Var out_weight, Var out_bias,
                         std::size_t n_heads, std::size_t seq_len) {
  const std::size_t d = t.value(x).cols();
  require(n_heads > 0 && d % n_heads == 0,
          "multi_head_attention: width " + std::to_string(d) + " not divisible by " +
              std::to_string(n_heads) + " heads");
  const Var qkv = linear(t, x, in_weight, in_bias);
  const Var mixed = attention_core(t, qkv, n_heads, seq_len);
  return linear(t, mixed, out_weight, out_bias);
}

Var select_position(Tape& t, Var x, std::size_t seq_len, std::size_t position) {
  const Tensor& xv = t.value(x);
  const std::size_t n = xv.rows(), d = xv.cols();
  require(position < seq_len && n % seq_len == 0, "select_position: bad position or row count");
  const std::size_t batch = n / seq_len;
  Tensor out({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xv.data().begin() + std::ptrdiff_t((b * seq_len + position) * d), d,
                out.data().begin() + std::ptrdiff_t(b * d));
  }
  return t.record(std::move(out), {x}, [x, batch, seq_len, position, d](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < d; ++j) gx[(b * seq_len + position) * d + j] += g[b * d + j];
    }
  });
}

Var cross_entropy_mean(Tape& t, Var logits, std::span<const int> targets) {
  const Tensor& lv = t.value(logits);
  const std::size_t n = lv.rows(), c = lv.cols();
  require(targets.size() == n, "cross_entropy_mean: one target per row required");
  Tensor probs({n, c});
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = targets[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("cross_entropy_mean: target " + std::to_string(y) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    const double* row = lv.data().data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[y];
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - lse);
  }
  std::vector<int> ys(targets.begin(), targets.end());
  return t.record(Tensor({}, {total / double(n)}), {logits},
                  [logits, probs = std::move(probs), ys = std::move(ys), n, c](Tape& tp, const Tensor& g) {
                    Tensor& gl = tp.grad_buffer(logits);
                    const double s = g[0] / double(n);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t j = 0; j < c; ++j) gl[r * c + j] += s * probs[r * c + j];
                      gl[r * c + std::size_t(ys[r])] -= s;
                    }
                  });
}

Var sum_squares(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v * v;
  return t.record(Tensor({}, {s}), {x}, [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * xv[i] * g[0];
  });
}

Var dot(Tape& t, Var x, const Tensor& c) {
  const Tensor& xv = t.value(x);
  require(xv.size() == c.size(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * c[i];
  return t.record(Tensor({}, {s}), {x}, [x, c](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < c.size(); ++i) gx[i] += c[i] * g[0];
  });
}

}  // namespace ad
}  // namespace grokgeom
