#pragma once

#include "grokgeom/params.hpp"
#include "grokgeom/rng.hpp"
#include "grokgeom/tensor.hpp"
#include "grokgeom/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

namespace testutil {

inline grokgeom::Tensor random_tensor(grokgeom::Shape shape, grokgeom::Rng& rng, double scale = 1.0) {
  grokgeom::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Sixth-order central difference of f(i, offset) at offset 0. The wide
/// stencil keeps cancellation noise far below the truncation error, so the
/// estimate stays accurate even for tiny gradient components.
template <class F>
double central_diff6(F&& f, std::size_t i, double h) {
  return (45.0 * (f(i, h) - f(i, -h)) - 9.0 * (f(i, 2 * h) - f(i, -2 * h)) + (f(i, 3 * h) - f(i, -3 * h))) /
         (60.0 * h);
}

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Eigen::MatrixXd vectors;     // columns, matching values
};

/// Cyclic Jacobi rotations; slow but independent of any library solver.
inline SymmetricEigen jacobi_eigen(Eigen::MatrixXd a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= 1e-32 * diag) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  SymmetricEigen out;
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values.push_back(a(order[std::size_t(i)], order[std::size_t(i)]));
    out.vectors.col(i) = v.col(order[std::size_t(i)]);
  }
  return out;
}

/// A small model whose runs finish in well under a second.
inline grokgeom::ModelConfig tiny_model() {
  grokgeom::ModelConfig m;
  m.p = 11;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_ff = 32;
  m.n_layers = 2;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("grokgeom_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
