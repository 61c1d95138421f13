#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "opacgp/data.hpp"
#include "opacgp/kernels.hpp"
#include "opacgp/streaming_gp.hpp"

namespace testing_support {

using opacgp::Matrix;
using opacgp::PointSet;
using opacgp::Vector;

inline PointSet random_points(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d, double lo = -2.0,
                              double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  PointSet p(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) p(i, j) = u(rng);
  return p;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

/// A G^T G + ridge I with G having `rows` standard normal rows.
inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, Eigen::Index rows, double ridge = 0.0) {
  Matrix g(rows, n);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = z(rng);
  Matrix s = g.transpose() * g;
  s.diagonal().array() += ridge;
  return s;
}

inline Matrix random_lower(std::mt19937_64& rng, Eigen::Index n, double offdiag = 0.3, double diag_lo = 0.2,
                           double diag_hi = 1.0) {
  std::normal_distribution<double> z(0.0, offdiag);
  std::uniform_real_distribution<double> u(diag_lo, diag_hi);
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) l(i, j) = z(rng);
    l(i, i) = u(rng);
  }
  return l;
}

inline opacgp::KernelParams random_params(std::mt19937_64& rng, Eigen::Index d) {
  std::uniform_real_distribution<double> ls(0.5, 1.5);
  std::uniform_real_distribution<double> sf(0.5, 2.0);
  std::uniform_real_distribution<double> sn(0.05, 0.5);
  Vector l(d);
  for (Eigen::Index i = 0; i < d; ++i) l[i] = ls(rng);
  return opacgp::KernelParams::rbf(l, sf(rng), sn(rng));
}

inline opacgp::VariationalState random_state(std::mt19937_64& rng, Eigen::Index m, Eigen::Index d) {
  opacgp::VariationalState s;
  s.params = random_params(rng, d);
  s.inducing = random_points(rng, m, d);
  s.mean = random_vector(rng, m);
  s.scale_tril = random_lower(rng, m);
  return s;
}

/// max_i |a_i - b_i| / max(|b_i|, floor)
inline double max_rel_error(const Vector& a, const Vector& b, double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return worst;
}

/// ||a - b|| / ||b||
inline double rel_norm_error(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace testing_support
