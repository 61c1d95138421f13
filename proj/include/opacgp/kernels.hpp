#pragma once

#include <vector>

#include "opacgp/linalg.hpp"

namespace opacgp {

enum class KernelFamily { rbf };

/// Kernel hyperparameters plus observation noise, all stored as logarithms so
/// that gradient steps are unconstrained.
struct KernelParams {
  KernelFamily family = KernelFamily::rbf;
  Vector log_lengthscales;
  double log_signal_variance = 0.0;
  double log_noise_variance = 0.0;

  static KernelParams rbf(Vector lengthscales, double signal_variance, double noise_variance);

  int dim() const { return static_cast<int>(log_lengthscales.size()); }
  double signal_variance() const;
  double noise_variance() const;
  Vector lengthscales() const;

  /// Throws InputError if any exponentiated field is non-finite or zero.
  void validate() const;

  bool operator==(const KernelParams&) const = default;
};

/// A covariance matrix together with the diagonal jitter that made it factorizable.
struct CovMatrix {
  Matrix entries;
  double jitter_applied = 0.0;
};

/// Jitter ladder, expressed relative to the mean diagonal of the matrix.
struct JitterPolicy {
  std::vector<double> relative_ladder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};
  /// A rung is accepted when every squared pivot exceeds this multiple of the mean diagonal.
  double min_relative_pivot = 1e-12;
};

class CholeskyFactor {
 public:
  CholeskyFactor() = default;
  CholeskyFactor(Matrix lower, double jitter, double relative_jitter)
      : lower_(std::move(lower)), jitter_(jitter), relative_jitter_(relative_jitter) {}

  const Matrix& lower() const { return lower_; }
  double jitter() const { return jitter_; }
  /// jitter() divided by the mean diagonal of the unjittered input.
  double relative_jitter() const { return relative_jitter_; }
  int size() const { return static_cast<int>(lower_.rows()); }

  /// (M + jI)^{-1} B
  Matrix solve(const Matrix& rhs) const;
  Vector solve(const Vector& rhs) const;
  /// L^{-1} B
  Matrix solve_lower(const Matrix& rhs) const;
  Matrix inverse() const;
  double log_det() const;
  CovMatrix reconstruct() const;

 private:
  Matrix lower_;
  double jitter_ = 0.0;
  double relative_jitter_ = 0.0;
};

/// Cholesky factorization of a symmetric matrix, climbing the jitter ladder
/// until the factorization is numerically positive definite. Throws
/// NumericalError listing the attempted ladder when every rung fails.
CholeskyFactor psd_cholesky(const Matrix& m, const JitterPolicy& policy = {});

/// K(A, B) for the RBF kernel: entry (i, j) = sf2 * exp(-0.5 * sum_d ((a_id - b_jd) / l_d)^2).
Matrix kernel_matrix(const KernelParams& params, const PointSet& a, const PointSet& b);

/// Analytic derivatives of K(A, B) with respect to each log-hyperparameter,
/// ordered log_lengthscales[0..D-1], then log_signal_variance.
std::vector<Matrix> kernel_grads(const KernelParams& params, const PointSet& a, const PointSet& b);

/// Gradients accumulated by kernel_vjp.
struct KernelCotangent {
  Vector log_lengthscales;
  double log_signal_variance = 0.0;
};

/// Vector-Jacobian product of K(A, B): given dL/dK (same shape as K) and the
/// already evaluated K, accumulates dL/d(log hyperparameters), dL/dA, dL/dB.
/// Either point cotangent may be null to skip it.
void kernel_vjp(const KernelParams& params, const PointSet& a, const PointSet& b, const Matrix& k,
                const Matrix& k_bar, KernelCotangent& theta_bar, PointSet* a_bar, PointSet* b_bar);

}  // namespace opacgp
