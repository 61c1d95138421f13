#include "opacgp/kernels.hpp"

#include <cmath>
#include <sstream>

#include "opacgp/errors.hpp"

namespace opacgp {

KernelParams KernelParams::rbf(Vector lengthscales, double signal_variance, double noise_variance) {
  KernelParams p;
  p.family = KernelFamily::rbf;
  p.log_lengthscales = lengthscales.array().log().matrix();
  p.log_signal_variance = std::log(signal_variance);
  p.log_noise_variance = std::log(noise_variance);
  p.validate();
  return p;
}

double KernelParams::signal_variance() const { return std::exp(log_signal_variance); }
double KernelParams::noise_variance() const { return std::exp(log_noise_variance); }
Vector KernelParams::lengthscales() const { return log_lengthscales.array().exp().matrix(); }

void KernelParams::validate() const {
  auto ok = [](double log_value) {
    const double v = std::exp(log_value);
    return std::isfinite(v) && v > 0.0;
  };
  if (log_lengthscales.size() == 0) throw InputError("kernel params: no lengthscales");
  for (Eigen::Index d = 0; d < log_lengthscales.size(); ++d) {
    if (!ok(log_lengthscales[d])) throw InputError("kernel params: lengthscale not finite/positive");
  }
  if (!ok(log_signal_variance)) throw InputError("kernel params: signal variance not finite/positive");
  if (!ok(log_noise_variance)) throw InputError("kernel params: noise variance not finite/positive");
}

Matrix CholeskyFactor::solve(const Matrix& rhs) const {
  Matrix x = lower_.triangularView<Eigen::Lower>().solve(rhs);
  lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

Vector CholeskyFactor::solve(const Vector& rhs) const {
  Vector x = lower_.triangularView<Eigen::Lower>().solve(rhs);
  lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

Matrix CholeskyFactor::solve_lower(const Matrix& rhs) const {
  return lower_.triangularView<Eigen::Lower>().solve(rhs);
}

Matrix CholeskyFactor::inverse() const {
  return solve(Matrix::Identity(lower_.rows(), lower_.cols()).eval());
}

double CholeskyFactor::log_det() const {
  return 2.0 * lower_.diagonal().array().log().sum();
}

CovMatrix CholeskyFactor::reconstruct() const {
  return {lower_ * lower_.transpose(), jitter_};
}

CholeskyFactor psd_cholesky(const Matrix& m, const JitterPolicy& policy) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw InputError("psd_cholesky: matrix must be square and nonempty");
  }
  const Eigen::Index n = m.rows();
  if (!m.allFinite()) throw NumericalError("psd_cholesky: non-finite entries");
  const double scale = m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(scale, 1e-300)) {
    throw InputError("psd_cholesky: matrix is not symmetric");
  }
  const double mean_diag = m.diagonal().mean();
  if (!(mean_diag > 0.0)) throw NumericalError("psd_cholesky: nonpositive mean diagonal");

  Eigen::LLT<Matrix> llt;
  for (double rel : policy.relative_ladder) {
    const double jitter = rel * mean_diag;
    Matrix shifted = m;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() != Eigen::Success) continue;
    const Matrix lower = llt.matrixL();
    const double min_pivot = lower.diagonal().array().square().minCoeff();
    if (std::isfinite(min_pivot) && min_pivot >= policy.min_relative_pivot * mean_diag) {
      return CholeskyFactor(lower, jitter, rel);
    }
  }
  std::ostringstream msg;
  msg << "psd_cholesky: factorization failed for " << n << "x" << n
      << " matrix at every jitter in ladder {";
  for (std::size_t i = 0; i < policy.relative_ladder.size(); ++i) {
    msg << (i ? ", " : "") << policy.relative_ladder[i];
  }
  msg << "} x mean diagonal " << mean_diag;
  throw NumericalError(msg.str());
}

namespace {

void check_dims(const KernelParams& params, const PointSet& a, const PointSet& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InputError("kernel: empty point set");
  if (a.cols() != params.dim() || b.cols() != params.dim()) {
    throw InputError("kernel: point dimension does not match number of lengthscales");
  }
}

}  // namespace

Matrix kernel_matrix(const KernelParams& params, const PointSet& a, const PointSet& b) {
  check_dims(params, a, b);
  const Eigen::RowVectorXd inv_l = (-params.log_lengthscales.array()).exp().matrix().transpose();
  const PointSet sa = a.array().rowwise() * inv_l.array();
  const PointSet sb = b.array().rowwise() * inv_l.array();
  const double sf2 = params.signal_variance();

  Matrix k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double r2 = (sa.row(i) - sb.row(j)).squaredNorm();
      k(i, j) = sf2 * std::exp(-0.5 * r2);
    }
  }
  return k;
}

std::vector<Matrix> kernel_grads(const KernelParams& params, const PointSet& a, const PointSet& b) {
  const Matrix k = kernel_matrix(params, a, b);
  const int dim = params.dim();
  const Vector l = params.lengthscales();
  std::vector<Matrix> grads;
  grads.reserve(dim + 1);
  for (int d = 0; d < dim; ++d) {
    Matrix g(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double u = (a(i, d) - b(j, d)) / l[d];
        g(i, j) = k(i, j) * u * u;
      }
    }
    grads.push_back(std::move(g));
  }
  grads.push_back(k);
  return grads;
}

void kernel_vjp(const KernelParams& params, const PointSet& a, const PointSet& b, const Matrix& k,
                const Matrix& k_bar, KernelCotangent& theta_bar, PointSet* a_bar, PointSet* b_bar) {
  const int dim = params.dim();
  if (theta_bar.log_lengthscales.size() != dim) theta_bar.log_lengthscales = Vector::Zero(dim);
  const Vector inv_l2 = (-2.0 * params.log_lengthscales.array()).exp().matrix();
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double w = k_bar(i, j) * k(i, j);
      if (w == 0.0) continue;
      theta_bar.log_signal_variance += w;
      for (int d = 0; d < dim; ++d) {
        const double diff = a(i, d) - b(j, d);
        theta_bar.log_lengthscales[d] += w * diff * diff * inv_l2[d];
        const double g = w * diff * inv_l2[d];
        if (a_bar) (*a_bar)(i, d) -= g;
        if (b_bar) (*b_bar)(j, d) += g;
      }
    }
  }
}

}  // namespace opacgp
