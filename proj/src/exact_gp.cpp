#include "opacgp/exact_gp.hpp"

#include <cmath>
#include <numbers>

#include "opacgp/errors.hpp"

namespace opacgp {

namespace {

void check_training_set(const KernelParams& params, const PointSet& train, const Vector& targets) {
  if (train.rows() == 0) throw InputError("exact GP: empty training set");
  if (train.rows() != targets.size()) throw InputError("exact GP: inputs and targets differ in length");
  if (train.cols() != params.dim()) throw InputError("exact GP: input dimension mismatch");
}

CholeskyFactor noisy_gram_factor(const KernelParams& params, const PointSet& train) {
  Matrix k = kernel_matrix(params, train, train);
  k.diagonal().array() += params.noise_variance();
  return psd_cholesky(k);
}

}  // namespace

GaussianPosterior gp_posterior(const KernelParams& params, const PointSet& train, const Vector& targets,
                               const PointSet& test, CovarianceMode mode) {
  check_training_set(params, train, targets);
  if (test.rows() == 0) throw InputError("exact GP: empty test set");
  const CholeskyFactor chol = noisy_gram_factor(params, train);
  const Matrix k_ft = kernel_matrix(params, train, test);

  GaussianPosterior post;
  post.mean = k_ft.transpose() * chol.solve(targets);
  const Matrix v = chol.solve_lower(k_ft);
  if (mode == CovarianceMode::full) {
    post.cov = kernel_matrix(params, test, test) - v.transpose() * v;
    post.cov = (0.5 * (post.cov + post.cov.transpose())).eval();
  } else {
    const double sf2 = params.signal_variance();
    Vector var = (sf2 - v.colwise().squaredNorm().array()).matrix().transpose();
    post.cov = var.asDiagonal();
  }
  return post;
}

double log_marginal_likelihood(const KernelParams& params, const PointSet& train, const Vector& targets) {
  check_training_set(params, train, targets);
  const CholeskyFactor chol = noisy_gram_factor(params, train);
  const Vector alpha = chol.solve_lower(targets);
  const double n = static_cast<double>(targets.size());
  return -0.5 * alpha.squaredNorm() - 0.5 * chol.log_det() - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

LmlGradient log_marginal_likelihood_grad(const KernelParams& params, const PointSet& train,
                                         const Vector& targets) {
  check_training_set(params, train, targets);
  const CholeskyFactor chol = noisy_gram_factor(params, train);
  const Vector alpha = chol.solve(targets);
  const double n = static_cast<double>(targets.size());

  LmlGradient out;
  out.value = -0.5 * targets.dot(alpha) - 0.5 * chol.log_det() - 0.5 * n * std::log(2.0 * std::numbers::pi);

  // d lml / d theta = 0.5 tr((alpha alpha^T - K^{-1}) dK/dtheta)
  const Matrix inner = alpha * alpha.transpose() - chol.inverse();
  const std::vector<Matrix> grads = kernel_grads(params, train, train);
  const int dim = params.dim();
  out.log_lengthscales.resize(dim);
  for (int d = 0; d < dim; ++d) out.log_lengthscales[d] = 0.5 * inner.cwiseProduct(grads[d]).sum();
  out.log_signal_variance = 0.5 * inner.cwiseProduct(grads[dim]).sum();
  out.log_noise_variance = 0.5 * params.noise_variance() * inner.trace();
  return out;
}

}  // namespace opacgp
