#pragma once

#include "opacgp/kernels.hpp"
#include "opacgp/linalg.hpp"

namespace opacgp {

/// Mean and covariance of a finite-dimensional Gaussian.
struct GaussianPosterior {
  Vector mean;
  Matrix cov;

  Eigen::Index size() const { return mean.size(); }
  Vector variances() const { return cov.diagonal(); }
};

enum class CovarianceMode { full, diagonal };

/// Exact GP posterior over latent values at `test` given noisy observations.
/// In diagonal mode the returned cov carries only the marginal variances.
GaussianPosterior gp_posterior(const KernelParams& params, const PointSet& train, const Vector& targets,
                               const PointSet& test, CovarianceMode mode = CovarianceMode::full);

/// log p(y | X, theta) of the exact GP with Gaussian noise.
double log_marginal_likelihood(const KernelParams& params, const PointSet& train, const Vector& targets);

struct LmlGradient {
  double value = 0.0;
  Vector log_lengthscales;
  double log_signal_variance = 0.0;
  double log_noise_variance = 0.0;
};

/// Log marginal likelihood and its gradient with respect to every log-hyperparameter.
LmlGradient log_marginal_likelihood_grad(const KernelParams& params, const PointSet& train,
                                         const Vector& targets);

}  // namespace opacgp
