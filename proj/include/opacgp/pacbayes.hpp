#pragma once

#include <functional>
#include <span>
#include <string>

namespace opacgp {

enum class LossKind { indicator, clipped_square, exp, interval };

std::string to_string(LossKind kind);
/// Accepts the CLI spellings: indicator, clip2, exp, interval.
LossKind parse_loss_kind(const std::string& name);

/// A bounded loss with its scale. Every kind maps into [0, 1], so ceiling_K is 1.
struct LossSpec {
  LossKind kind = LossKind::exp;
  double epsilon = 0.1;
  /// Interval endpoints for the interval kind; empty means y -/+ epsilon.
  std::function<double(double)> r_minus;
  std::function<double(double)> r_plus;
  double ceiling_K = 1.0;

  static LossSpec make(LossKind kind, double epsilon);

  double lower(double y) const { return r_minus ? r_minus(y) : y - epsilon; }
  double upper(double y) const { return r_plus ? r_plus(y) : y + epsilon; }
  void validate() const;
};

/// Decomposed right-hand side of the online PAC-Bayes train bound.
struct BoundReport {
  double empirical_term = 0.0;
  double kl_term = 0.0;
  double constant_term = 0.0;
  double total = 0.0;
  double m = 0.0;
  double lambda = 0.0;
  double delta = 0.0;
  double K = 1.0;
};

/// One prediction entering the empirical term: target, predictive mean and latent variance.
struct PredictionMoments {
  double y = 0.0;
  double mean = 0.0;
  double var = 0.0;
};

double loss(const LossSpec& spec, double y, double yhat);

/// Standard normal CDF.
double normal_cdf(double z);
double normal_pdf(double z);

/// E_{h ~ N(mean, var)} loss(y, h) in closed form.
double expected_loss(const LossSpec& spec, double y, double mean, double var);

struct ExpectedLossGrad {
  double value = 0.0;
  double d_mean = 0.0;
  double d_var = 0.0;
};

/// expected_loss together with its partial derivatives in mean and var.
ExpectedLossGrad expected_loss_grad(const LossSpec& spec, double y, double mean, double var);

/// lambda * m * K^2 / 2 + log(1/delta) / lambda
double bound_constant(double m_count, double lambda, double delta, double K);

BoundReport train_objective(std::span<const PredictionMoments> batch, double kl, double m_count,
                            double lambda, double delta, const LossSpec& spec);

/// Online test bound: cumulative empirical loss plus the constant term (no KL).
double test_bound(double cumulative_empirical, double m_count, double lambda, double delta, double K);

}  // namespace opacgp
