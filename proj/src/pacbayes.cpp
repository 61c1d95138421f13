#include "opacgp/pacbayes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "opacgp/errors.hpp"

namespace opacgp {

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::indicator: return "indicator";
    case LossKind::clipped_square: return "clip2";
    case LossKind::exp: return "exp";
    case LossKind::interval: return "interval";
  }
  return "unknown";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "indicator") return LossKind::indicator;
  if (name == "clip2" || name == "clipped_square") return LossKind::clipped_square;
  if (name == "exp") return LossKind::exp;
  if (name == "interval") return LossKind::interval;
  throw InputError("unknown loss kind: " + name);
}

LossSpec LossSpec::make(LossKind kind, double epsilon) {
  LossSpec spec;
  spec.kind = kind;
  spec.epsilon = epsilon;
  spec.validate();
  return spec;
}

void LossSpec::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InputError("loss: epsilon must be positive");
  if (ceiling_K != 1.0) throw InputError("loss: every bounded loss here has ceiling K = 1");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double loss(const LossSpec& spec, double y, double yhat) {
  const double r = y - yhat;
  switch (spec.kind) {
    case LossKind::indicator:
      return std::abs(r) > spec.epsilon ? 1.0 : 0.0;
    case LossKind::clipped_square: {
      const double u = r / spec.epsilon;
      return std::min(u * u, 1.0);
    }
    case LossKind::exp: {
      const double u = r / spec.epsilon;
      return 1.0 - std::exp(-u * u);
    }
    case LossKind::interval:
      return (yhat < spec.lower(y) || yhat > spec.upper(y)) ? 1.0 : 0.0;
  }
  return 0.0;
}

namespace {

// Mass of N(0,1) on [a, b], evaluated on the side that avoids cancellation.
double band_mass(double a, double b) {
  if (a > 0.0) return normal_cdf(-a) - normal_cdf(-b);
  return normal_cdf(b) - normal_cdf(a);
}

// Mass outside [lo, hi] for h ~ N(mean, sd^2), with its derivatives.
ExpectedLossGrad outside_band(double lo, double hi, double mean, double sd) {
  const double a = (lo - mean) / sd;
  const double b = (hi - mean) / sd;
  ExpectedLossGrad g;
  g.value = normal_cdf(a) + normal_cdf(-b);
  const double pa = normal_pdf(a);
  const double pb = normal_pdf(b);
  g.d_mean = (pb - pa) / sd;
  const double d_sd = (b * pb - a * pa) / sd;
  g.d_var = d_sd / (2.0 * sd);
  return g;
}

ExpectedLossGrad degenerate(const LossSpec& spec, double y, double mean) {
  ExpectedLossGrad g;
  g.value = loss(spec, y, mean);
  const double r = y - mean;
  const double e2 = spec.epsilon * spec.epsilon;
  switch (spec.kind) {
    case LossKind::exp: {
      const double e = std::exp(-r * r / e2);
      g.d_mean = -2.0 * r * e / e2;
      g.d_var = e * (1.0 - 2.0 * r * r / e2) / e2;
      break;
    }
    case LossKind::clipped_square:
      if (std::abs(r) < spec.epsilon) {
        g.d_mean = -2.0 * r / e2;
        g.d_var = 1.0 / e2;
      }
      break;
    case LossKind::indicator:
    case LossKind::interval:
      break;
  }
  return g;
}

}  // namespace

ExpectedLossGrad expected_loss_grad(const LossSpec& spec, double y, double mean, double var) {
  if (!(var >= 0.0)) {
    if (std::isnan(var)) return {std::nan(""), std::nan(""), std::nan("")};
    throw InputError("expected_loss: negative variance");
  }
  if (var == 0.0) return degenerate(spec, y, mean);

  const double eps = spec.epsilon;
  const double e2 = eps * eps;
  const double r = y - mean;
  const double sd = std::sqrt(var);
  switch (spec.kind) {
    case LossKind::exp: {
      // 1 - (1 + 2 var / eps^2)^{-1/2} exp(-r^2 / (2 var + eps^2))
      const double c = 2.0 * var + e2;
      const double e = std::exp(-r * r / c);
      const double scale = eps / std::sqrt(c);
      ExpectedLossGrad g;
      g.value = 1.0 - scale * e;
      const double c32 = scale * e / c;
      g.d_mean = -2.0 * r * c32;
      g.d_var = c32 * (1.0 - 2.0 * r * r / c);
      return g;
    }
    case LossKind::indicator:
      return outside_band(y - eps, y + eps, mean, sd);
    case LossKind::interval:
      return outside_band(spec.lower(y), spec.upper(y), mean, sd);
    case LossKind::clipped_square: {
      const double a = (r - eps) / sd;
      const double b = (r + eps) / sd;
      const double mass = band_mass(a, b);
      const double pa = normal_pdf(a);
      const double pb = normal_pdf(b);
      ExpectedLossGrad g;
      g.value = 1.0 - mass + ((r * r + var) * mass - sd * (r + eps) * pa + sd * (r - eps) * pb) / e2;
      g.d_mean = (-2.0 / e2) * (r * mass - sd * (pa - pb));
      const double d_sd = (-2.0 / e2) * (r * (pa - pb) - sd * (mass + a * pa - b * pb));
      g.d_var = d_sd / (2.0 * sd);
      // Rounding can push the value a few ulps outside [0, 1].
      g.value = std::clamp(g.value, 0.0, 1.0);
      return g;
    }
  }
  return {};
}

double expected_loss(const LossSpec& spec, double y, double mean, double var) {
  return expected_loss_grad(spec, y, mean, var).value;
}

namespace {

void check_bound_args(double m_count, double lambda, double delta) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("bound: lambda must be positive");
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("bound: delta must lie in (0, 1]");
  if (!(m_count >= 0.0)) throw InputError("bound: negative data count");
}

}  // namespace

double bound_constant(double m_count, double lambda, double delta, double K) {
  check_bound_args(m_count, lambda, delta);
  return lambda * m_count * K * K / 2.0 + std::log(1.0 / delta) / lambda;
}

BoundReport train_objective(std::span<const PredictionMoments> batch, double kl, double m_count,
                            double lambda, double delta, const LossSpec& spec) {
  check_bound_args(m_count, lambda, delta);
  if (!(kl >= 0.0)) throw InputError("bound: KL must be nonnegative");
  BoundReport report;
  for (const PredictionMoments& p : batch) report.empirical_term += expected_loss(spec, p.y, p.mean, p.var);
  report.kl_term = kl / lambda;
  report.constant_term = bound_constant(m_count, lambda, delta, spec.ceiling_K);
  report.total = report.empirical_term + report.kl_term + report.constant_term;
  report.m = m_count;
  report.lambda = lambda;
  report.delta = delta;
  report.K = spec.ceiling_K;
  return report;
}

double test_bound(double cumulative_empirical, double m_count, double lambda, double delta, double K) {
  return cumulative_empirical + bound_constant(m_count, lambda, delta, K);
}

}  // namespace opacgp
