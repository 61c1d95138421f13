#include "opacgp/objective.hpp"

#include <cmath>
#include <numbers>

#include "opacgp/errors.hpp"

namespace opacgp {

ParameterLayout ParameterLayout::of(const VariationalState& state) {
  return {state.dim(), state.num_inducing()};
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

namespace {

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

namespace {

CholeskyFactor inducing_cholesky(const KernelParams& params, const PointSet& z) {
  return psd_cholesky(kernel_matrix(params, z, z));
}

}  // namespace

Vector pack(const VariationalState& state) {
  const ParameterLayout layout = ParameterLayout::of(state);
  const Eigen::Index d = layout.dim;
  const Eigen::Index m = layout.num_inducing;
  const CholeskyFactor lz = inducing_cholesky(state.params, state.inducing);
  const Vector v = lz.solve_lower(Matrix(state.mean));
  const Matrix lv = lz.solve_lower(state.scale_tril).triangularView<Eigen::Lower>();
  Vector theta(layout.size());
  theta.head(d) = state.params.log_lengthscales;
  theta[d] = state.params.log_signal_variance;
  theta[d + 1] = state.params.log_noise_variance;
  Eigen::Index k = layout.inducing_offset();
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) theta[k++] = state.inducing(i, j);
  theta.segment(layout.mean_offset(), m) = v;
  k = layout.factor_offset();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) theta[k++] = lv(i, j);
    theta[k++] = softplus_inverse(lv(i, i));
  }
  return theta;
}

VariationalState unpack(const ParameterLayout& layout, const Vector& theta) {
  if (theta.size() != layout.size()) throw InputError("unpack: parameter vector has wrong length");
  const Eigen::Index d = layout.dim;
  const Eigen::Index m = layout.num_inducing;
  VariationalState s;
  s.params.family = KernelFamily::rbf;
  s.params.log_lengthscales = theta.head(d);
  s.params.log_signal_variance = theta[d];
  s.params.log_noise_variance = theta[d + 1];
  s.inducing.resize(m, d);
  Eigen::Index k = layout.inducing_offset();
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) s.inducing(i, j) = theta[k++];
  Matrix lv = Matrix::Zero(m, m);
  k = layout.factor_offset();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) lv(i, j) = theta[k++];
    lv(i, i) = softplus(theta[k++]);
  }
  const Matrix lz = inducing_cholesky(s.params, s.inducing).lower();
  s.mean = lz * theta.segment(layout.mean_offset(), m);
  s.scale_tril = (lz * lv).triangularView<Eigen::Lower>();
  return s;
}

namespace {

struct StateGrad {
  KernelCotangent theta;
  double log_noise_variance = 0.0;
  PointSet inducing;
  Vector mean;
  Matrix cov;  // dL/dS

  explicit StateGrad(const VariationalState& s)
      : inducing(PointSet::Zero(s.num_inducing(), s.dim())),
        mean(Vector::Zero(s.num_inducing())),
        cov(Matrix::Zero(s.num_inducing(), s.num_inducing())) {
    theta.log_lengthscales = Vector::Zero(s.dim());
  }
};

// Pulls (mean_bar, cov_bar) of a sparse predictive back onto the state that
// produced it and onto the evaluation points. `diag_only` means cov_bar is
// diagonal and K(P, P) was not formed.
void backprop_predictive(const VariationalState& s, const PointSet& points, const detail::PredictiveTerms& t,
                         const Vector& mean_bar, const Matrix& cov_bar, bool diag_only, StateGrad* state_bar,
                         PointSet* points_bar) {
  const Matrix& a = t.proj;
  const Matrix sym = cov_bar + cov_bar.transpose();
  const Matrix a_bar = mean_bar * s.mean.transpose() - sym * a * t.gap;
  const Matrix at_cov_a = a.transpose() * cov_bar * a;

  // K(P, Z) = A Kzz_j  =>  dK(P,Z) = A_bar Kzz_j^{-1}
  const Matrix kpz_bar = t.kzz.solve(Matrix(a_bar.transpose())).transpose();
  Matrix kzz_bar = -at_cov_a - t.kzz.solve(Matrix(a_bar.transpose() * a)).transpose();
  // jitter = rel * mean(diag Kzz)
  kzz_bar.diagonal().array() += t.kzz.relative_jitter() * kzz_bar.trace() / static_cast<double>(kzz_bar.rows());

  KernelCotangent dummy;
  KernelCotangent& theta_bar = state_bar ? state_bar->theta : dummy;
  PointSet* z_bar = state_bar ? &state_bar->inducing : nullptr;

  kernel_vjp(s.params, points, s.inducing, t.kpz, kpz_bar, theta_bar, points_bar, z_bar);
  if (state_bar) {
    kernel_vjp(s.params, s.inducing, s.inducing, t.kzz_raw, kzz_bar, theta_bar, z_bar, z_bar);
    state_bar->mean += a.transpose() * mean_bar;
    state_bar->cov += at_cov_a;
  }
  if (diag_only) {
    // k(x, x) = signal variance, independent of x
    theta_bar.log_signal_variance += s.params.signal_variance() * cov_bar.trace();
  } else {
    kernel_vjp(s.params, points, points, t.kpp, cov_bar, theta_bar, points_bar, points_bar);
  }
}

// Chains dL/d(state) through m = Lz v, S_factor = Lz Lv, where Lz is the
// jittered Cholesky factor of K(Z, Z).
Vector pack_gradient(const VariationalState& s, const Vector& theta, StateGrad g) {
  const ParameterLayout layout = ParameterLayout::of(s);
  const Eigen::Index d = layout.dim;
  const Eigen::Index m = layout.num_inducing;
  const Matrix kzz_raw = kernel_matrix(s.params, s.inducing, s.inducing);
  const CholeskyFactor cz = psd_cholesky(kzz_raw);
  const Matrix& lz = cz.lower();
  const Vector v = theta.segment(layout.mean_offset(), m);
  const Matrix lv = cz.solve_lower(s.scale_tril).triangularView<Eigen::Lower>();

  // S = L L^T  =>  L_bar = (S_bar + S_bar^T) L
  const Matrix ls_bar = ((g.cov + g.cov.transpose()) * s.scale_tril).triangularView<Eigen::Lower>();
  const Vector v_bar = lz.transpose() * g.mean;
  const Matrix lv_bar = (lz.transpose() * ls_bar).triangularView<Eigen::Lower>();
  const Matrix lz_bar = (g.mean * v.transpose() + ls_bar * lv.transpose()).triangularView<Eigen::Lower>();

  // Cholesky reverse mode: K_bar = L^{-T} Phi(L^T L_bar) L^{-1}, symmetrized
  Matrix phi = (lz.transpose() * lz_bar).triangularView<Eigen::Lower>();
  phi.diagonal() *= 0.5;
  const Matrix lz_inv = cz.solve_lower(Matrix(Matrix::Identity(m, m)));
  Matrix kzz_bar = lz_inv.transpose() * phi * lz_inv;
  kzz_bar = (0.5 * (kzz_bar + kzz_bar.transpose())).eval();
  kzz_bar.diagonal().array() += cz.relative_jitter() * kzz_bar.trace() / static_cast<double>(m);
  kernel_vjp(s.params, s.inducing, s.inducing, kzz_raw, kzz_bar, g.theta, &g.inducing, &g.inducing);

  Vector out(layout.size());
  out.head(d) = g.theta.log_lengthscales;
  out[d] = g.theta.log_signal_variance;
  out[d + 1] = g.log_noise_variance;
  Eigen::Index k = layout.inducing_offset();
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out[k++] = g.inducing(i, j);
  out.segment(layout.mean_offset(), m) = v_bar;
  k = layout.factor_offset();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) out[k++] = lv_bar(i, j);
    out[k] = lv_bar(i, i) * sigmoid(theta[k]);
    ++k;
  }
  return out;
}

}  // namespace

ObjectiveResult evaluate_objective(const VariationalState& current, const PriorSnapshot& prior,
                                   const PointSet& batch_x, const Vector& batch_y,
                                   const ObjectiveSettings& settings, bool with_grad) {
  if (batch_x.rows() == 0) throw InputError("objective: empty batch");
  if (batch_x.rows() != batch_y.size()) throw InputError("objective: batch inputs and targets differ in length");
  const VariationalState& old = prior.state();
  if (old.dim() != current.dim()) throw InputError("objective: prior and current dimension differ");

  const detail::PredictiveTerms tb = detail::predictive_terms(current, batch_x, false);
  const EvalPoints eval = dedup_union(old.inducing, current.inducing);
  const detail::PredictiveTerms tq = detail::predictive_terms(current, eval.points, true);
  const detail::PredictiveTerms tp = detail::predictive_terms(old, eval.points, true);

  const CholeskyFactor cq = psd_cholesky(tq.cov, kl_jitter_policy());
  const CholeskyFactor cp = psd_cholesky(tp.cov, kl_jitter_policy());
  const auto k = static_cast<double>(eval.points.rows());
  const Vector diff = tp.mean - tq.mean;
  const Matrix w = cp.solve_lower(cq.lower());
  const Vector dw = cp.solve_lower(Matrix(diff));
  const double kl_raw = 0.5 * (w.squaredNorm() + dw.squaredNorm() - k + cp.log_det() - cq.log_det());
  if (!std::isfinite(kl_raw)) throw NumericalError("objective: non-finite KL");
  const double kl = std::max(kl_raw, 0.0);

  ObjectiveResult out;
  out.kl = kl;
  const Eigen::Index nb = batch_x.rows();
  out.moments.resize(nb);
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.moments[i] = {batch_y[i], tb.mean[i], std::max(tb.cov(i, i), 0.0)};
  }
  for (const PredictionMoments& p : out.moments) {
    if (!std::isfinite(p.y) || !std::isfinite(p.mean) || !std::isfinite(p.var)) {
      throw NumericalError("objective: non-finite prediction or target in batch");
    }
  }
  out.report = train_objective(out.moments, kl, settings.m_count, settings.lambda, settings.delta, settings.loss);

  Vector mean_bar = Vector::Zero(nb);
  Vector var_bar = Vector::Zero(nb);
  double noise_bar = 0.0;
  double kl_weight = 1.0;
  if (settings.kind == ObjectiveKind::pacbayes) {
    out.value = out.report.total;
    kl_weight = 1.0 / settings.lambda;
    if (with_grad) {
      for (Eigen::Index i = 0; i < nb; ++i) {
        const PredictionMoments& p = out.moments[i];
        const ExpectedLossGrad g = expected_loss_grad(settings.loss, p.y, p.mean, p.var);
        mean_bar[i] = g.d_mean;
        var_bar[i] = g.d_var;
      }
    }
  } else {
    const double noise = current.params.noise_variance();
    double nll = 0.0;
    for (Eigen::Index i = 0; i < nb; ++i) {
      const PredictionMoments& p = out.moments[i];
      const double s = p.var + noise;
      const double r = p.y - p.mean;
      nll += 0.5 * std::log(2.0 * std::numbers::pi * s) + r * r / (2.0 * s);
      mean_bar[i] = -r / s;
      var_bar[i] = 0.5 / s - r * r / (2.0 * s * s);
      noise_bar += var_bar[i];
    }
    noise_bar *= noise;
    out.value = nll + kl;
  }
  if (!std::isfinite(out.value)) throw NumericalError("objective: non-finite value");
  if (!with_grad) return out;

  for (Eigen::Index i = 0; i < nb; ++i) {
    if (tb.cov(i, i) < 0.0) var_bar[i] = 0.0;
  }

  StateGrad g(current);
  g.log_noise_variance = noise_bar;
  backprop_predictive(current, batch_x, tb, mean_bar, Matrix(var_bar.asDiagonal()), true, &g, nullptr);

  if (kl_raw > 0.0) {
    const Matrix p_inv = cp.inverse();
    const Matrix q_inv = cq.inverse();
    const Vector alpha = p_inv * diff;
    Matrix q_cov_j = tq.cov;
    q_cov_j.diagonal().array() += cq.jitter();
    Matrix gq = 0.5 * kl_weight * (p_inv - q_inv);
    Matrix gp = 0.5 * kl_weight * (p_inv - p_inv * q_cov_j * p_inv - alpha * alpha.transpose());
    gq.diagonal().array() += cq.relative_jitter() * gq.trace() / k;
    gp.diagonal().array() += cp.relative_jitter() * gp.trace() / k;
    const Vector mq_bar = -kl_weight * alpha;
    const Vector mp_bar = kl_weight * alpha;

    PointSet eval_bar = PointSet::Zero(eval.points.rows(), eval.points.cols());
    backprop_predictive(current, eval.points, tq, mq_bar, gq, false, &g, &eval_bar);
    backprop_predictive(old, eval.points, tp, mp_bar, gp, false, nullptr, &eval_bar);
    for (Eigen::Index r = 0; r < eval.points.rows(); ++r) {
      const Eigen::Index src = eval.second_index[static_cast<std::size_t>(r)];
      if (src >= 0) g.inducing.row(src) += eval_bar.row(r);
    }
  }

  out.grad = pack_gradient(current, pack(current), std::move(g));
  if (!out.grad.allFinite()) throw NumericalError("objective: non-finite gradient");
  return out;
}

}  // namespace opacgp
