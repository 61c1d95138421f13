#include "opacgp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "opacgp/data.hpp"
#include "opacgp/errors.hpp"
#include "opacgp/exact_gp.hpp"

namespace opacgp {

void TrainConfig::validate() const {
  if (!(lr_hyper > 0.0) || !(lr_variational > 0.0)) throw InputError("train config: learning rates must be positive");
  if (inner_steps_online < 1) throw InputError("train config: inner_steps_online must be at least 1");
  if (pretrain_steps < 0) throw InputError("train config: pretrain_steps must be nonnegative");
  if (!(delta > 0.0 && delta <= 1.0)) throw InputError("train config: delta must lie in (0, 1]");
  if (lambda_mode == LambdaMode::fixed && !(lambda_value > 0.0)) throw InputError("train config: lambda must be positive");
  if (num_inducing < 1) throw InputError("train config: need at least one inducing point");
  if (!(init_lengthscale > 0.0 && init_signal_variance > 0.0 && init_noise_variance > 0.0)) {
    throw InputError("train config: initial hyperparameters must be positive");
  }
  if (!(min_noise_variance > 0.0 && min_noise_variance <= init_noise_variance)) {
    throw InputError("train config: min_noise_variance must lie in (0, init_noise_variance]");
  }
  loss.validate();
}

double TrainConfig::lambda_for(double m_count) const {
  if (lambda_mode == LambdaMode::fixed) return lambda_value;
  if (!(m_count > 0.0)) throw InputError("lambda = 1/m needs m > 0");
  return 1.0 / m_count;
}

PointSet initial_inducing_points(const PointSet& x, int num_inducing) {
  if (x.rows() == 0) throw InputError("inducing init: empty slice");
  const Eigen::Index m = num_inducing;
  const Eigen::RowVectorXd lo = x.colwise().minCoeff();
  const Eigen::RowVectorXd hi = x.colwise().maxCoeff();
  PointSet z(m, x.cols());
  if ((hi - lo).cwiseAbs().maxCoeff() == 0.0) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const double offset = 1e-3 * (static_cast<double>(i) - 0.5 * static_cast<double>(m - 1));
      z.row(i) = lo.array() + offset;
    }
    return z;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    const double f = m == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(m - 1);
    z.row(i) = lo + f * (hi - lo);
  }
  return z;
}

void set_sparse_posterior(VariationalState& state, const PointSet& x, const Vector& y) {
  const Matrix kzz = kernel_matrix(state.params, state.inducing, state.inducing);
  const CholeskyFactor lz = psd_cholesky(kzz);
  const double sn = std::sqrt(state.params.noise_variance());
  const Matrix a = lz.solve_lower(kernel_matrix(state.params, state.inducing, x)) / sn;
  Matrix b = a * a.transpose();
  b.diagonal().array() += 1.0;
  const CholeskyFactor lb = psd_cholesky(b);
  state.mean = lz.lower() * lb.solve(Vector(a * y / sn));
  const Matrix t = lb.solve_lower(Matrix(lz.lower().transpose()));
  const Matrix s = t.transpose() * t;
  state.scale_tril = psd_cholesky(0.5 * (s + s.transpose())).lower();
}

PretrainResult pretrain(const PointSet& x, const Vector& y, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() == 0) throw InputError("pretrain: empty slice");
  if (x.rows() != y.size()) throw InputError("pretrain: inputs and targets differ in length");
  const Eigen::Index dim = x.cols();

  KernelParams params = KernelParams::rbf(Vector::Constant(dim, cfg.init_lengthscale), cfg.init_signal_variance,
                                          cfg.init_noise_variance);
  PretrainResult result;
  if (cfg.num_inducing > x.rows()) {
    result.warnings.push_back("pretrain: " + std::to_string(cfg.num_inducing) + " inducing points for a slice of " +
                              std::to_string(x.rows()) + " rows");
  }
  AdamState opt(dim + 2);
  Vector theta(dim + 2);
  for (int s = 0; s < cfg.pretrain_steps; ++s) {
    LmlGradient g;
    try {
      g = log_marginal_likelihood_grad(params, x, y);
    } catch (const NumericalError& e) {
      result.warnings.push_back(std::string("pretrain: stopped early: ") + e.what());
      break;
    }
    result.lml_trace.push_back(g.value);
    theta << params.log_lengthscales, params.log_signal_variance, params.log_noise_variance;
    Vector grad(dim + 2);
    grad << -g.log_lengthscales, -g.log_signal_variance, -g.log_noise_variance;
    const Vector next = adam_update(opt, theta, grad, cfg.lr_hyper);
    KernelParams candidate = params;
    candidate.log_lengthscales = next.head(dim);
    candidate.log_signal_variance = next[dim];
    candidate.log_noise_variance = std::max(next[dim + 1], std::log(cfg.min_noise_variance));
    try {
      candidate.validate();
    } catch (const InputError& e) {
      result.warnings.push_back(std::string("pretrain: stopped early: ") + e.what());
      break;
    }
    params = candidate;
  }
  result.lml_trace.push_back(log_marginal_likelihood(params, x, y));

  VariationalState& state = result.state;
  state.params = params;
  state.inducing = initial_inducing_points(x, cfg.num_inducing);
  set_sparse_posterior(state, x, y);
  state.validate();
  return result;
}

Vector learning_rates(const ParameterLayout& layout, const TrainConfig& cfg) {
  Vector lr = Vector::Constant(layout.size(), cfg.lr_variational);
  lr.head(layout.hyper_size()).setConstant(cfg.lr_hyper);
  return lr;
}

OnlineStepResult online_step(VariationalState& state, AdamState& opt, const PointSet& batch_x,
                             const Vector& batch_y, const TrainConfig& cfg, std::size_t n_seen,
                             std::size_t step_index) {
  if (batch_x.rows() == 0) throw InputError("online_step: empty batch");
  if (cfg.inner_steps_online < 1) throw InputError("online_step: inner_steps_online must be at least 1");
  const PriorSnapshot prior = snapshot(state, step_index);
  const ParameterLayout layout = ParameterLayout::of(state);
  const Vector lr = learning_rates(layout, cfg);
  const auto m_count = static_cast<double>(n_seen);
  const ObjectiveSettings settings{cfg.objective, cfg.loss, cfg.lambda_for(m_count), cfg.delta, m_count};

  VariationalState work = state;
  AdamState work_opt = opt;
  OnlineStepResult result;
  for (int it = 0; it < cfg.inner_steps_online; ++it) {
    const ObjectiveResult r = evaluate_objective(work, prior, batch_x, batch_y, settings, true);
    if (it == 0) result.prequential = r.moments;
    result.objective_trace.push_back(r.value);
    const Vector theta = adam_update(work_opt, pack(work), r.grad, lr);
    if (!theta.allFinite()) throw NumericalError("online_step: non-finite parameters after update");
    work = unpack(layout, theta);
    work.params.log_noise_variance = std::max(work.params.log_noise_variance, std::log(cfg.min_noise_variance));
    try {
      work.validate();
    } catch (const InputError& e) {
      throw NumericalError(std::string("online_step: invalid state after update: ") + e.what());
    }
  }
  const ObjectiveResult last = evaluate_objective(work, prior, batch_x, batch_y, settings, false);
  result.objective_trace.push_back(last.value);
  result.report = last.report;
  result.fitted = last.moments;

  state = std::move(work);
  opt = std::move(work_opt);
  return result;
}

namespace {

constexpr char kCheckpointMagic[8] = {'O', 'P', 'A', 'C', 'G', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError("checkpoint: truncated");
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const TrainerCheckpoint& ck) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  write_state(out, ck.state);
  put(out, ck.opt.beta1);
  put(out, ck.opt.beta2);
  put(out, ck.opt.eps);
  put<std::int64_t>(out, ck.opt.t);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(ck.opt.m.size()));
  for (Eigen::Index i = 0; i < ck.opt.m.size(); ++i) put(out, ck.opt.m[i]);
  for (Eigen::Index i = 0; i < ck.opt.v.size(); ++i) put(out, ck.opt.v[i]);
  put<std::uint64_t>(out, ck.steps_done);
  put<std::uint64_t>(out, ck.n_seen);
  put<std::uint64_t>(out, ck.online_points);
  put(out, ck.sum_train_sq);
  put(out, ck.sum_test_sq);
  put(out, ck.cumulative_empirical);
}

TrainerCheckpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw ParseError("checkpoint: bad magic");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw ParseError("checkpoint: unsupported version");
  TrainerCheckpoint ck;
  ck.state = read_state(in);
  ck.opt.beta1 = get<double>(in);
  ck.opt.beta2 = get<double>(in);
  ck.opt.eps = get<double>(in);
  ck.opt.t = get<std::int64_t>(in);
  const auto n = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  if (n != ParameterLayout::of(ck.state).size()) throw ParseError("checkpoint: optimizer size does not match state");
  ck.opt.m.resize(n);
  ck.opt.v.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) ck.opt.m[i] = get<double>(in);
  for (Eigen::Index i = 0; i < n; ++i) ck.opt.v[i] = get<double>(in);
  ck.steps_done = get<std::uint64_t>(in);
  ck.n_seen = get<std::uint64_t>(in);
  ck.online_points = get<std::uint64_t>(in);
  ck.sum_train_sq = get<double>(in);
  ck.sum_test_sq = get<double>(in);
  ck.cumulative_empirical = get<double>(in);
  return ck;
}

OnlineTrainer::OnlineTrainer(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

PretrainResult OnlineTrainer::pretrain(const PointSet& x, const Vector& y) {
  PretrainResult result = opacgp::pretrain(x, y, cfg_);
  ck_ = TrainerCheckpoint{};
  ck_.state = result.state;
  ck_.opt = AdamState(ParameterLayout::of(result.state).size());
  ck_.n_seen = static_cast<std::size_t>(x.rows());
  ready_ = true;
  return result;
}

void OnlineTrainer::resume(TrainerCheckpoint ck) {
  ck.state.validate();
  ck_ = std::move(ck);
  ready_ = true;
}

StepRecord OnlineTrainer::step(const PointSet& batch_x, const Vector& batch_y) {
  if (!ready_) throw InputError("trainer: pretrain or resume before stepping");
  const auto start = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = ck_.steps_done + 1;
  const std::size_t n_after = ck_.n_seen + static_cast<std::size_t>(batch_x.rows());
  try {
    const OnlineStepResult res = online_step(ck_.state, ck_.opt, batch_x, batch_y, cfg_, n_after, rec.step);
    for (const PredictionMoments& p : res.prequential) {
      ck_.sum_test_sq += (p.y - p.mean) * (p.y - p.mean);
      ck_.cumulative_empirical += expected_loss(cfg_.loss, p.y, p.mean, p.var);
    }
    for (const PredictionMoments& p : res.fitted) ck_.sum_train_sq += (p.y - p.mean) * (p.y - p.mean);
    ck_.online_points += res.fitted.size();
    ck_.n_seen = n_after;

    const auto count = static_cast<double>(ck_.online_points);
    rec.n_seen = ck_.n_seen;
    rec.train_mse = ck_.sum_train_sq / count;
    rec.test_mse = ck_.sum_test_sq / count;
    rec.empirical_term = res.report.empirical_term;
    rec.kl_term = res.report.kl_term;
    rec.constant_term = res.report.constant_term;
    rec.train_bound_total = res.report.total;
    rec.test_bound = test_bound(ck_.cumulative_empirical, static_cast<double>(n_after), res.report.lambda,
                                cfg_.delta, cfg_.loss.ceiling_K);
  } catch (const NumericalError& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.failed = true;
    rec.message = e.what();
    rec.n_seen = ck_.n_seen;
    rec.train_mse = rec.test_mse = nan;
    rec.empirical_term = rec.kl_term = rec.constant_term = nan;
    rec.train_bound_total = rec.test_bound = nan;
  }
  ck_.steps_done += 1;
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

RunResult run_stream(const Stream& stream, const TrainConfig& cfg,
                     const std::function<void(const StepRecord&)>& on_record) {
  OnlineTrainer trainer(cfg);
  RunResult result;
  result.pretrain = trainer.pretrain(stream.pretrain.x, stream.pretrain.y);
  result.records.reserve(stream.batches.size());
  for (const Batch& b : stream.batches) {
    result.records.push_back(trainer.step(b.x, b.y));
    if (on_record) on_record(result.records.back());
  }
  result.final_checkpoint = trainer.checkpoint();
  return result;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& objective, const Vector& x, double step) {
  if (!(step > 0.0)) throw InputError("finite_diff_grad: step must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = objective(probe);
    probe[i] = x[i] - step;
    const double down = objective(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace opacgp
