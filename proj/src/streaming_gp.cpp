#include "opacgp/streaming_gp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "opacgp/errors.hpp"

namespace opacgp {

static_assert(std::endian::native == std::endian::little, "state dumps assume a little-endian host");

void VariationalState::validate() const {
  const Eigen::Index m = inducing.rows();
  if (m < 1) throw InputError("variational state: needs at least one inducing point");
  if (inducing.cols() != params.dim()) throw InputError("variational state: inducing dimension mismatch");
  if (mean.size() != m) throw InputError("variational state: mean length mismatch");
  if (scale_tril.rows() != m || scale_tril.cols() != m) throw InputError("variational state: factor shape mismatch");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(scale_tril(i, i) > 0.0)) throw InputError("variational state: factor diagonal must be positive");
    for (Eigen::Index j = i + 1; j < m; ++j) {
      if (scale_tril(i, j) != 0.0) throw InputError("variational state: factor must be lower triangular");
    }
  }
  params.validate();
}

PriorSnapshot snapshot(const VariationalState& state, std::size_t step) { return PriorSnapshot(state, step); }

VariationalState restore(const PriorSnapshot& snap) { return snap.state(); }

namespace detail {

PredictiveTerms predictive_terms(const VariationalState& state, const PointSet& points, bool full_cov) {
  if (points.rows() == 0) throw InputError("predictive: empty test set");
  PredictiveTerms t;
  t.kzz_raw = kernel_matrix(state.params, state.inducing, state.inducing);
  t.kzz = psd_cholesky(t.kzz_raw);
  t.kpz = kernel_matrix(state.params, points, state.inducing);
  t.proj = t.kzz.solve(Matrix(t.kpz.transpose())).transpose();
  t.gap = t.kzz_raw - state.scale_tril * state.scale_tril.transpose();
  t.gap.diagonal().array() += t.kzz.jitter();
  t.mean = t.proj * state.mean;
  const Matrix pg = t.proj * t.gap;
  if (full_cov) {
    t.kpp = kernel_matrix(state.params, points, points);
    t.cov = t.kpp - pg * t.proj.transpose();
    t.cov = (0.5 * (t.cov + t.cov.transpose())).eval();
  } else {
    const double sf2 = state.params.signal_variance();
    const Vector var = (sf2 - pg.cwiseProduct(t.proj).rowwise().sum().array()).matrix();
    t.cov = var.asDiagonal();
  }
  return t;
}

}  // namespace detail

GaussianPosterior predictive(const VariationalState& state, const PointSet& test, CovarianceMode mode) {
  detail::PredictiveTerms t = detail::predictive_terms(state, test, mode == CovarianceMode::full);
  return {std::move(t.mean), std::move(t.cov)};
}

double gaussian_kl(const GaussianPosterior& q, const GaussianPosterior& p, const JitterPolicy& policy) {
  const Eigen::Index k = q.mean.size();
  if (p.mean.size() != k || q.cov.rows() != k || p.cov.rows() != k) {
    throw InputError("gaussian_kl: dimension mismatch");
  }
  const CholeskyFactor lq = psd_cholesky(q.cov, policy);
  const CholeskyFactor lp = psd_cholesky(p.cov, policy);
  const Matrix w = lp.solve_lower(lq.lower());
  const Vector d = lp.solve_lower(Matrix(p.mean - q.mean));
  const double kl = 0.5 * (w.squaredNorm() + d.squaredNorm() - static_cast<double>(k) + lp.log_det() - lq.log_det());
  if (!std::isfinite(kl)) throw NumericalError("gaussian_kl: non-finite divergence");
  return std::max(kl, 0.0);
}

EvalPoints dedup_union(const PointSet& first, const PointSet& second) {
  EvalPoints out;
  std::vector<Eigen::Index> rows_first;
  std::vector<Eigen::Index> rows_second;
  auto seen = [&](const auto& row) {
    for (Eigen::Index r : rows_first) if (first.row(r) == row) return true;
    for (Eigen::Index r : rows_second) if (second.row(r) == row) return true;
    return false;
  };
  for (Eigen::Index i = 0; i < first.rows(); ++i) {
    if (!seen(first.row(i))) rows_first.push_back(i);
  }
  for (Eigen::Index i = 0; i < second.rows(); ++i) {
    if (!seen(second.row(i))) rows_second.push_back(i);
  }
  const Eigen::Index dim = first.rows() ? first.cols() : second.cols();
  out.points.resize(static_cast<Eigen::Index>(rows_first.size() + rows_second.size()), dim);
  Eigen::Index r = 0;
  for (Eigen::Index i : rows_first) {
    out.points.row(r++) = first.row(i);
    out.second_index.push_back(-1);
  }
  for (Eigen::Index i : rows_second) {
    out.points.row(r++) = second.row(i);
    out.second_index.push_back(i);
  }
  return out;
}

JitterPolicy kl_jitter_policy() { return {{1e-6, 1e-4, 1e-2}, 1e-12}; }

PointSet default_kl_points(const VariationalState& current, const PriorSnapshot& prior) {
  return dedup_union(prior.state().inducing, current.inducing).points;
}

double kl_new_old(const VariationalState& current, const PriorSnapshot& prior, const PointSet& eval_points) {
  if (eval_points.rows() == 0) throw InputError("kl_new_old: empty evaluation set");
  return gaussian_kl(predictive(current, eval_points), predictive(prior.state(), eval_points), kl_jitter_policy());
}

double kl_new_old(const VariationalState& current, const PriorSnapshot& prior) {
  return kl_new_old(current, prior, default_kl_points(current, prior));
}

namespace {

constexpr char kMagic[8] = {'O', 'P', 'A', 'C', 'G', 'P', 'V', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError("state dump: truncated");
  return value;
}

}  // namespace

std::size_t serialized_state_size(Eigen::Index num_inducing, Eigen::Index dim) {
  const auto m = static_cast<std::size_t>(num_inducing);
  const auto d = static_cast<std::size_t>(dim);
  const std::size_t doubles = d + 2 + m * d + m + m * (m + 1) / 2;
  return sizeof(kMagic) + 2 * sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t) + doubles * sizeof(double);
}

void write_state(std::ostream& out, const VariationalState& state) {
  state.validate();
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.params.family));
  const Eigen::Index m = state.num_inducing();
  const Eigen::Index d = state.dim();
  put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m));
  for (Eigen::Index i = 0; i < d; ++i) put(out, state.params.log_lengthscales[i]);
  put(out, state.params.log_signal_variance);
  put(out, state.params.log_noise_variance);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) put(out, state.inducing(i, j));
  for (Eigen::Index i = 0; i < m; ++i) put(out, state.mean[i]);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) put(out, state.scale_tril(i, j));
}

VariationalState read_state(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError("state dump: bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw ParseError("state dump: unsupported version");
  const auto family = get<std::uint32_t>(in);
  if (family != static_cast<std::uint32_t>(KernelFamily::rbf)) throw ParseError("state dump: unknown kernel family");
  const auto d = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto m = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  if (d < 1 || m < 1 || d > (1 << 20) || m > (1 << 20)) throw ParseError("state dump: implausible shape");

  VariationalState s;
  s.params.family = KernelFamily::rbf;
  s.params.log_lengthscales.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) s.params.log_lengthscales[i] = get<double>(in);
  s.params.log_signal_variance = get<double>(in);
  s.params.log_noise_variance = get<double>(in);
  s.inducing.resize(m, d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < d; ++j) s.inducing(i, j) = get<double>(in);
  s.mean.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) s.mean[i] = get<double>(in);
  s.scale_tril = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) s.scale_tril(i, j) = get<double>(in);
  try {
    s.validate();
  } catch (const InputError& e) {
    throw ParseError(std::string("state dump: ") + e.what());
  }
  return s;
}

std::string serialize_state(const VariationalState& state) {
  std::ostringstream out(std::ios::binary);
  write_state(out, state);
  return out.str();
}

VariationalState deserialize_state(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_state(in);
}

}  // namespace opacgp
