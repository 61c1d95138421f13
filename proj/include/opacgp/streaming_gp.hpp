#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "opacgp/exact_gp.hpp"
#include "opacgp/kernels.hpp"
#include "opacgp/linalg.hpp"

namespace opacgp {

/// Sparse GP state: M inducing inputs and q(u) = N(m_u, S) with S = L L^T.
struct VariationalState {
  PointSet inducing;   // M x D
  Vector mean;         // m_u, length M
  Matrix scale_tril;   // lower-triangular L with positive diagonal
  KernelParams params;

  Eigen::Index num_inducing() const { return inducing.rows(); }
  Eigen::Index dim() const { return inducing.cols(); }
  Matrix covariance() const { return scale_tril * scale_tril.transpose(); }

  /// Throws InputError on inconsistent shapes, a non-triangular factor or a nonpositive diagonal.
  void validate() const;

  bool operator==(const VariationalState&) const = default;
};

/// Frozen copy of a state, used as the prior for the next online step.
class PriorSnapshot {
 public:
  PriorSnapshot(VariationalState state, std::size_t step) : state_(std::move(state)), step_(step) {}

  const VariationalState& state() const { return state_; }
  std::size_t step() const { return step_; }

 private:
  VariationalState state_;
  std::size_t step_;
};

PriorSnapshot snapshot(const VariationalState& state, std::size_t step = 0);
VariationalState restore(const PriorSnapshot& snap);

/// Latent predictive N(K_xz Kzz^{-1} m_u, K_xx - K_xz Kzz^{-1} (Kzz - S) Kzz^{-1} K_zx).
/// Observation noise is not added.
GaussianPosterior predictive(const VariationalState& state, const PointSet& test,
                             CovarianceMode mode = CovarianceMode::full);

/// KL(Q || P) between two Gaussians of equal dimension; clamped at zero.
double gaussian_kl(const GaussianPosterior& q, const GaussianPosterior& p, const JitterPolicy& policy = {});

/// Predictive covariances at a union of inducing sets are close to singular,
/// so the KL between them is taken with a jitter floor of 1e-6 relative.
JitterPolicy kl_jitter_policy();

/// Rows of `first` followed by rows of `second`, dropping any row that exactly
/// equals one already taken.
struct EvalPoints {
  PointSet points;
  /// For each row of points: index into `second` when the row was taken from it, else -1.
  std::vector<Eigen::Index> second_index;
};
EvalPoints dedup_union(const PointSet& first, const PointSet& second);

/// Default KL evaluation set: deduplicated union of old and new inducing inputs.
PointSet default_kl_points(const VariationalState& current, const PriorSnapshot& prior);

/// KL(q_new || q_old) between the two predictives at `eval_points`.
double kl_new_old(const VariationalState& current, const PriorSnapshot& prior, const PointSet& eval_points);
double kl_new_old(const VariationalState& current, const PriorSnapshot& prior);

/// Binary state dump (little-endian; layout documented in README). Size depends only on M and D.
void write_state(std::ostream& out, const VariationalState& state);
VariationalState read_state(std::istream& in);
std::string serialize_state(const VariationalState& state);
VariationalState deserialize_state(const std::string& bytes);
std::size_t serialized_state_size(Eigen::Index num_inducing, Eigen::Index dim);

namespace detail {

/// Intermediates of the sparse predictive, kept for gradient evaluation.
struct PredictiveTerms {
  CholeskyFactor kzz;   // factor of K(Z, Z) + jitter
  Matrix kzz_raw;       // K(Z, Z) without jitter
  Matrix kpz;           // K(P, Z)
  Matrix kpp;           // K(P, P); left empty when only marginals were requested
  Matrix proj;          // K(P, Z) (Kzz + jI)^{-1}
  Matrix gap;           // (Kzz + jI) - S
  Vector mean;
  Matrix cov;           // full covariance, or a diagonal matrix of marginals
};

PredictiveTerms predictive_terms(const VariationalState& state, const PointSet& points, bool full_cov);

}  // namespace detail

}  // namespace opacgp
