#pragma once

#include <vector>

#include "opacgp/pacbayes.hpp"
#include "opacgp/streaming_gp.hpp"

namespace opacgp {

enum class ObjectiveKind { pacbayes, baseline_nll };

/// Flat, unconstrained optimizer coordinates of a VariationalState:
/// [log lengthscales (D), log signal var, log noise var, Z (M*D row-major),
///  v (M), Lv lower triangle row-major with softplus-inverse diagonal],
/// whitened by the jittered Cholesky factor Lz of K(Z, Z):
/// m_u = Lz v and S_factor = Lz Lv.
struct ParameterLayout {
  Eigen::Index dim = 0;
  Eigen::Index num_inducing = 0;

  static ParameterLayout of(const VariationalState& state);
  Eigen::Index hyper_size() const { return dim + 2; }
  Eigen::Index inducing_offset() const { return hyper_size(); }
  Eigen::Index mean_offset() const { return inducing_offset() + num_inducing * dim; }
  Eigen::Index factor_offset() const { return mean_offset() + num_inducing; }
  Eigen::Index size() const { return factor_offset() + num_inducing * (num_inducing + 1) / 2; }
};

Vector pack(const VariationalState& state);
/// Inverse of pack; shapes come from `layout`. Throws NumericalError when
/// K(Z, Z) cannot be factorized.
VariationalState unpack(const ParameterLayout& layout, const Vector& theta);

double softplus(double x);
double softplus_inverse(double y);

struct ObjectiveSettings {
  ObjectiveKind kind = ObjectiveKind::pacbayes;
  LossSpec loss;
  double lambda = 1.0;
  double delta = 0.05;
  double m_count = 1.0;
};

struct ObjectiveResult {
  /// The minimized quantity: J for pacbayes; batch NLL + KL for the baseline.
  double value = 0.0;
  /// PAC-Bayes decomposition, reported for both objective kinds.
  BoundReport report;
  double kl = 0.0;
  std::vector<PredictionMoments> moments;
  /// d value / d pack(state); empty unless requested.
  Vector grad;
};

/// Evaluates the online objective of `current` on one batch, with KL taken
/// against `prior` at the deduplicated union of both inducing sets.
ObjectiveResult evaluate_objective(const VariationalState& current, const PriorSnapshot& prior,
                                   const PointSet& batch_x, const Vector& batch_y,
                                   const ObjectiveSettings& settings, bool with_grad);

}  // namespace opacgp
