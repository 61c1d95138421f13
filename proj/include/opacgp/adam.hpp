#pragma once

#include <cstdint>

#include "opacgp/linalg.hpp"

namespace opacgp {

/// First/second moment buffers for Adam with bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  Vector m;
  Vector v;

  AdamState() = default;
  explicit AdamState(Eigen::Index size) : m(Vector::Zero(size)), v(Vector::Zero(size)) {}

  bool operator==(const AdamState&) const = default;
};

/// One Adam step with a per-coordinate learning rate. Advances opt.t and
/// returns the updated parameters.
Vector adam_update(AdamState& opt, const Vector& params, const Vector& grads, const Vector& lr);
Vector adam_update(AdamState& opt, const Vector& params, const Vector& grads, double lr);

}  // namespace opacgp
