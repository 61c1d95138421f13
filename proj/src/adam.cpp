#include "opacgp/adam.hpp"

#include <cmath>

#include "opacgp/errors.hpp"

namespace opacgp {

Vector adam_update(AdamState& opt, const Vector& params, const Vector& grads, const Vector& lr) {
  const Eigen::Index n = params.size();
  if (grads.size() != n || lr.size() != n) throw InputError("adam: size mismatch");
  if (opt.m.size() != n) {
    if (opt.t != 0) throw InputError("adam: moment buffers do not match parameter count");
    opt.m = Vector::Zero(n);
    opt.v = Vector::Zero(n);
  }
  opt.t += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  Vector out = params;
  for (Eigen::Index i = 0; i < n; ++i) {
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i] * grads[i];
    const double m_hat = opt.m[i] / c1;
    const double v_hat = opt.v[i] / c2;
    out[i] -= lr[i] * m_hat / (std::sqrt(v_hat) + opt.eps);
  }
  return out;
}

Vector adam_update(AdamState& opt, const Vector& params, const Vector& grads, double lr) {
  return adam_update(opt, params, grads, Vector::Constant(params.size(), lr).eval());
}

}  // namespace opacgp
