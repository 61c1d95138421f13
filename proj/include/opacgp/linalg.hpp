#pragma once

#include <Eigen/Dense>

namespace opacgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Row-major point set: one input point per row, one column per input dimension.
using PointSet = Eigen::MatrixXd;

}  // namespace opacgp
