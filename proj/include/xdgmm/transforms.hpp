#pragma once

#include "xdgmm/types.hpp"

namespace xdgmm {

// Bound on chol_logdiag inside constrain; keeps exp() finite during
// optimization without affecting any realistic optimum.
inline constexpr double kLogDiagClamp = 30.0;

// Numerically stable softmax; output is strictly positive and sums to 1.
Vector softmax(const Vector& z);

// Maps unconstrained coordinates to valid mixture parameters:
// alpha = softmax(z), L_j = strict lower + diag(exp(clamped logdiag)),
// V_j = L_j L_j^T.  Total map; always yields SPD covariances.
GmmParams constrain(const UnconstrainedParams& u);

// Inverse map.  The logits are gauged by subtracting their mean so that
// round trips are deterministic.  Throws NumericalError naming the
// component if a covariance is not SPD.
UnconstrainedParams unconstrain(const GmmParams& p);

// Assembles the Cholesky factor of component j under the clamp rule.
Matrix cholesky_factor(const UnconstrainedParams& u, int j);

// Packed coordinates for the optimizer: z, then means, then chol_logdiag,
// then the strictly-lower entries column by column, component-major within
// each block.  Size = K + 2 K d + K d (d - 1) / 2.
Eigen::Index packed_size(int K, Eigen::Index d);
Vector pack(const UnconstrainedParams& u);
UnconstrainedParams unpack(const Vector& theta, int K, Eigen::Index d);

}  // namespace xdgmm
