#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xdgmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Config or input is malformed (shapes, flags, file contents).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during fitting (non-SPD matrix, degenerate component,
// NaN loss).  Indices are -1 when not applicable.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg, int component = -1,
                            long point = -1, long iteration = -1)
        : std::runtime_error(msg), component(component), point(point), iteration(iteration) {}

    int component;
    long point;
    long iteration;
};

// One observation: x = R v + eps, eps ~ N(0, S).  R absent means identity
// (observed and latent dimensions coincide).
struct NoisyPoint {
    Vector x;
    Matrix S;
    std::optional<Matrix> R;

    Eigen::Index dim_obs() const { return x.size(); }
    Eigen::Index dim_latent() const { return R ? R->cols() : x.size(); }

    // Projects a latent-space vector into observation space.
    Vector project(const Vector& v) const { return R ? Vector(*R * v) : v; }

    // S must be symmetric (1e-9 absolute) and PSD; R shape must match.
    void validate() const;
};

// Mixture parameters: weights alpha (positive, sum to 1), means, SPD
// covariances.  All in the latent space of dimension dim().
struct GmmParams {
    Vector alpha;
    std::vector<Vector> means;
    std::vector<Matrix> covs;

    int k() const { return static_cast<int>(alpha.size()); }
    Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }

    void validate() const;
};

// Unconstrained coordinates for gradient-based fitting: logits z for the
// weights, raw means, and per-component Cholesky factors split into a
// strictly-lower block and the log of the diagonal.  chol_lower stores a
// full d x d matrix whose diagonal and upper triangle are zero.
struct UnconstrainedParams {
    Vector z;
    std::vector<Vector> means;
    std::vector<Matrix> chol_lower;
    std::vector<Vector> chol_logdiag;

    int k() const { return static_cast<int>(z.size()); }
    Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
};

// Running estimates of the per-component sufficient-statistic sums.
// q_hat/s_hat/S_hat follow the exponentially weighted recursion; mean/cov
// hold the equivalent (m, V) representation, which the stable covariance
// update consumes so that V is never recovered from S_hat by subtraction.
// Invariant: S_hat[j] == q_hat[j] * (cov[j] + mean[j] mean[j]^T).
struct SuffStatAccumulator {
    Vector q_hat;
    std::vector<Vector> s_hat;
    std::vector<Matrix> S_hat;
    std::vector<Vector> mean;
    std::vector<Matrix> cov;

    int k() const { return static_cast<int>(q_hat.size()); }
};

}  // namespace xdgmm
