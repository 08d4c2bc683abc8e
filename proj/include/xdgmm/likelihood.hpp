#pragma once

#include "xdgmm/types.hpp"

#include <span>

namespace xdgmm {

// Posterior quantities for one datapoint: responsibilities r (sum to 1),
// conditional latent means b and covariances B per component, and the log
// mixture density of the point.
struct ComponentPosterior {
    Vector r;
    std::vector<Vector> b;
    std::vector<Matrix> B;
    double logdens = 0.0;
};

// T = R V R^T + S; reduces to V + S when R is the identity.
Matrix convolved_cov(const Matrix& V, const NoisyPoint& point);

// Cholesky of a convolved covariance.  If the factorization fails, adds
// 1e-9 * mean(diag T) * I once and retries; the second failure throws
// NumericalError carrying the component (and point, when the caller knows
// it).
Eigen::LLT<Matrix> factor_convolved_cov(Matrix T, int component, long point = -1);

// log N(x | mu, T) evaluated from a precomputed Cholesky factor of T.
double gaussian_logpdf(const Vector& x, const Vector& mu, const Eigen::LLT<Matrix>& llt);

// Per-point log mixture density log sum_j alpha_j N(x | R m_j, T_j),
// log-sum-exp over components.
double point_log_density(const GmmParams& p, const NoisyPoint& point, long point_index = -1);

// Total log-likelihood over the dataset, summed in dataset order.  threads
// parallelizes the per-point work; the reduction order is fixed, so the
// result does not depend on the thread count.
double log_likelihood(const GmmParams& p, std::span<const NoisyPoint> data, int threads = 1);

// Mean per-point log-likelihood in nats (the reporting unit).
double mean_log_likelihood(const GmmParams& p, std::span<const NoisyPoint> data, int threads = 1);

// Full E-step for one point: responsibilities in log space, then
// b_j = m_j + V_j R^T T_j^{-1} (x - R m_j) and
// B_j = V_j - V_j R^T T_j^{-1} R V_j via Cholesky solves.
ComponentPosterior e_step(const GmmParams& p, const NoisyPoint& point, long point_index = -1);

}  // namespace xdgmm
