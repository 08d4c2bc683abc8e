#include "xdgmm/likelihood.hpp"

#include "xdgmm/parallel.hpp"

#include <cmath>

namespace xdgmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// log alpha_j + log N(x | R m_j, T_j) for every component.
Vector component_log_joint(const GmmParams& p, const NoisyPoint& point, long point_index) {
    const int K = p.k();
    Vector lj(K);
    for (int j = 0; j < K; ++j) {
        const Matrix T = convolved_cov(p.covs[j], point);
        const auto llt = factor_convolved_cov(T, j, point_index);
        lj(j) = std::log(p.alpha(j)) + gaussian_logpdf(point.x, point.project(p.means[j]), llt);
    }
    return lj;
}

double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

Matrix convolved_cov(const Matrix& V, const NoisyPoint& point) {
    if (point.R) {
        return *point.R * V * point.R->transpose() + point.S;
    }
    return V + point.S;
}

Eigen::LLT<Matrix> factor_convolved_cov(Matrix T, int component, long point) {
    Eigen::LLT<Matrix> llt(T);
    if (llt.info() == Eigen::Success) return llt;
    // One bounded retry keeps behaviour deterministic for rank-deficient S.
    const double jitter = 1e-9 * T.diagonal().mean();
    T.diagonal().array() += jitter;
    llt.compute(T);
    if (llt.info() == Eigen::Success) return llt;
    std::string msg = "convolved covariance is not positive definite (component " +
                      std::to_string(component);
    if (point >= 0) msg += ", point " + std::to_string(point);
    msg += ")";
    throw NumericalError(msg, component, point);
}

double gaussian_logpdf(const Vector& x, const Vector& mu, const Eigen::LLT<Matrix>& llt) {
    const Matrix& L = llt.matrixLLT();
    const Vector z = llt.matrixL().solve(x - mu);
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
    return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + z.squaredNorm()) - logdet;
}

double point_log_density(const GmmParams& p, const NoisyPoint& point, long point_index) {
    return log_sum_exp(component_log_joint(p, point, point_index));
}

double log_likelihood(const GmmParams& p, std::span<const NoisyPoint> data, int threads) {
    std::vector<double> per_point(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        per_point[i] = point_log_density(p, data[i], static_cast<long>(i));
    });
    double total = 0.0;
    for (double v : per_point) total += v;
    return total;
}

double mean_log_likelihood(const GmmParams& p, std::span<const NoisyPoint> data, int threads) {
    if (data.empty()) throw ValidationError("cannot evaluate the likelihood of an empty dataset");
    return log_likelihood(p, data, threads) / static_cast<double>(data.size());
}

ComponentPosterior e_step(const GmmParams& p, const NoisyPoint& point, long point_index) {
    const int K = p.k();
    ComponentPosterior post;
    const Vector lj = component_log_joint(p, point, point_index);
    post.logdens = log_sum_exp(lj);
    post.r = (lj.array() - post.logdens).exp();
    post.r /= post.r.sum();
    post.b.reserve(K);
    post.B.reserve(K);
    for (int j = 0; j < K; ++j) {
        const Matrix& V = p.covs[j];
        const Matrix T = convolved_cov(V, point);
        const auto llt = factor_convolved_cov(T, j, point_index);
        // RV = R V (or V itself for identity R); everything below goes
        // through solves with the factor of T, never an explicit inverse.
        const Matrix RV = point.R ? Matrix(*point.R * V) : V;
        const Vector resid = point.x - point.project(p.means[j]);
        post.b.push_back(p.means[j] + RV.transpose() * llt.solve(resid));
        Matrix B = V - RV.transpose() * llt.solve(RV);
        post.B.push_back(0.5 * (B + B.transpose()));
    }
    return post;
}

}  // namespace xdgmm
