#include "xdgmm/transforms.hpp"

#include <cmath>

namespace xdgmm {

Vector softmax(const Vector& z) {
    const double zmax = z.maxCoeff();
    Vector e = (z.array() - zmax).exp();
    return e / e.sum();
}

Matrix cholesky_factor(const UnconstrainedParams& u, int j) {
    const auto d = u.dim();
    Matrix L = u.chol_lower[j].template triangularView<Eigen::StrictlyLower>();
    for (Eigen::Index q = 0; q < d; ++q) {
        const double t = std::clamp(u.chol_logdiag[j](q), -kLogDiagClamp, kLogDiagClamp);
        L(q, q) = std::exp(t);
    }
    return L;
}

GmmParams constrain(const UnconstrainedParams& u) {
    const int K = u.k();
    GmmParams p;
    p.alpha = softmax(u.z);
    p.means = u.means;
    p.covs.reserve(K);
    for (int j = 0; j < K; ++j) {
        const Matrix L = cholesky_factor(u, j);
        p.covs.push_back(L * L.transpose());
    }
    return p;
}

UnconstrainedParams unconstrain(const GmmParams& p) {
    const int K = p.k();
    UnconstrainedParams u;
    u.z = p.alpha.array().log();
    u.z.array() -= u.z.mean();  // gauge: logits are translation-invariant
    u.means = p.means;
    u.chol_lower.reserve(K);
    u.chol_logdiag.reserve(K);
    for (int j = 0; j < K; ++j) {
        Eigen::LLT<Matrix> llt(p.covs[j]);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("covariance of component " + std::to_string(j) +
                                     " is not positive definite",
                                 j);
        }
        Matrix L = llt.matrixL();
        u.chol_logdiag.push_back(L.diagonal().array().log());
        L.diagonal().setZero();
        u.chol_lower.push_back(Matrix(L.template triangularView<Eigen::StrictlyLower>()));
    }
    return u;
}

Eigen::Index packed_size(int K, Eigen::Index d) {
    return K + 2 * K * d + K * d * (d - 1) / 2;
}

Vector pack(const UnconstrainedParams& u) {
    const int K = u.k();
    const auto d = u.dim();
    Vector theta(packed_size(K, d));
    Eigen::Index at = 0;
    theta.segment(at, K) = u.z;
    at += K;
    for (int j = 0; j < K; ++j, at += d) theta.segment(at, d) = u.means[j];
    for (int j = 0; j < K; ++j, at += d) theta.segment(at, d) = u.chol_logdiag[j];
    for (int j = 0; j < K; ++j) {
        for (Eigen::Index c = 0; c < d; ++c) {
            for (Eigen::Index r = c + 1; r < d; ++r) theta(at++) = u.chol_lower[j](r, c);
        }
    }
    return theta;
}

UnconstrainedParams unpack(const Vector& theta, int K, Eigen::Index d) {
    if (theta.size() != packed_size(K, d)) {
        throw ValidationError("packed parameter vector has the wrong length");
    }
    UnconstrainedParams u;
    Eigen::Index at = 0;
    u.z = theta.segment(at, K);
    at += K;
    u.means.reserve(K);
    for (int j = 0; j < K; ++j, at += d) u.means.push_back(theta.segment(at, d));
    u.chol_logdiag.reserve(K);
    for (int j = 0; j < K; ++j, at += d) u.chol_logdiag.push_back(theta.segment(at, d));
    u.chol_lower.assign(K, Matrix::Zero(d, d));
    for (int j = 0; j < K; ++j) {
        for (Eigen::Index c = 0; c < d; ++c) {
            for (Eigen::Index r = c + 1; r < d; ++r) u.chol_lower[j](r, c) = theta(at++);
        }
    }
    return u;
}

}  // namespace xdgmm
