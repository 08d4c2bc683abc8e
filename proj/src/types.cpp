#include "xdgmm/types.hpp"

#include <cmath>

namespace xdgmm {

void NoisyPoint::validate() const {
    const auto d_obs = x.size();
    if (S.rows() != d_obs || S.cols() != d_obs) {
        throw ValidationError("noise covariance shape does not match observation");
    }
    if (((S - S.transpose()).array().abs() > 1e-9).any()) {
        throw ValidationError("noise covariance is not symmetric");
    }
    if (R) {
        if (R->rows() != d_obs) {
            throw ValidationError("projection row count does not match observation");
        }
    }
    if (d_obs > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
        const double scale = std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-9 * scale) {
            throw ValidationError("noise covariance has a negative eigenvalue");
        }
    }
}

void GmmParams::validate() const {
    const int K = k();
    if (K == 0 || static_cast<int>(means.size()) != K || static_cast<int>(covs.size()) != K) {
        throw ValidationError("mixture parameter arrays disagree on component count");
    }
    if ((alpha.array() <= 0.0).any()) {
        throw ValidationError("mixture weights must be strictly positive");
    }
    if (std::abs(alpha.sum() - 1.0) > 1e-9) {
        throw ValidationError("mixture weights must sum to 1");
    }
    const auto d = dim();
    for (int j = 0; j < K; ++j) {
        if (means[j].size() != d || covs[j].rows() != d || covs[j].cols() != d) {
            throw ValidationError("component " + std::to_string(j) + " has inconsistent shape");
        }
        if (((covs[j] - covs[j].transpose()).array().abs() > 1e-9).any()) {
            throw NumericalError("component covariance is not symmetric", j);
        }
        Eigen::LLT<Matrix> llt(covs[j]);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("component covariance is not positive definite", j);
        }
    }
}

}  // namespace xdgmm
