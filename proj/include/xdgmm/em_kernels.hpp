#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

// Scalar-generic kernels for the minibatch EM update.  The double-precision
// fitter and the single-precision stress tests share this code, so the
// stable covariance recursion is exercised in both widths.

namespace xdgmm::kernels {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Recenters a scaled covariance about a new mean:
//   adjust(V, s, c, d) = s (V + c c^T) - d d^T.
// Evaluated as s V + sym(u - d, u + d) with u = sqrt(s) c, which avoids
// forming the large rank-one products that cancel when |c|, |d| >> |V|.
template <typename Scalar>
Mat<Scalar> adjust(const Mat<Scalar>& V, Scalar s, const Vec<Scalar>& c, const Vec<Scalar>& d) {
    const Vec<Scalar> u = std::sqrt(s) * c;
    const Vec<Scalar> diff = u - d;
    const Vec<Scalar> sum = u + d;
    Mat<Scalar> out = s * V;
    out.noalias() += Scalar(0.5) * (diff * sum.transpose());
    out.noalias() += Scalar(0.5) * (sum * diff.transpose());
    return out;
}

// One component's sufficient-statistic state in (q, m, V) form.
template <typename Scalar>
struct ComponentMoments {
    Scalar q;
    Vec<Scalar> m;
    Mat<Scalar> V;
};

// Exact minibatch moments for one component from per-point responsibilities
// r_i, conditional means b_i and conditional covariances B_i:
//   q_b = sum r_i,  m_b = sum r_i b_i / q_b,
//   V_b = sum r_i [(b_i - m_b)(b_i - m_b)^T + B_i] / q_b.
// Two passes: the recentering against m_b is what keeps V_b small when the
// means are large.
template <typename Scalar>
ComponentMoments<Scalar> batch_moments(const std::vector<Scalar>& r,
                                       const std::vector<Vec<Scalar>>& b,
                                       const std::vector<Mat<Scalar>>& B) {
    const std::size_t n = r.size();
    const Eigen::Index d = b.front().size();
    ComponentMoments<Scalar> out;
    out.q = Scalar(0);
    Vec<Scalar> s = Vec<Scalar>::Zero(d);
    for (std::size_t i = 0; i < n; ++i) {
        out.q += r[i];
        s.noalias() += r[i] * b[i];
    }
    out.m = s / out.q;
    out.V = Mat<Scalar>::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec<Scalar> c = b[i] - out.m;
        out.V.noalias() += r[i] * (c * c.transpose());
        out.V.noalias() += r[i] * B[i];
    }
    out.V /= out.q;
    return out;
}

// The stable minibatch update for one component.  Given the previous
// running state and the exact minibatch moments, with step size lambda:
//   q_t = (1 - lambda) q_{t-1} + lambda q_b
//   m_t = ((1 - lambda) q_{t-1} m_{t-1} + lambda q_b m_b) / q_t
//   V_t = (1 - lambda) adjust(V_{t-1}, q_{t-1}/q_t, m_{t-1}, m_t)
//       +      lambda  adjust(V_b,     q_b    /q_t, m_b,     m_t)
// which equals S_hat_t / q_t - m_t m_t^T without ever forming S_hat.
//
// The V_t expression is evaluated in its pooled form
//   V_t = w1 (V_{t-1} + d1 d1^T) + w2 (V_b + d2 d2^T),
//   w1 = (1-lambda) q_{t-1} / q_t,  w2 = lambda q_b / q_t,  d_i = m_i - m_t,
// which is algebraically identical (w1 + w2 = 1 and m_t is the w-weighted
// mean) but keeps every product at difference scale.  The adjust
// composition, taken literally, multiplies rounded scalar ratios against
// m m^T-sized terms and loses |m|^2 eps per step, which single precision
// cannot afford when means are large.
template <typename Scalar>
ComponentMoments<Scalar> stable_update(const ComponentMoments<Scalar>& prev,
                                       const ComponentMoments<Scalar>& batch, Scalar lambda) {
    ComponentMoments<Scalar> next;
    const Scalar keep = Scalar(1) - lambda;
    next.q = keep * prev.q + lambda * batch.q;
    next.m = (keep * prev.q * prev.m + lambda * batch.q * batch.m) / next.q;
    const Scalar w1 = keep * prev.q / next.q;
    const Scalar w2 = lambda * batch.q / next.q;
    const Vec<Scalar> d1 = prev.m - next.m;
    const Vec<Scalar> d2 = batch.m - next.m;
    next.V = w1 * prev.V + w2 * batch.V;
    next.V.noalias() += w1 * (d1 * d1.transpose());
    next.V.noalias() += w2 * (d2 * d2.transpose());
    return next;
}

// The direct normalization of accumulated sums (the cancellation-prone
// form): m = s / q, V = S / q - m m^T.
template <typename Scalar>
ComponentMoments<Scalar> normalize_sums(Scalar q, const Vec<Scalar>& s, const Mat<Scalar>& S) {
    ComponentMoments<Scalar> out;
    out.q = q;
    out.m = s / q;
    out.V = S / q;
    out.V.noalias() -= out.m * out.m.transpose();
    return out;
}

}  // namespace xdgmm::kernels
