#include "xdgmm/transforms.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace xdgmm;

namespace {

UnconstrainedParams zero_unconstrained(int k, Eigen::Index d) {
    UnconstrainedParams u;
    u.z = Vector::Zero(k);
    u.means.assign(k, Vector::Zero(d));
    u.chol_lower.assign(k, Matrix::Zero(d, d));
    u.chol_logdiag.assign(k, Vector::Zero(d));
    return u;
}

}  // namespace

TEST_CASE("constrain: zero logits give uniform weights, zero factors give identity") {
    for (int k : {1, 3, 5}) {
        auto u = zero_unconstrained(k, 2);
        const auto p = constrain(u);
        for (int j = 0; j < k; ++j) {
            CHECK(p.alpha(j) == doctest::Approx(1.0 / k).epsilon(1e-15));
            CHECK((p.covs[j] - Matrix::Identity(2, 2)).norm() == 0.0);
        }
        CHECK_NOTHROW(p.validate());
    }
}

TEST_CASE("constrain: worked 2-D factor") {
    auto u = zero_unconstrained(1, 2);
    u.chol_logdiag[0] << std::log(2.0), std::log(3.0);
    u.chol_lower[0](1, 0) = 1.0;
    const auto p = constrain(u);
    Matrix want(2, 2);
    want << 4.0, 2.0, 2.0, 10.0;
    CHECK((p.covs[0] - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unconstrain: identity covariances and uniform weights map to zero") {
    GmmParams p;
    p.alpha = Vector::Constant(4, 0.25);
    p.means.assign(4, Vector::Zero(3));
    p.covs.assign(4, Matrix::Identity(3, 3));
    const auto u = unconstrain(p);
    CHECK(u.z.cwiseAbs().maxCoeff() < 1e-15);
    for (int j = 0; j < 4; ++j) {
        CHECK(u.chol_logdiag[j].cwiseAbs().maxCoeff() < 1e-15);
        CHECK(u.chol_lower[j].cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("unconstrain: worked Cholesky") {
    GmmParams p;
    p.alpha = Vector::Constant(1, 1.0);
    p.means.assign(1, Vector::Zero(2));
    Matrix V(2, 2);
    V << 4.0, 2.0, 2.0, 10.0;
    p.covs.assign(1, V);
    const auto u = unconstrain(p);
    CHECK(u.chol_logdiag[0](0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(u.chol_logdiag[0](1) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    CHECK(u.chol_lower[0](1, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("unconstrain: rejects an indefinite covariance, naming the component") {
    GmmParams p;
    p.alpha = Vector::Constant(2, 0.5);
    p.means.assign(2, Vector::Zero(2));
    p.covs.assign(2, Matrix::Identity(2, 2));
    p.covs[1] << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
    try {
        unconstrain(p);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.component == 1);
    }
}

TEST_CASE("round trips are identities to 1e-12 relative") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 5);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
        const auto p = oracles::random_gmm(k, d, rng);

        const auto u = unconstrain(p);
        const auto p2 = constrain(u);
        CHECK(oracles::rel_err(p2.alpha, p.alpha) < 1e-12);
        for (int j = 0; j < k; ++j) {
            CHECK(oracles::rel_err(p2.means[j], p.means[j]) < 1e-12);
            CHECK(oracles::rel_err(p2.covs[j], p.covs[j]) < 1e-12);
        }

        const auto u2 = unconstrain(p2);
        CHECK((u2.z - u.z).cwiseAbs().maxCoeff() < 1e-12);
        for (int j = 0; j < k; ++j) {
            CHECK(oracles::rel_err(u2.chol_logdiag[j], u.chol_logdiag[j]) < 1e-12);
        }
    }
}

TEST_CASE("softmax stays normalized and positive across the clamp range") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> unif(-30.0, 30.0);
    for (int trial = 0; trial < 100; ++trial) {
        Vector z(5);
        for (int i = 0; i < 5; ++i) z(i) = unif(rng);
        const Vector a = softmax(z);
        CHECK(std::abs(a.sum() - 1.0) < 1e-12);
        CHECK(a.minCoeff() > 0.0);
    }
}

TEST_CASE("constrain always produces SPD covariances") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> normal(0.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 3);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
        auto u = zero_unconstrained(k, d);
        for (int j = 0; j < k; ++j) {
            u.z(j) = normal(rng);
            for (Eigen::Index c = 0; c < d; ++c) {
                u.chol_logdiag[j](c) = normal(rng);
                for (Eigen::Index r = c + 1; r < d; ++r) u.chol_lower[j](r, c) = normal(rng);
            }
        }
        const auto p = constrain(u);
        for (int j = 0; j < k; ++j) {
            Eigen::LLT<Matrix> llt(p.covs[j]);
            CHECK(llt.info() == Eigen::Success);
        }
    }
}

TEST_CASE("log-diagonal clamp keeps constrain finite") {
    auto u = zero_unconstrained(1, 2);
    u.chol_logdiag[0] << 1e4, -1e4;
    const auto p = constrain(u);
    CHECK(p.covs[0].allFinite());
    CHECK(p.covs[0](0, 0) == doctest::Approx(std::exp(60.0)));
}

TEST_CASE("pack/unpack is a bijection on the free coordinates") {
    std::mt19937_64 rng(17);
    const int k = 3;
    const Eigen::Index d = 4;
    const auto p = oracles::random_gmm(k, d, rng);
    const auto u = unconstrain(p);
    const Vector theta = pack(u);
    CHECK(theta.size() == packed_size(k, d));
    const auto u2 = unpack(theta, k, d);
    CHECK((pack(u2) - theta).cwiseAbs().maxCoeff() == 0.0);
}
