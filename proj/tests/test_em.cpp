#include "xdgmm/em.hpp"

#include "xdgmm/em_kernels.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace xdgmm;

namespace {

std::vector<NoisyPoint> random_noisy_points(int n, Eigen::Index d, std::mt19937_64& rng,
                                            double mean_scale = 2.0) {
    std::vector<NoisyPoint> pts;
    for (int i = 0; i < n; ++i) {
        NoisyPoint pt;
        pt.x = oracles::random_vector(d, rng, mean_scale);
        pt.S = oracles::random_spd(d, rng, 0.1);
        pts.push_back(std::move(pt));
    }
    return pts;
}

// Consistent random accumulator: q_hat > 0 with s_hat and S_hat derived
// from (m, V), which is exactly the state a fit maintains.
SuffStatAccumulator random_accumulator(int k, Eigen::Index d, int m_size, std::mt19937_64& rng) {
    GmmParams p = oracles::random_gmm(k, d, rng);
    return init_accumulator(p, m_size);
}

BatchStats random_batch_stats(const GmmParams& p, int n, std::mt19937_64& rng) {
    auto pts = random_noisy_points(n, p.dim(), rng);
    return minibatch_stats(p, pts);
}

}  // namespace

TEST_CASE("minibatch_stats: K=1 gives unit responsibilities") {
    std::mt19937_64 rng(2);
    const auto p = oracles::random_gmm(1, 2, rng);
    const auto pts = random_noisy_points(9, 2, rng);
    const auto stats = minibatch_stats(p, pts);
    CHECK(stats.q(0) == doctest::Approx(9.0).epsilon(1e-12));
    Vector s = Vector::Zero(2);
    Matrix S = Matrix::Zero(2, 2);
    for (const auto& post : stats.posteriors) {
        s += post.b[0];
        S += post.b[0] * post.b[0].transpose() + post.B[0];
    }
    CHECK(oracles::rel_err(stats.s[0], s) < 1e-12);
    CHECK(oracles::rel_err(stats.S[0], S) < 1e-12);
}

TEST_CASE("minibatch_stats: zero noise reduces the sums to raw moments") {
    std::mt19937_64 rng(4);
    const auto p = oracles::random_gmm(1, 2, rng);
    std::vector<NoisyPoint> pts;
    Vector sx = Vector::Zero(2);
    Matrix sxx = Matrix::Zero(2, 2);
    for (int i = 0; i < 6; ++i) {
        NoisyPoint pt;
        pt.x = oracles::random_vector(2, rng);
        pt.S = Matrix::Zero(2, 2);
        sx += pt.x;
        sxx += pt.x * pt.x.transpose();
        pts.push_back(std::move(pt));
    }
    const auto stats = minibatch_stats(p, pts);
    CHECK(oracles::rel_err(stats.s[0], sx) < 1e-9);
    CHECK(oracles::rel_err(stats.S[0], sxx) < 1e-8);
}

TEST_CASE("minibatch_stats matches an independent per-point loop") {
    std::mt19937_64 rng(6);
    const auto p = oracles::random_gmm(3, 2, rng);
    const auto pts = random_noisy_points(8, 2, rng);
    const auto stats = minibatch_stats(p, pts);
    CHECK(std::abs(stats.q.sum() - 8.0) < 1e-9);
    for (int j = 0; j < 3; ++j) {
        double q = 0.0;
        Vector s = Vector::Zero(2);
        Matrix S = Matrix::Zero(2, 2);
        for (const auto& pt : pts) {
            const auto post = e_step(p, pt);
            q += post.r(j);
            s += post.r(j) * post.b[j];
            S += post.r(j) * (post.b[j] * post.b[j].transpose() + post.B[j]);
        }
        CHECK(oracles::rel_err(stats.q(j), q) < 1e-12);
        CHECK(oracles::rel_err(stats.s[j], s) < 1e-12);
        CHECK(oracles::rel_err(stats.S[j], S) < 1e-12);
    }
}

TEST_CASE("accumulate: step-size limits") {
    std::mt19937_64 rng(8);
    const auto p = oracles::random_gmm(2, 2, rng);
    const auto acc = init_accumulator(p, 16);
    const auto stats = random_batch_stats(p, 16, rng);

    const auto unchanged = accumulate(acc, stats, 0.0);
    CHECK((unchanged.q_hat - acc.q_hat).cwiseAbs().maxCoeff() == 0.0);
    CHECK((unchanged.s_hat[0] - acc.s_hat[0]).cwiseAbs().maxCoeff() == 0.0);

    const auto replaced = accumulate(acc, stats, 1.0);
    CHECK((replaced.q_hat - stats.q).cwiseAbs().maxCoeff() == 0.0);
    CHECK((replaced.S_hat[1] - stats.S[1]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("accumulate: lambda 1/2 is the arithmetic mean") {
    SuffStatAccumulator acc;
    acc.q_hat = Vector::Constant(1, 4.0);
    acc.s_hat.assign(1, Vector::Constant(1, 4.0));
    acc.S_hat.assign(1, Matrix::Constant(1, 1, 8.0));
    BatchStats stats;
    stats.q = Vector::Constant(1, 2.0);
    stats.s.assign(1, Vector::Constant(1, 2.0));
    stats.S.assign(1, Matrix::Constant(1, 1, 4.0));
    const auto next = accumulate(acc, stats, 0.5);
    CHECK(next.q_hat(0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(next.s_hat[0](0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(next.S_hat[0](0, 0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("m_step_naive: single point and two-point population variance") {
    SuffStatAccumulator one;
    one.q_hat = Vector::Constant(1, 1.0);
    one.s_hat.assign(1, Vector::Constant(1, 2.5));
    one.S_hat.assign(1, Matrix::Constant(1, 1, 6.25));
    const auto p1 = m_step_naive(one, 1);
    CHECK(p1.alpha(0) == doctest::Approx(1.0));
    CHECK(p1.means[0](0) == doctest::Approx(2.5));
    CHECK(std::abs(p1.covs[0](0, 0)) < 1e-12);  // degenerate; reg_w floor rescues it

    SuffStatAccumulator two;  // points -1 and +1
    two.q_hat = Vector::Constant(1, 2.0);
    two.s_hat.assign(1, Vector::Constant(1, 0.0));
    two.S_hat.assign(1, Matrix::Constant(1, 1, 2.0));
    const auto p2 = m_step_naive(two, 2);
    CHECK(p2.means[0](0) == doctest::Approx(0.0));
    CHECK(p2.covs[0](0, 0) == doctest::Approx(1.0));
}

TEST_CASE("m_step_naive: weights normalize when the sums do") {
    std::mt19937_64 rng(10);
    const auto p = oracles::random_gmm(3, 2, rng);
    const auto acc = init_accumulator(p, 32);
    CHECK(std::abs(acc.q_hat.sum() - 32.0) < 1e-9);
    const auto fitted = m_step_naive(acc, 32);
    CHECK(std::abs(fitted.alpha.sum() - 1.0) < 1e-12);
}

TEST_CASE("m_step_naive: degenerate component is a loud error") {
    SuffStatAccumulator acc;
    acc.q_hat = Vector(2);
    acc.q_hat << 15.0, 1e-12;
    acc.s_hat.assign(2, Vector::Zero(1));
    acc.S_hat.assign(2, Matrix::Identity(1, 1));
    try {
        m_step_naive(acc, 16);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.component == 1);
    }
}

TEST_CASE("adjust: recentering onto the same mean is the identity") {
    std::mt19937_64 rng(12);
    const Matrix V = oracles::random_spd(3, rng);
    const Vector c = oracles::random_vector(3, rng, 10.0);
    CHECK(oracles::rel_err(adjust(V, 1.0, c, c), V) < 1e-12);
}

TEST_CASE("adjust: worked scalar example") {
    const Matrix V = Matrix::Constant(1, 1, 1.0);
    const Vector c = Vector::Constant(1, 1.0);
    const Vector d = Vector::Constant(1, 0.0);
    CHECK(adjust(V, 2.0, c, d)(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("adjust: difference-of-products form equals the direct form") {
    std::mt19937_64 rng(14);
    std::uniform_real_distribution<double> scale(0.1, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
        const Matrix V = oracles::random_spd(d, rng);
        const double s = scale(rng);
        const Vector c = oracles::random_vector(d, rng, 3.0);
        const Vector e = oracles::random_vector(d, rng, 3.0);
        const Matrix direct = s * (V + c * c.transpose()) - e * e.transpose();
        CHECK(oracles::rel_err(adjust(V, s, c, e), direct) < 1e-12);
    }
}

TEST_CASE("m_step_stable: lambda=0 leaves the parameters at the accumulator state") {
    std::mt19937_64 rng(16);
    const auto p = oracles::random_gmm(2, 2, rng);
    const auto acc = init_accumulator(p, 8);
    const auto stats = random_batch_stats(p, 8, rng);
    const auto [next, acc2] = m_step_stable(acc, stats, 0.0, 8);
    CHECK(oracles::rel_err(next.alpha, p.alpha) < 1e-12);
    for (int j = 0; j < 2; ++j) {
        CHECK(oracles::rel_err(next.means[j], p.means[j]) < 1e-12);
        CHECK(oracles::rel_err(next.covs[j], p.covs[j]) < 1e-12);
    }
}

TEST_CASE("m_step_stable: lambda=1 over the full set equals the batch M-step") {
    std::mt19937_64 rng(18);
    const auto p = oracles::random_gmm(3, 2, rng);
    const int n = 64;
    const auto stats = random_batch_stats(p, n, rng);
    const auto acc = init_accumulator(p, n);

    const auto batch_acc = accumulate(acc, stats, 1.0);
    const auto want = m_step_naive(batch_acc, n);
    const auto [got, acc2] = m_step_stable(acc, stats, 1.0, n);
    CHECK(oracles::rel_err(got.alpha, want.alpha) < 1e-10);
    for (int j = 0; j < 3; ++j) {
        CHECK(oracles::rel_err(got.means[j], want.means[j]) < 1e-10);
        CHECK(oracles::rel_err(got.covs[j], want.covs[j]) < 1e-10);
    }
}

TEST_CASE("m_step_stable agrees with the naive path on random states") {
    std::mt19937_64 rng(20);
    for (int trial = 0; trial < 40; ++trial) {
        const int k = 1 + static_cast<int>(rng() % 5);
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
        const int m_size = 8 + static_cast<int>(rng() % 9);
        std::uniform_real_distribution<double> lam(0.05, 1.0);
        const double lambda = lam(rng);

        const auto p = oracles::random_gmm(k, d, rng);
        const auto acc = init_accumulator(p, m_size);
        const auto stats = random_batch_stats(p, m_size, rng);

        const auto want = m_step_naive(accumulate(acc, stats, lambda), m_size);
        const auto [got, acc2] = m_step_stable(acc, stats, lambda, m_size);
        CHECK(oracles::rel_err(got.alpha, want.alpha) < 1e-10);
        for (int j = 0; j < k; ++j) {
            CHECK(oracles::rel_err(got.means[j], want.means[j]) < 1e-10);
            CHECK(oracles::rel_err(got.covs[j], want.covs[j]) < 1e-10);
        }
        // The refreshed S_hat must track the naive accumulator.
        const auto naive_acc = accumulate(acc, stats, lambda);
        for (int j = 0; j < k; ++j) {
            CHECK(oracles::rel_err(acc2.S_hat[j], naive_acc.S_hat[j]) < 1e-10);
        }
    }
}

TEST_CASE("single-precision: stable update survives large means, naive does not") {
    // Means of magnitude ~1e3 with unit variances; per-point posteriors are
    // generated in double and fed identically to every path.
    std::mt19937_64 rng(22);
    const Eigen::Index d = 2;
    const int k = 2;
    const int m_size = 256;
    const int steps = 40;
    const float lambda = 0.01f;

    std::vector<Vector> means{Vector::Constant(d, 1000.0), Vector::Constant(d, -997.0)};

    using DState = kernels::ComponentMoments<double>;
    using FState = kernels::ComponentMoments<float>;
    using FVec = kernels::Vec<float>;
    using FMat = kernels::Mat<float>;

    std::vector<DState> ref(k);
    std::vector<FState> stable(k);
    std::vector<double> naive_q(k);
    std::vector<Vector> naive_s(k);
    std::vector<Matrix> naive_S(k);
    std::vector<float> f_naive_q(k);
    std::vector<FVec> f_naive_s(k);
    std::vector<FMat> f_naive_S(k);
    for (int j = 0; j < k; ++j) {
        ref[j] = {0.5 * m_size, means[j], Matrix::Identity(d, d)};
        stable[j] = {static_cast<float>(ref[j].q), means[j].cast<float>(),
                     FMat::Identity(d, d)};
        naive_q[j] = ref[j].q;
        naive_s[j] = ref[j].q * means[j];
        naive_S[j] = ref[j].q * (Matrix::Identity(d, d) + means[j] * means[j].transpose());
        f_naive_q[j] = static_cast<float>(naive_q[j]);
        f_naive_s[j] = naive_s[j].cast<float>();
        f_naive_S[j] = naive_S[j].cast<float>();
    }

    for (int t = 0; t < steps; ++t) {
        // Synthetic posteriors: responsibilities near 0/1, conditional
        // means clustered at each component's location.
        std::vector<std::vector<double>> r(k, std::vector<double>(m_size));
        std::vector<std::vector<Vector>> b(k, std::vector<Vector>(m_size));
        std::vector<std::vector<Matrix>> B(k, std::vector<Matrix>(m_size));
        for (int i = 0; i < m_size; ++i) {
            const int home = i % 2;
            const double r0 = home == 0 ? 0.98 : 0.02;
            r[0][i] = r0;
            r[1][i] = 1.0 - r0;
            for (int j = 0; j < k; ++j) {
                b[j][i] = means[j] + oracles::random_vector(d, rng);
                B[j][i] = 0.05 * Matrix::Identity(d, d);
            }
        }

        for (int j = 0; j < k; ++j) {
            // Double reference: exponentially weighted raw sums.
            double q_b = 0.0;
            Vector s_b = Vector::Zero(d);
            Matrix S_b = Matrix::Zero(d, d);
            for (int i = 0; i < m_size; ++i) {
                q_b += r[j][i];
                s_b += r[j][i] * b[j][i];
                S_b += r[j][i] * (b[j][i] * b[j][i].transpose() + B[j][i]);
            }
            naive_q[j] = (1 - lambda) * naive_q[j] + lambda * q_b;
            naive_s[j] = (1 - lambda) * naive_s[j] + lambda * s_b;
            naive_S[j] = (1 - lambda) * naive_S[j] + lambda * S_b;
            ref[j] = kernels::normalize_sums<double>(naive_q[j], naive_s[j], naive_S[j]);

            // Float stable path.
            std::vector<float> fr(m_size);
            std::vector<FVec> fb(m_size);
            std::vector<FMat> fB(m_size);
            for (int i = 0; i < m_size; ++i) {
                fr[i] = static_cast<float>(r[j][i]);
                fb[i] = b[j][i].cast<float>();
                fB[i] = B[j][i].cast<float>();
            }
            const auto batch = kernels::batch_moments<float>(fr, fb, fB);
            stable[j] = kernels::stable_update<float>(stable[j], batch, lambda);

            // Float naive path.
            float fq_b = 0.0f;
            FVec fs_b = FVec::Zero(d);
            FMat fS_b = FMat::Zero(d, d);
            for (int i = 0; i < m_size; ++i) {
                fq_b += fr[i];
                fs_b += fr[i] * fb[i];
                fS_b += fr[i] * (fb[i] * fb[i].transpose() + fB[i]);
            }
            f_naive_q[j] = (1 - lambda) * f_naive_q[j] + lambda * fq_b;
            f_naive_s[j] = (1 - lambda) * f_naive_s[j] + lambda * fs_b;
            f_naive_S[j] = (1 - lambda) * f_naive_S[j] + lambda * fS_b;
        }
    }

    double stable_err = 0.0;
    double naive_err = 0.0;
    for (int j = 0; j < k; ++j) {
        const auto f_naive =
            kernels::normalize_sums<float>(f_naive_q[j], f_naive_s[j], f_naive_S[j]);
        stable_err = std::max(
            stable_err, oracles::rel_err(Matrix(stable[j].V.cast<double>()), ref[j].V));
        naive_err = std::max(
            naive_err, oracles::rel_err(Matrix(f_naive.V.cast<double>()), ref[j].V));
    }
    MESSAGE("float stable V error: " << stable_err << ", float naive V error: " << naive_err);
    CHECK(stable_err < 1e-3);
    CHECK(naive_err > stable_err);
}

TEST_CASE("fit_em: batch log-likelihood is non-decreasing without regularization") {
    std::mt19937_64 rng(24);
    const auto truth = oracles::random_gmm(2, 2, rng, 4.0);
    auto data = random_noisy_points(300, 2, rng);
    for (auto& pt : data) pt.x += truth.means[rng() % 2];

    EmConfig cfg;
    cfg.mode = EmConfig::Mode::batch;
    cfg.epochs = 12;
    cfg.reg_w = 0.0;
    const auto init = oracles::random_gmm(2, 2, rng, 1.0);
    const auto result = fit_em(data, init, cfg);

    for (std::size_t i = 1; i < result.report.epochs.size(); ++i) {
        CHECK(result.report.epochs[i].train_ll >=
              result.report.epochs[i - 1].train_ll - 1e-8);
    }
}

TEST_CASE("fit_em: minibatch with lambda=1 and M=N reproduces batch mode") {
    std::mt19937_64 rng(26);
    auto data = random_noisy_points(120, 2, rng);
    const auto init = oracles::random_gmm(3, 2, rng);

    EmConfig batch_cfg;
    batch_cfg.mode = EmConfig::Mode::batch;
    batch_cfg.epochs = 4;
    batch_cfg.reg_w = 1e-3;

    EmConfig mini_cfg = batch_cfg;
    mini_cfg.mode = EmConfig::Mode::minibatch;
    mini_cfg.minibatch_size = 120;
    mini_cfg.step_size = 1.0;
    mini_cfg.step_schedule.clear();

    std::vector<GmmParams> batch_traj;
    std::vector<GmmParams> mini_traj;
    fit_em(data, init, batch_cfg,
           [&](const EpochRecord&, const GmmParams& p) { batch_traj.push_back(p); });
    fit_em(data, init, mini_cfg,
           [&](const EpochRecord&, const GmmParams& p) { mini_traj.push_back(p); });

    REQUIRE(batch_traj.size() == mini_traj.size());
    for (std::size_t e = 0; e < batch_traj.size(); ++e) {
        CHECK(oracles::rel_err(mini_traj[e].alpha, batch_traj[e].alpha) < 1e-10);
        for (int j = 0; j < 3; ++j) {
            CHECK(oracles::rel_err(mini_traj[e].means[j], batch_traj[e].means[j]) < 1e-10);
            CHECK(oracles::rel_err(mini_traj[e].covs[j], batch_traj[e].covs[j]) < 1e-10);
        }
    }
}

TEST_CASE("fit_em: weights stay normalized through ragged minibatches") {
    std::mt19937_64 rng(28);
    auto data = random_noisy_points(53, 2, rng);  // 53 = 3 * 16 + 5
    const auto init = oracles::random_gmm(2, 2, rng);
    EmConfig cfg;
    cfg.minibatch_size = 16;
    cfg.epochs = 3;
    bool weights_ok = true;
    const auto result = fit_em(data, init, cfg, [&](const EpochRecord&, const GmmParams& p) {
        weights_ok = weights_ok && std::abs(p.alpha.sum() - 1.0) < 1e-6;
    });
    CHECK(weights_ok);
    CHECK(result.report.ragged_final_minibatch);
    for (const auto& V : result.params.covs) {
        CHECK(Eigen::LLT<Matrix>(V).info() == Eigen::Success);
    }
}

TEST_CASE("fit_em: trajectories are independent of the thread count") {
    std::mt19937_64 rng(30);
    auto data = random_noisy_points(90, 2, rng);
    const auto init = oracles::random_gmm(2, 2, rng);
    EmConfig cfg;
    cfg.minibatch_size = 32;
    cfg.epochs = 3;
    cfg.seed = 5;
    EmConfig cfg2 = cfg;
    cfg2.threads = 2;
    const auto a = fit_em(data, init, cfg);
    const auto b = fit_em(data, init, cfg2);
    CHECK((a.params.alpha - b.params.alpha).cwiseAbs().maxCoeff() == 0.0);
    for (int j = 0; j < 2; ++j) {
        CHECK((a.params.means[j] - b.params.means[j]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.params.covs[j] - b.params.covs[j]).cwiseAbs().maxCoeff() == 0.0);
    }
    for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
        CHECK(a.report.epochs[e].train_ll == b.report.epochs[e].train_ll);
    }
}

TEST_CASE("EmConfig: schedule breakpoints are piecewise constant") {
    EmConfig cfg;
    cfg.step_size = 0.01;
    cfg.step_schedule = {{10, 0.005}, {15, 0.001}};
    CHECK(cfg.step_size_at(0) == 0.01);
    CHECK(cfg.step_size_at(9) == 0.01);
    CHECK(cfg.step_size_at(10) == 0.005);
    CHECK(cfg.step_size_at(14) == 0.005);
    CHECK(cfg.step_size_at(15) == 0.001);
    CHECK(cfg.step_size_at(19) == 0.001);
}

TEST_CASE("EmConfig: invalid settings are rejected") {
    EmConfig cfg;
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.step_size = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.minibatch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.reg_w = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
