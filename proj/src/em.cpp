#include "xdgmm/em.hpp"

#include "xdgmm/em_kernels.hpp"
#include "xdgmm/parallel.hpp"
#include "xdgmm/schedule.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace xdgmm {

namespace {

constexpr double kDegenerateFloorFactor = 1e-8;

void check_not_degenerate(double q_hat, int component, int minibatch_size) {
    if (!(q_hat > kDegenerateFloorFactor * minibatch_size)) {
        throw NumericalError("component " + std::to_string(component) +
                                 " lost its responsibility mass (q_hat = " +
                                 std::to_string(q_hat) + ")",
                             component);
    }
}

kernels::ComponentMoments<double> component_batch_moments(const BatchStats& stats, int j) {
    const std::size_t n = stats.posteriors.size();
    std::vector<double> r(n);
    std::vector<Vector> b(n);
    std::vector<Matrix> B(n);
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = stats.posteriors[i].r(j);
        b[i] = stats.posteriors[i].b[j];
        B[i] = stats.posteriors[i].B[j];
    }
    auto m = kernels::batch_moments<double>(r, b, B);
    m.q *= stats.scale;
    return m;
}

}  // namespace

double EmConfig::step_size_at(int epoch) const {
    return piecewise_schedule(step_size, step_schedule, epoch);
}

void EmConfig::validate() const {
    if (minibatch_size < 1) throw ValidationError("minibatch size must be at least 1");
    if (epochs < 0) throw ValidationError("epoch count must be non-negative");
    if (reg_w < 0) throw ValidationError("reg_w must be non-negative");
    if (threads < 1) throw ValidationError("thread count must be at least 1");
    if (!(step_size > 0.0) || step_size > 1.0) {
        throw ValidationError("step size must lie in (0, 1]");
    }
    for (const auto& [epoch, value] : step_schedule) {
        if (epoch < 0 || !(value > 0.0) || value > 1.0) {
            throw ValidationError("step-size schedule entries must pair epoch >= 0 with a value in (0, 1]");
        }
    }
}

BatchStats minibatch_stats(const GmmParams& p, std::span<const NoisyPoint> batch, int threads) {
    if (batch.empty()) throw ValidationError("minibatch must be nonempty");
    const int K = p.k();
    const auto d = p.dim();

    BatchStats stats;
    stats.count = batch.size();
    stats.posteriors.resize(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        stats.posteriors[i] = e_step(p, batch[i], static_cast<long>(i));
    });

    stats.q = Vector::Zero(K);
    stats.s.assign(K, Vector::Zero(d));
    stats.S.assign(K, Matrix::Zero(d, d));
    for (const auto& post : stats.posteriors) {
        for (int j = 0; j < K; ++j) {
            const double r = post.r(j);
            stats.q(j) += r;
            stats.s[j].noalias() += r * post.b[j];
            stats.S[j].noalias() += r * (post.b[j] * post.b[j].transpose() + post.B[j]);
        }
    }
    return stats;
}

SuffStatAccumulator init_accumulator(const GmmParams& p, int minibatch_size) {
    const int K = p.k();
    SuffStatAccumulator acc;
    acc.q_hat = p.alpha * static_cast<double>(minibatch_size);
    acc.s_hat.reserve(K);
    acc.S_hat.reserve(K);
    for (int j = 0; j < K; ++j) {
        acc.s_hat.push_back(acc.q_hat(j) * p.means[j]);
        acc.S_hat.push_back(acc.q_hat(j) *
                            (p.covs[j] + p.means[j] * p.means[j].transpose()));
    }
    acc.mean = p.means;
    acc.cov = p.covs;
    return acc;
}

SuffStatAccumulator accumulate(const SuffStatAccumulator& acc, const BatchStats& stats,
                               double lambda) {
    const int K = acc.k();
    if (stats.q.size() != K) throw ValidationError("component counts disagree");
    const double keep = 1.0 - lambda;
    const double take = lambda * stats.scale;
    SuffStatAccumulator next;
    next.q_hat = keep * acc.q_hat + take * stats.q;
    next.s_hat.reserve(K);
    next.S_hat.reserve(K);
    for (int j = 0; j < K; ++j) {
        next.s_hat.push_back(keep * acc.s_hat[j] + take * stats.s[j]);
        next.S_hat.push_back(keep * acc.S_hat[j] + take * stats.S[j]);
    }
    // Raw-sums route: the stable (mean, cov) representation is not
    // maintained here.
    return next;
}

GmmParams m_step_naive(const SuffStatAccumulator& acc, int minibatch_size) {
    const int K = acc.k();
    GmmParams p;
    p.alpha.resize(K);
    p.means.reserve(K);
    p.covs.reserve(K);
    for (int j = 0; j < K; ++j) {
        check_not_degenerate(acc.q_hat(j), j, minibatch_size);
        const auto mom =
            kernels::normalize_sums<double>(acc.q_hat(j), acc.s_hat[j], acc.S_hat[j]);
        p.alpha(j) = acc.q_hat(j) / minibatch_size;
        p.means.push_back(mom.m);
        p.covs.push_back(0.5 * (mom.V + mom.V.transpose()));
    }
    return p;
}

Matrix adjust(const Matrix& V, double s, const Vector& c, const Vector& d) {
    return kernels::adjust<double>(V, s, c, d);
}

std::pair<GmmParams, SuffStatAccumulator> m_step_stable(const SuffStatAccumulator& acc,
                                                        const BatchStats& stats, double lambda,
                                                        int minibatch_size, double reg_w) {
    const int K = acc.k();
    if (static_cast<int>(acc.mean.size()) != K || static_cast<int>(acc.cov.size()) != K) {
        throw ValidationError("accumulator lacks the (mean, cov) state the stable update needs");
    }
    const auto d = acc.mean.front().size();

    GmmParams p;
    p.alpha.resize(K);
    p.means.reserve(K);
    p.covs.reserve(K);
    SuffStatAccumulator next;
    next.q_hat.resize(K);
    next.s_hat.reserve(K);
    next.S_hat.reserve(K);
    next.mean.reserve(K);
    next.cov.reserve(K);

    for (int j = 0; j < K; ++j) {
        kernels::ComponentMoments<double> prev{acc.q_hat(j), acc.mean[j], acc.cov[j]};
        auto batch = component_batch_moments(stats, j);
        if (!(batch.q > 0.0)) {
            // Component saw no responsibility mass in this batch; its batch
            // moments are undefined and must not contribute.
            batch.q = 0.0;
            batch.m = prev.m;
            batch.V = Matrix::Zero(d, d);
        }
        const auto nxt = kernels::stable_update<double>(prev, batch, lambda);
        check_not_degenerate(nxt.q, j, minibatch_size);

        next.q_hat(j) = nxt.q;
        next.s_hat.push_back(nxt.q * nxt.m);
        next.S_hat.push_back(nxt.q * (nxt.V + nxt.m * nxt.m.transpose()));
        next.mean.push_back(nxt.m);
        next.cov.push_back(nxt.V);

        p.alpha(j) = nxt.q / minibatch_size;
        p.means.push_back(nxt.m);
        Matrix V = 0.5 * (nxt.V + nxt.V.transpose());
        V.diagonal().array() += reg_w;
        p.covs.push_back(std::move(V));
    }
    return {std::move(p), std::move(next)};
}

nlohmann::json em_config_json(const EmConfig& cfg, int effective_minibatch) {
    return {
        {"mode", cfg.mode == EmConfig::Mode::batch ? "batch" : "minibatch"},
        {"minibatch_size", effective_minibatch},
        {"step_size", cfg.step_size},
        {"step_schedule", cfg.step_schedule},
        {"epochs", cfg.epochs},
        {"reg_w", cfg.reg_w},
        {"seed", cfg.seed},
        {"threads", cfg.threads},
    };
}

FitResult fit_em(std::span<const NoisyPoint> data, const GmmParams& init, const EmConfig& cfg,
                 const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.empty()) throw ValidationError("cannot fit an empty dataset");
    init.validate();
    if (init.dim() != data.front().dim_latent()) {
        throw ValidationError("initial model dimension does not match the data");
    }

    const std::size_t n = data.size();
    const bool batch_mode = cfg.mode == EmConfig::Mode::batch;
    const int M = batch_mode ? static_cast<int>(n) : cfg.minibatch_size;

    FitResult result;
    result.params = init;
    result.report.method = batch_mode ? "batch-em" : "minibatch-em";
    result.report.config = em_config_json(cfg, M);

    SuffStatAccumulator acc = init_accumulator(init, M);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    std::vector<NoisyPoint> scratch;
    long iteration = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch_mode) {
            const BatchStats stats = minibatch_stats(result.params, data, cfg.threads);
            acc = accumulate(acc, stats, 1.0);
            try {
                result.params = m_step_naive(acc, M);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " (iteration " +
                                         std::to_string(iteration) + ")",
                                     e.component, e.point, iteration);
            }
            for (auto& V : result.params.covs) V.diagonal().array() += cfg.reg_w;
            ++iteration;
        } else {
            const double lambda = cfg.step_size_at(epoch);
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(M)) {
                const std::size_t stop = std::min(n, start + static_cast<std::size_t>(M));
                scratch.clear();
                for (std::size_t i = start; i < stop; ++i) scratch.push_back(data[order[i]]);
                BatchStats stats = minibatch_stats(result.params, scratch, cfg.threads);
                if (stats.count < static_cast<std::size_t>(M)) {
                    stats.scale = static_cast<double>(M) / static_cast<double>(stats.count);
                    result.report.ragged_final_minibatch = true;
                }
                try {
                    std::tie(result.params, acc) =
                        m_step_stable(acc, stats, lambda, M, cfg.reg_w);
                } catch (const NumericalError& e) {
                    throw NumericalError(std::string(e.what()) + " (iteration " +
                                             std::to_string(iteration) + ")",
                                         e.component, e.point, iteration);
                }
                ++iteration;
            }
        }
        result.params.validate();

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_ll = mean_log_likelihood(result.params, data, cfg.threads);
        rec.wall_clock_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, result.params);
    }

    result.report.final_train_ll = result.report.epochs.empty()
                                       ? mean_log_likelihood(result.params, data, cfg.threads)
                                       : result.report.epochs.back().train_ll;
    result.report.validate();
    return result;
}

}  // namespace xdgmm
