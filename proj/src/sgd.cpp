#include "xdgmm/sgd.hpp"

#include "xdgmm/parallel.hpp"
#include "xdgmm/schedule.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace xdgmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct PointContribution {
    double log_density = 0.0;
    Vector resp;                 // r_ij
    std::vector<Vector> g_mean;  // d(log p_i)/d(m_j)
    std::vector<Matrix> g_cov;   // d(log p_i)/d(V_j), full-matrix convention
};

// Per-point log density plus, when want_grad, its gradients with respect to
// the constrained means and covariances.  The chain rule back to the
// unconstrained coordinates happens once per batch in loss_grad.
PointContribution point_contribution(const GmmParams& p, const NoisyPoint& point,
                                     bool want_grad) {
    const int K = p.k();
    PointContribution out;
    Vector lj(K);
    std::vector<Vector> a(K);          // T^{-1} (x - R m_j)
    std::vector<Eigen::LLT<Matrix>> llts;
    llts.reserve(K);
    for (int j = 0; j < K; ++j) {
        const Matrix T = convolved_cov(p.covs[j], point);
        llts.push_back(factor_convolved_cov(T, j));
        const Vector resid = point.x - point.project(p.means[j]);
        a[j] = llts[j].solve(resid);
        const Matrix& L = llts[j].matrixLLT();
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
        lj(j) = std::log(p.alpha(j)) -
                0.5 * (static_cast<double>(point.x.size()) * kLog2Pi + resid.dot(a[j])) - logdet;
    }
    const double lmax = lj.maxCoeff();
    out.log_density = lmax + std::log((lj.array() - lmax).exp().sum());
    out.resp = (lj.array() - out.log_density).exp();
    out.resp /= out.resp.sum();

    if (want_grad) {
        const auto d_obs = point.x.size();
        out.g_mean.reserve(K);
        out.g_cov.reserve(K);
        for (int j = 0; j < K; ++j) {
            const double r = out.resp(j);
            // d(log N)/d(m) = R^T a;  d(log N)/d(T) = (a a^T - T^{-1}) / 2.
            const Matrix Tinv = llts[j].solve(Matrix::Identity(d_obs, d_obs));
            const Matrix gT = 0.5 * (a[j] * a[j].transpose() - Tinv);
            if (point.R) {
                out.g_mean.push_back(r * (point.R->transpose() * a[j]));
                out.g_cov.push_back(r * (point.R->transpose() * gT * *point.R));
            } else {
                out.g_mean.push_back(r * a[j]);
                out.g_cov.push_back(r * gT);
            }
        }
    }
    return out;
}

double trace_penalty(const GmmParams& p, double reg_w) {
    double penalty = 0.0;
    for (const auto& V : p.covs) penalty += reg_w / V.trace();
    return penalty;
}

bool all_finite(const UnconstrainedParams& u) {
    if (!u.z.allFinite()) return false;
    for (const auto& m : u.means)
        if (!m.allFinite()) return false;
    for (const auto& L : u.chol_lower)
        if (!L.allFinite()) return false;
    for (const auto& v : u.chol_logdiag)
        if (!v.allFinite()) return false;
    return true;
}

}  // namespace

double SgdConfig::learning_rate_at(int epoch) const {
    return piecewise_schedule(learning_rate, lr_schedule, epoch);
}

void SgdConfig::validate() const {
    if (minibatch_size < 1) throw ValidationError("minibatch size must be at least 1");
    if (epochs < 0) throw ValidationError("epoch count must be non-negative");
    if (reg_w < 0) throw ValidationError("reg_w must be non-negative");
    if (threads < 1) throw ValidationError("thread count must be at least 1");
    if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be non-negative");
    for (const auto& [epoch, value] : lr_schedule) {
        if (epoch < 0 || !(value >= 0.0)) {
            throw ValidationError("learning-rate schedule entries must pair epoch >= 0 with a non-negative rate");
        }
    }
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0)) throw ValidationError("Adam epsilon must be positive");
}

AdamState AdamState::zeros(int K, Eigen::Index d) {
    AdamState st;
    const Vector flat = Vector::Zero(packed_size(K, d));
    st.first = unpack(flat, K, d);
    st.second = unpack(flat, K, d);
    st.t = 0;
    return st;
}

double loss(const UnconstrainedParams& u, std::span<const NoisyPoint> batch, double reg_w,
            int threads) {
    if (batch.empty()) throw ValidationError("loss needs a nonempty batch");
    const GmmParams p = constrain(u);
    std::vector<double> dens(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        dens[i] = point_contribution(p, batch[i], false).log_density;
    });
    double total = 0.0;
    for (double v : dens) total += v;
    return -total / static_cast<double>(batch.size()) + trace_penalty(p, reg_w);
}

UnconstrainedParams loss_grad(const UnconstrainedParams& u, std::span<const NoisyPoint> batch,
                              double reg_w, double* loss_out, int threads) {
    if (batch.empty()) throw ValidationError("loss_grad needs a nonempty batch");
    const int K = u.k();
    const auto d = u.dim();
    const GmmParams p = constrain(u);
    const double inv_m = 1.0 / static_cast<double>(batch.size());

    std::vector<PointContribution> contrib(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        contrib[i] = point_contribution(p, batch[i], true);
    });

    double total = 0.0;
    Vector resp_sum = Vector::Zero(K);
    std::vector<Vector> g_mean(K, Vector::Zero(d));
    std::vector<Matrix> g_cov(K, Matrix::Zero(d, d));
    for (const auto& c : contrib) {
        total += c.log_density;
        resp_sum += c.resp;
        for (int j = 0; j < K; ++j) {
            g_mean[j] -= inv_m * c.g_mean[j];  // loss = -(mean of log densities)
            g_cov[j] -= inv_m * c.g_cov[j];
        }
    }
    if (loss_out) *loss_out = -total * inv_m + trace_penalty(p, reg_w);

    UnconstrainedParams grad;
    // d(log p_i)/d(z_k) = r_ik - alpha_k through the softmax.
    grad.z = -inv_m * (resp_sum - static_cast<double>(batch.size()) * p.alpha);
    grad.means = std::move(g_mean);
    grad.chol_lower.reserve(K);
    grad.chol_logdiag.reserve(K);
    for (int j = 0; j < K; ++j) {
        // Penalty: d(w / tr V)/d(V) = -(w / tr^2 V) I.
        const double tr = p.covs[j].trace();
        g_cov[j].diagonal().array() += -reg_w / (tr * tr);
        // V = L L^T with symmetric dV-gradient G gives dL = 2 G L.
        const Matrix L = cholesky_factor(u, j);
        const Matrix gL = 2.0 * g_cov[j] * L;
        grad.chol_lower.push_back(Matrix(gL.template triangularView<Eigen::StrictlyLower>()));
        Vector glog(d);
        for (Eigen::Index q = 0; q < d; ++q) {
            const bool clamped = std::abs(u.chol_logdiag[j](q)) > kLogDiagClamp;
            glog(q) = clamped ? 0.0 : gL(q, q) * L(q, q);
        }
        grad.chol_logdiag.push_back(std::move(glog));
    }
    return grad;
}

std::pair<UnconstrainedParams, AdamState> adam_step(const UnconstrainedParams& u,
                                                    const UnconstrainedParams& grad,
                                                    const AdamState& state, double lr,
                                                    double beta1, double beta2, double eps) {
    const int K = u.k();
    const auto d = u.dim();
    const Vector theta = pack(u);
    const Vector g = pack(grad);
    Vector m = pack(state.first);
    Vector v = pack(state.second);

    const long t = state.t + 1;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const Vector m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
    const Vector v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
    const Vector denom = v_hat.cwiseSqrt() + Vector::Constant(theta.size(), eps);
    const Vector step = lr * m_hat.cwiseQuotient(denom);

    AdamState next;
    next.first = unpack(m, K, d);
    next.second = unpack(v, K, d);
    next.t = t;
    return {unpack(theta - step, K, d), std::move(next)};
}

nlohmann::json sgd_config_json(const SgdConfig& cfg) {
    return {
        {"minibatch_size", cfg.minibatch_size},
        {"learning_rate", cfg.learning_rate},
        {"lr_schedule", cfg.lr_schedule},
        {"epochs", cfg.epochs},
        {"beta1", cfg.beta1},
        {"beta2", cfg.beta2},
        {"adam_eps", cfg.adam_eps},
        {"reg_w", cfg.reg_w},
        {"seed", cfg.seed},
        {"threads", cfg.threads},
    };
}

FitResult fit_sgd(std::span<const NoisyPoint> data, const GmmParams& init, const SgdConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.empty()) throw ValidationError("cannot fit an empty dataset");
    init.validate();
    if (init.dim() != data.front().dim_latent()) {
        throw ValidationError("initial model dimension does not match the data");
    }

    const std::size_t n = data.size();
    const int M = cfg.minibatch_size;

    FitResult result;
    result.report.method = "sgd";
    result.report.config = sgd_config_json(cfg);

    UnconstrainedParams u = unconstrain(init);
    AdamState st = AdamState::zeros(init.k(), init.dim());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    std::vector<NoisyPoint> scratch;
    long iteration = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(M)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(M));
            scratch.clear();
            for (std::size_t i = start; i < stop; ++i) scratch.push_back(data[order[i]]);
            if (scratch.size() < static_cast<std::size_t>(M) && n >= static_cast<std::size_t>(M)) {
                result.report.ragged_final_minibatch = true;
            }
            double batch_loss = 0.0;
            const UnconstrainedParams g = loss_grad(u, scratch, cfg.reg_w, &batch_loss, cfg.threads);
            if (!std::isfinite(batch_loss) || !all_finite(g)) {
                throw NumericalError("non-finite loss or gradient at iteration " +
                                         std::to_string(iteration),
                                     -1, -1, iteration);
            }
            std::tie(u, st) = adam_step(u, g, st, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
            ++iteration;
        }
        const GmmParams params = constrain(u);
        params.validate();

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_ll = mean_log_likelihood(params, data, cfg.threads);
        rec.wall_clock_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.report.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, params);
    }

    result.params = constrain(u);
    result.report.final_train_ll = result.report.epochs.empty()
                                       ? mean_log_likelihood(result.params, data, cfg.threads)
                                       : result.report.epochs.back().train_ll;
    result.report.validate();
    return result;
}

}  // namespace xdgmm
