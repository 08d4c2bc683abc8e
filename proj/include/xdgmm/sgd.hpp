#pragma once

#include "xdgmm/em.hpp"
#include "xdgmm/transforms.hpp"
#include "xdgmm/types.hpp"

#include <cstdint>
#include <span>
#include <utility>

namespace xdgmm {

struct SgdConfig {
    int minibatch_size = 500;
    int epochs = 20;
    double learning_rate = 1e-2;
    // From the given 0-based epoch onward, the paired learning rate applies.
    // Default mirrors a tenfold drop after ten epochs.
    std::vector<std::pair<int, double>> lr_schedule = {{10, 1e-3}};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double reg_w = 1e-3;
    std::uint64_t seed = 0;
    int threads = 1;

    double learning_rate_at(int epoch) const;
    void validate() const;
};

// Adam moment estimates, shaped exactly like the parameters they track.
struct AdamState {
    UnconstrainedParams first;
    UnconstrainedParams second;
    long t = 0;

    static AdamState zeros(int K, Eigen::Index d);
};

// Negative mean log-likelihood of the batch under constrain(u), plus the
// trace penalty sum_j reg_w / Trace(V_j).
double loss(const UnconstrainedParams& u, std::span<const NoisyPoint> batch, double reg_w,
            int threads = 1);

// Analytic gradient of loss with respect to every unconstrained coordinate
// (softmax logits, means, strict-lower Cholesky entries, log-diagonal).
// Contract: matches central finite differences.  loss_out, when given,
// receives the loss value from the same pass.
UnconstrainedParams loss_grad(const UnconstrainedParams& u, std::span<const NoisyPoint> batch,
                              double reg_w, double* loss_out = nullptr, int threads = 1);

// One bias-corrected Adam update; pure function of its inputs.
std::pair<UnconstrainedParams, AdamState> adam_step(const UnconstrainedParams& u,
                                                    const UnconstrainedParams& grad,
                                                    const AdamState& state, double lr,
                                                    double beta1 = 0.9, double beta2 = 0.999,
                                                    double eps = 1e-8);

nlohmann::json sgd_config_json(const SgdConfig& cfg);

// Minibatch Adam on the reparameterized negative log-likelihood.  A NaN or
// infinite loss/gradient aborts with the failing iteration index.
FitResult fit_sgd(std::span<const NoisyPoint> data, const GmmParams& init, const SgdConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace xdgmm
