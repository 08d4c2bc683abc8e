#pragma once

#include "xdgmm/likelihood.hpp"
#include "xdgmm/report.hpp"
#include "xdgmm/types.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>

namespace xdgmm {

struct EmConfig {
    enum class Mode { batch, minibatch };

    Mode mode = Mode::minibatch;
    int minibatch_size = 500;
    double step_size = 1e-2;  // lambda
    // Piecewise-constant overrides: from the given 0-based epoch onward,
    // lambda takes the paired value.  Default mirrors halving after ten
    // epochs.
    std::vector<std::pair<int, double>> step_schedule = {{10, 5e-3}};
    int epochs = 20;
    double reg_w = 1e-3;
    std::uint64_t seed = 0;
    int threads = 1;

    double step_size_at(int epoch) const;
    void validate() const;
};

// Sufficient-statistic sums for one minibatch, plus the per-point
// posteriors the stable covariance update needs.  scale compensates a
// ragged final minibatch (scale = M / batch size) so the accumulated sums
// stay normalized against the configured batch size.
struct BatchStats {
    Vector q;
    std::vector<Vector> s;
    std::vector<Matrix> S;
    std::vector<ComponentPosterior> posteriors;
    std::size_t count = 0;
    double scale = 1.0;
};

// E-step over a minibatch: q_j = sum_i r_ij, s_j = sum_i r_ij b_ij,
// S_j = sum_i r_ij (b_ij b_ij^T + B_ij).
BatchStats minibatch_stats(const GmmParams& p, std::span<const NoisyPoint> batch,
                           int threads = 1);

// Accumulator holding the initial parameters' statistics: q_hat = alpha M,
// s_hat = q_hat m, S_hat = q_hat (V + m m^T).  Makes sum_j q_hat = M hold
// from the first update and a lambda -> 0 update a no-op.
SuffStatAccumulator init_accumulator(const GmmParams& p, int minibatch_size);

// phi_t = (1 - lambda) phi_{t-1} + lambda phi_batch, elementwise on
// (q_hat, s_hat, S_hat).  This is the raw-sums route; the (mean, cov)
// members of the result are left empty and m_step_naive must follow.
SuffStatAccumulator accumulate(const SuffStatAccumulator& acc, const BatchStats& stats,
                               double lambda);

// Direct normalization: alpha = q_hat / M, m = s_hat / q_hat,
// V = S_hat / q_hat - m m^T.  Exact but cancellation-prone; used by batch
// mode and as the oracle for the stable path.  Throws NumericalError when a
// component's q_hat falls to or below 1e-8 M.
GmmParams m_step_naive(const SuffStatAccumulator& acc, int minibatch_size);

// Recentering of a scaled covariance: returns s (V + c c^T) - d d^T,
// evaluated in the symmetric difference-of-products form.
Matrix adjust(const Matrix& V, double s, const Vector& c, const Vector& d);

// The stable minibatch M-step.  Consumes the previous accumulator and the
// batch statistics, returns the updated parameters (with reg_w I added to
// each covariance) and the updated accumulator, whose S_hat is refreshed as
// q_hat (V + m m^T).  The covariances kept inside the accumulator stay
// unregularized so the running sums match the plain recursion.
std::pair<GmmParams, SuffStatAccumulator> m_step_stable(const SuffStatAccumulator& acc,
                                                        const BatchStats& stats, double lambda,
                                                        int minibatch_size, double reg_w = 0.0);

using EpochCallback = std::function<void(const EpochRecord&, const GmmParams&)>;

// Resolved-config echo placed into fit reports.  effective_minibatch is the
// dataset size in batch mode.
nlohmann::json em_config_json(const EmConfig& cfg, int effective_minibatch);

struct FitResult {
    GmmParams params;
    FitReport report;
};

// Batch mode: one full-dataset EM iteration per epoch.  Minibatch mode:
// seeded shuffle per epoch, stable update per minibatch.  Both add reg_w I
// after every M-step and record the mean train log-likelihood and
// cumulative wall clock per epoch.
FitResult fit_em(std::span<const NoisyPoint> data, const GmmParams& init, const EmConfig& cfg,
                 const EpochCallback& on_epoch = {});

}  // namespace xdgmm
