#include "xdgmm/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace xdgmm {

namespace {

int nearest_center(const std::vector<Vector>& centers, const Vector& x) {
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int j = 0; j < static_cast<int>(centers.size()); ++j) {
        const double dist = (x - centers[j]).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = j;
        }
    }
    return best;
}

// Seeds centers from a random permutation, skipping duplicate values while
// any remain unseen so that repeated datapoints cannot collapse two
// centers.
std::vector<Vector> seed_centers(std::span<const Vector> data, int k, std::mt19937_64& rng) {
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<Vector> centers;
    centers.reserve(k);
    for (std::size_t i = 0; i < perm.size() && static_cast<int>(centers.size()) < k; ++i) {
        const Vector& candidate = data[perm[i]];
        const bool seen = std::any_of(centers.begin(), centers.end(),
                                      [&](const Vector& c) { return c == candidate; });
        if (!seen) centers.push_back(candidate);
    }
    for (std::size_t i = 0; static_cast<int>(centers.size()) < k; ++i) {
        centers.push_back(data[perm[i % perm.size()]]);  // fewer distinct values than k
    }
    return centers;
}

}  // namespace

GmmParams kmeans_init(std::span<const Vector> observed, const KmeansConfig& cfg) {
    const int k = cfg.k;
    const std::size_t n = observed.size();
    if (k < 1) throw ValidationError("k must be at least 1");
    if (n < static_cast<std::size_t>(k)) {
        throw ValidationError("k-means needs at least k datapoints");
    }
    if (cfg.epochs < 1 || cfg.minibatch_size < 1) {
        throw ValidationError("k-means epochs and minibatch size must be at least 1");
    }
    const auto d = observed.front().size();

    std::mt19937_64 rng(cfg.seed);
    std::vector<Vector> centers = seed_centers(observed, k, rng);
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<int> assignment;

    const std::size_t m = std::min<std::size_t>(cfg.minibatch_size, n);
    std::vector<std::size_t> epoch_counts(k);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        std::fill(epoch_counts.begin(), epoch_counts.end(), std::size_t{0});
        for (std::size_t start = 0; start < n; start += m) {
            const std::size_t stop = std::min(n, start + m);
            assignment.resize(stop - start);
            // Assign against the centers frozen at batch start, then apply
            // the 1/count updates.
            for (std::size_t i = start; i < stop; ++i) {
                assignment[i - start] = nearest_center(centers, observed[order[i]]);
            }
            for (std::size_t i = start; i < stop; ++i) {
                const int c = assignment[i - start];
                counts[c] += 1;
                epoch_counts[c] += 1;
                const double eta = 1.0 / static_cast<double>(counts[c]);
                centers[c] += eta * (observed[order[i]] - centers[c]);
            }
        }
        for (int j = 0; j < k; ++j) {
            if (epoch_counts[j] == 0) {
                std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                centers[j] = observed[pick(rng)];
                counts[j] = 0;  // let the reseeded center adapt quickly
            }
        }
    }

    GmmParams p;
    p.alpha.resize(k);
    double total = 0.0;
    for (int j = 0; j < k; ++j) {
        const double c = std::max<double>(1.0, static_cast<double>(counts[j]));
        p.alpha(j) = c;
        total += c;
    }
    p.alpha /= total;
    p.means = std::move(centers);
    p.covs.assign(k, Matrix::Identity(d, d));
    p.validate();
    return p;
}

}  // namespace xdgmm
