#pragma once

#include "xdgmm/types.hpp"

#include <cstdint>
#include <span>

namespace xdgmm {

struct KmeansConfig {
    int k = 1;
    int epochs = 10;
    int minibatch_size = 500;
    std::uint64_t seed = 0;
};

// Minibatch k-means on the observed vectors (noise and projection are
// ignored).  Centers start from datapoints with distinct values when the
// data provides them, updates use the per-center 1/count learning rate, and
// centers that end an epoch unused are reseeded from random datapoints.
// Returns weights proportional to the accumulated counts, the centroids as
// means, and identity covariances.
GmmParams kmeans_init(std::span<const Vector> observed, const KmeansConfig& cfg);

}  // namespace xdgmm
