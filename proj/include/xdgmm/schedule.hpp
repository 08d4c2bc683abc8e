#pragma once

#include <utility>
#include <vector>

namespace xdgmm {

// Piecewise-constant schedule: base until the first breakpoint, then the
// value of the latest breakpoint whose epoch is <= the query epoch.
inline double piecewise_schedule(double base, const std::vector<std::pair<int, double>>& schedule,
                                 int epoch) {
    double value = base;
    int best = -1;
    for (const auto& [from_epoch, v] : schedule) {
        if (from_epoch <= epoch && from_epoch >= best) {
            best = from_epoch;
            value = v;
        }
    }
    return value;
}

}  // namespace xdgmm
