#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace xdgmm {

struct EpochRecord {
    int epoch = 0;            // 1-based
    double train_ll = 0.0;    // mean train log-likelihood, nats per point
    double wall_clock_sec = 0.0;  // cumulative, fit loop only
};

// Everything a fit run reports: the method tag, the resolved configuration,
// one record per epoch, final metrics and the checkpoint location.
struct FitReport {
    std::string method;
    nlohmann::json config;
    std::vector<EpochRecord> epochs;
    double final_train_ll = 0.0;
    std::optional<double> final_val_ll;
    std::string checkpoint_path;
    bool ragged_final_minibatch = false;

    // Epoch indices must be strictly increasing and wall clock
    // non-decreasing.
    void validate() const;

    nlohmann::json to_json() const;
    static FitReport from_json(const nlohmann::json& j);

    void save(const std::string& path) const;
    static FitReport load(const std::string& path);
};

// Strips wall-clock fields; what remains must be byte-identical across
// reruns with the same seed and config.
nlohmann::json report_numeric_view(const nlohmann::json& report);

}  // namespace xdgmm
