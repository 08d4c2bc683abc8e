#include "xdgmm/report.hpp"

#include "xdgmm/types.hpp"

#include <fstream>

namespace xdgmm {

void FitReport::validate() const {
    int last_epoch = 0;
    double last_wall = 0.0;
    for (const auto& rec : epochs) {
        if (rec.epoch <= last_epoch) throw ValidationError("epoch indices must strictly increase");
        if (rec.wall_clock_sec < last_wall) {
            throw ValidationError("wall clock must be non-decreasing");
        }
        last_epoch = rec.epoch;
        last_wall = rec.wall_clock_sec;
    }
}

nlohmann::json FitReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["config"] = config;
    j["epochs"] = nlohmann::json::array();
    for (const auto& rec : epochs) {
        j["epochs"].push_back({{"epoch", rec.epoch},
                               {"train_ll", rec.train_ll},
                               {"wall_clock_sec", rec.wall_clock_sec}});
    }
    j["final_train_ll"] = final_train_ll;
    if (final_val_ll) {
        j["final_val_ll"] = *final_val_ll;
    } else {
        j["final_val_ll"] = nullptr;
    }
    j["checkpoint"] = checkpoint_path;
    j["ragged_final_minibatch"] = ragged_final_minibatch;
    return j;
}

FitReport FitReport::from_json(const nlohmann::json& j) {
    FitReport r;
    r.method = j.at("method").get<std::string>();
    r.config = j.at("config");
    for (const auto& rec : j.at("epochs")) {
        r.epochs.push_back({rec.at("epoch").get<int>(), rec.at("train_ll").get<double>(),
                            rec.at("wall_clock_sec").get<double>()});
    }
    r.final_train_ll = j.at("final_train_ll").get<double>();
    if (j.contains("final_val_ll") && !j.at("final_val_ll").is_null()) {
        r.final_val_ll = j.at("final_val_ll").get<double>();
    }
    r.checkpoint_path = j.value("checkpoint", "");
    r.ragged_final_minibatch = j.value("ragged_final_minibatch", false);
    return r;
}

void FitReport::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write report " + path);
    out << to_json().dump(2) << "\n";
}

FitReport FitReport::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read report " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("report " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json report_numeric_view(const nlohmann::json& report) {
    nlohmann::json view = report;
    if (view.contains("epochs")) {
        for (auto& rec : view["epochs"]) rec.erase("wall_clock_sec");
    }
    return view;
}

}  // namespace xdgmm
