#include "xdgmm/checkpoint.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>

namespace xdgmm {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void save_model(const GmmParams& p, const std::string& path) {
    p.validate();
    const int K = p.k();
    const auto d = p.dim();
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint " + path);

    out << "{\"k\":" << K << ",\"d\":" << d << ",\"alpha\":[";
    for (int j = 0; j < K; ++j) out << (j ? "," : "") << fmt(p.alpha(j));
    out << "],\"means\":[";
    for (int j = 0; j < K; ++j) {
        out << (j ? ",[" : "[");
        for (Eigen::Index i = 0; i < d; ++i) out << (i ? "," : "") << fmt(p.means[j](i));
        out << "]";
    }
    out << "],\"covs\":[";
    for (int j = 0; j < K; ++j) {
        out << (j ? ",[" : "[");
        for (Eigen::Index r = 0; r < d; ++r) {
            out << (r ? ",[" : "[");
            for (Eigen::Index c = 0; c < d; ++c) out << (c ? "," : "") << fmt(p.covs[j](r, c));
            out << "]";
        }
        out << "]";
    }
    out << "]}\n";
}

GmmParams load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read checkpoint " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint " + path + " is not valid JSON: " + e.what());
    }
    GmmParams p;
    try {
        const int K = j.at("k").get<int>();
        const auto d = j.at("d").get<Eigen::Index>();
        const auto& alpha = j.at("alpha");
        const auto& means = j.at("means");
        const auto& covs = j.at("covs");
        if (static_cast<int>(alpha.size()) != K || static_cast<int>(means.size()) != K ||
            static_cast<int>(covs.size()) != K) {
            throw ValidationError("checkpoint arrays disagree with k");
        }
        p.alpha.resize(K);
        for (int c = 0; c < K; ++c) p.alpha(c) = alpha[c].get<double>();
        for (int c = 0; c < K; ++c) {
            Vector m(d);
            if (static_cast<Eigen::Index>(means[c].size()) != d) {
                throw ValidationError("checkpoint mean has the wrong length");
            }
            for (Eigen::Index i = 0; i < d; ++i) m(i) = means[c][i].get<double>();
            p.means.push_back(std::move(m));
            Matrix V(d, d);
            if (static_cast<Eigen::Index>(covs[c].size()) != d) {
                throw ValidationError("checkpoint covariance has the wrong shape");
            }
            for (Eigen::Index r = 0; r < d; ++r) {
                if (static_cast<Eigen::Index>(covs[c][r].size()) != d) {
                    throw ValidationError("checkpoint covariance has the wrong shape");
                }
                for (Eigen::Index cc = 0; cc < d; ++cc) V(r, cc) = covs[c][r][cc].get<double>();
            }
            p.covs.push_back(std::move(V));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint " + path + " is malformed: " + e.what());
    }
    p.validate();
    return p;
}

}  // namespace xdgmm
