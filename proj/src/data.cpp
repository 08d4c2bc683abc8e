#include "xdgmm/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace xdgmm {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string::size_type start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(trim(std::string_view(line).substr(start)));
            break;
        }
        fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
        start = comma + 1;
    }
    return fields;
}

// Parses one field.  Empty fields and NaN literals are "missing"; anything
// else must be a full numeric token.
struct FieldValue {
    bool missing = false;
    double value = 0.0;
};

FieldValue parse_field(const std::string& field, std::size_t line_no) {
    if (field.empty()) return {true, 0.0};
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) {
        throw ValidationError("line " + std::to_string(line_no) + ": field '" + field +
                              "' is not numeric");
    }
    if (std::isnan(v)) return {true, 0.0};
    if (std::isinf(v)) {
        throw ValidationError("line " + std::to_string(line_no) + ": field '" + field +
                              "' is not finite");
    }
    return {false, v};
}

void check_psd(const Matrix& S, std::size_t line_no) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, S.diagonal().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-9 * scale) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": noise covariance is not positive semidefinite");
    }
}

std::mt19937_64 seeded_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

int draw_component(const Vector& alpha, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double cum = 0.0;
    for (int j = 0; j < alpha.size(); ++j) {
        cum += alpha(j);
        if (u <= cum) return j;
    }
    return static_cast<int>(alpha.size()) - 1;
}

Vector standard_normal(Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normal(rng);
    return z;
}

}  // namespace

void DataSchema::validate() const {
    if (columns.empty()) throw ValidationError("schema declares no columns");
    if (d_latent < 1) throw ValidationError("schema must declare d_latent >= 1");
    for (const auto& c : columns) {
        if (c.name.empty()) throw ValidationError("schema column with empty name");
    }
    if (projection) {
        if (projection->rows() != d_obs() || projection->cols() != d_latent) {
            throw ValidationError("schema projection shape must be d_obs x d_latent");
        }
    } else if (d_latent != d_obs()) {
        throw ValidationError("without a projection, d_latent must equal the column count");
    }
}

nlohmann::json DataSchema::to_json() const {
    nlohmann::json j;
    j["columns"] = nlohmann::json::array();
    j["has_noise"] = nlohmann::json::array();
    for (const auto& c : columns) {
        j["columns"].push_back(c.name);
        j["has_noise"].push_back(c.has_noise);
    }
    j["d_latent"] = d_latent;
    if (projection) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < projection->rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < projection->cols(); ++c) row.push_back((*projection)(r, c));
            rows.push_back(row);
        }
        j["projection"] = rows;
    }
    return j;
}

DataSchema DataSchema::from_json(const nlohmann::json& j) {
    DataSchema s;
    if (!j.contains("columns") || !j.contains("has_noise") || !j.contains("d_latent")) {
        throw ValidationError("schema JSON needs columns, has_noise and d_latent");
    }
    const auto& names = j.at("columns");
    const auto& flags = j.at("has_noise");
    if (names.size() != flags.size()) {
        throw ValidationError("schema columns and has_noise lengths differ");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        s.columns.push_back({names[i].get<std::string>(), flags[i].get<bool>()});
    }
    s.d_latent = j.at("d_latent").get<Eigen::Index>();
    if (j.contains("projection")) {
        const auto& rows = j.at("projection");
        Matrix R(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) R(r, c) = rows[r][c].get<double>();
        }
        s.projection = R;
    }
    s.validate();
    return s;
}

void DataSchema::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write schema file " + path);
    out << to_json().dump(2) << "\n";
}

DataSchema DataSchema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read schema file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("schema file " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void Dataset::validate() const {
    schema.validate();
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].x.size() != d_obs || points[i].dim_latent() != d_latent) {
            throw ValidationError("point " + std::to_string(i) + " disagrees with dataset shape");
        }
        points[i].validate();
    }
}

Dataset load_csv(const std::string& path, const DataSchema& schema) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read data file " + path);

    const auto d = schema.d_obs();
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_line(line);
    std::unordered_map<std::string, std::size_t> col_index;
    for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = i;

    const auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = col_index.find(name);
        if (it == col_index.end()) return std::nullopt;
        return it->second;
    };

    std::vector<std::size_t> value_col(d);
    std::vector<std::optional<std::size_t>> err_col(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const auto vc = find_col(schema.columns[i].name);
        if (!vc) throw ValidationError(path + " lacks column '" + schema.columns[i].name + "'");
        value_col[i] = *vc;
        if (schema.columns[i].has_noise) {
            const auto ec = find_col(schema.columns[i].name + "_err");
            if (!ec) {
                throw ValidationError(path + " lacks column '" + schema.columns[i].name + "_err'");
            }
            err_col[i] = *ec;
        }
    }
    // Correlation columns are optional and accepted in either name order.
    std::vector<std::vector<std::optional<std::size_t>>> corr_col(
        d, std::vector<std::optional<std::size_t>>(d));
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i + 1; j < d; ++j) {
            if (!schema.columns[i].has_noise || !schema.columns[j].has_noise) continue;
            auto cc = find_col(schema.columns[i].name + "_" + schema.columns[j].name + "_corr");
            if (!cc) cc = find_col(schema.columns[j].name + "_" + schema.columns[i].name + "_corr");
            corr_col[i][j] = cc;
        }
    }

    Dataset data;
    data.schema = schema;
    data.d_obs = d;
    data.d_latent = schema.d_latent;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split_line(line);
        if (fields.size() != header.size()) {
            throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        }

        NoisyPoint point;
        point.x = Vector::Zero(d);
        point.S = Matrix::Zero(d, d);
        point.R = schema.projection;
        std::vector<bool> missing(d, false);
        Vector err = Vector::Zero(d);

        for (Eigen::Index i = 0; i < d; ++i) {
            const auto value = parse_field(fields[value_col[i]], line_no);
            missing[i] = value.missing;
            if (!missing[i] && schema.columns[i].has_noise) {
                const auto e = parse_field(fields[*err_col[i]], line_no);
                // A measurement without a usable uncertainty is treated as
                // missing.
                if (e.missing) {
                    missing[i] = true;
                } else if (e.value < 0) {
                    throw ValidationError("line " + std::to_string(line_no) +
                                          ": negative error value");
                } else {
                    err(i) = e.value;
                }
            }
            if (missing[i]) {
                point.x(i) = 0.0;
                point.S(i, i) = kMissingVariance;
            } else {
                point.x(i) = value.value;
                point.S(i, i) =
                    schema.columns[i].has_noise ? err(i) * err(i) : kNoiselessVariance;
            }
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i + 1; j < d; ++j) {
                if (!corr_col[i][j] || missing[i] || missing[j]) continue;
                const auto c = parse_field(fields[*corr_col[i][j]], line_no);
                if (c.missing) continue;
                if (std::abs(c.value) > 1.0) {
                    throw ValidationError("line " + std::to_string(line_no) +
                                          ": correlation outside [-1, 1]");
                }
                point.S(i, j) = point.S(j, i) = c.value * err(i) * err(j);
            }
        }
        check_psd(point.S, line_no);
        data.points.push_back(std::move(point));
    }
    return data;
}

void write_csv(const Dataset& data, const std::string& path) {
    const auto d = data.d_obs;
    const auto& cols = data.schema.columns;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write data file " + path);

    std::string header;
    for (Eigen::Index i = 0; i < d; ++i) {
        if (i) header += ',';
        header += cols[i].name;
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        if (cols[i].has_noise) header += ',' + cols[i].name + "_err";
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        for (Eigen::Index j = i + 1; j < d; ++j) {
            if (cols[i].has_noise && cols[j].has_noise) {
                header += ',' + cols[i].name + '_' + cols[j].name + "_corr";
            }
        }
    }
    out << header << '\n';

    for (const auto& point : data.points) {
        std::string row;
        Vector err = point.S.diagonal().cwiseSqrt();
        for (Eigen::Index i = 0; i < d; ++i) {
            if (i) row += ',';
            row += format_double(point.x(i));
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            if (cols[i].has_noise) row += ',' + format_double(err(i));
        }
        for (Eigen::Index i = 0; i < d; ++i) {
            for (Eigen::Index j = i + 1; j < d; ++j) {
                if (!cols[i].has_noise || !cols[j].has_noise) continue;
                const double denom = err(i) * err(j);
                const double corr = denom > 0 ? point.S(i, j) / denom : 0.0;
                row += ',' + format_double(corr);
            }
        }
        out << row << '\n';
    }
}

std::array<Dataset, 3> split(const Dataset& data, const SplitFractions& fractions,
                             std::uint64_t seed) {
    const double total = fractions.train + fractions.val + fractions.test;
    if (fractions.train <= 0 || fractions.val <= 0 || fractions.test <= 0 ||
        std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("split fractions must be positive and sum to 1");
    }
    const std::size_t n = data.size();
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
    const auto n_val = static_cast<std::size_t>(std::llround(fractions.val * n));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
        throw ValidationError("split would leave an empty part");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = seeded_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::array<Dataset, 3> parts;
    const std::array<std::pair<std::size_t, std::size_t>, 3> ranges = {
        std::pair{std::size_t{0}, n_train},
        std::pair{n_train, n_train + n_val},
        std::pair{n_train + n_val, n},
    };
    for (int p = 0; p < 3; ++p) {
        parts[p].schema = data.schema;
        parts[p].d_obs = data.d_obs;
        parts[p].d_latent = data.d_latent;
        for (std::size_t i = ranges[p].first; i < ranges[p].second; ++i) {
            parts[p].points.push_back(data.points[order[i]]);
        }
    }
    return parts;
}

NoiseSpec NoiseSpec::fixed(Matrix S) {
    NoiseSpec spec;
    spec.kind = Kind::fixed;
    spec.fixed_S = std::move(S);
    return spec;
}

NoiseSpec NoiseSpec::diagonal_range(Vector lo, Vector hi) {
    NoiseSpec spec;
    spec.kind = Kind::diagonal_range;
    spec.sigma2_lo = std::move(lo);
    spec.sigma2_hi = std::move(hi);
    return spec;
}

Dataset generate_synthetic(const GmmParams& truth, const NoiseSpec& noise, std::size_t n,
                           std::uint64_t seed) {
    truth.validate();
    const auto d_latent = truth.dim();
    if (noise.projection && noise.projection->cols() != d_latent) {
        throw ValidationError("projection columns must match the latent dimension");
    }
    const auto d_obs = noise.projection ? noise.projection->rows() : d_latent;
    if (noise.kind == NoiseSpec::Kind::fixed &&
        (noise.fixed_S.rows() != d_obs || noise.fixed_S.cols() != d_obs)) {
        throw ValidationError("fixed noise covariance has the wrong shape");
    }
    if (noise.kind == NoiseSpec::Kind::diagonal_range &&
        (noise.sigma2_lo.size() != d_obs || noise.sigma2_hi.size() != d_obs ||
         (noise.sigma2_lo.array() < 0).any() ||
         (noise.sigma2_hi.array() < noise.sigma2_lo.array()).any())) {
        throw ValidationError("diagonal noise range is malformed");
    }

    std::vector<Matrix> chols;
    for (const auto& V : truth.covs) {
        chols.push_back(Eigen::LLT<Matrix>(V).matrixL());
    }
    std::optional<Matrix> noise_chol;
    if (noise.kind == NoiseSpec::Kind::fixed) {
        Eigen::LLT<Matrix> llt(noise.fixed_S);
        if (llt.info() != Eigen::Success) {
            // Allow PSD-singular fixed noise via a diagonal-jitter-free
            // eigen route.
            Eigen::SelfAdjointEigenSolver<Matrix> es(noise.fixed_S);
            if (es.eigenvalues().minCoeff() < -1e-12) {
                throw ValidationError("fixed noise covariance is not PSD");
            }
            noise_chol = es.eigenvectors() *
                         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        } else {
            noise_chol = Matrix(llt.matrixL());
        }
    }

    auto rng = seeded_rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Dataset data;
    data.d_obs = d_obs;
    data.d_latent = d_latent;
    data.schema.d_latent = d_latent;
    data.schema.projection = noise.projection;
    for (Eigen::Index i = 0; i < d_obs; ++i) {
        data.schema.columns.push_back({"x" + std::to_string(i), true});
    }

    data.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int j = draw_component(truth.alpha, rng);
        const Vector v = truth.means[j] + chols[j] * standard_normal(d_latent, rng);
        NoisyPoint point;
        point.R = noise.projection;
        const Vector projected = noise.projection ? Vector(*noise.projection * v) : v;
        switch (noise.kind) {
            case NoiseSpec::Kind::none:
                point.S = Matrix::Zero(d_obs, d_obs);
                point.x = projected;
                break;
            case NoiseSpec::Kind::fixed:
                point.S = noise.fixed_S;
                point.x = projected + *noise_chol * standard_normal(d_obs, rng);
                break;
            case NoiseSpec::Kind::diagonal_range: {
                Vector sigma2(d_obs);
                for (Eigen::Index k = 0; k < d_obs; ++k) {
                    sigma2(k) = noise.sigma2_lo(k) +
                                (noise.sigma2_hi(k) - noise.sigma2_lo(k)) * unif(rng);
                }
                point.S = sigma2.asDiagonal();
                point.x = projected + sigma2.cwiseSqrt().cwiseProduct(standard_normal(d_obs, rng));
                break;
            }
        }
        data.points.push_back(std::move(point));
    }
    return data;
}

std::vector<Vector> sample_model(const GmmParams& p, std::size_t n, std::uint64_t seed) {
    p.validate();
    std::vector<Matrix> chols;
    for (const auto& V : p.covs) chols.push_back(Eigen::LLT<Matrix>(V).matrixL());
    auto rng = seeded_rng(seed);
    std::vector<Vector> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int j = draw_component(p.alpha, rng);
        samples.push_back(p.means[j] + chols[j] * standard_normal(p.dim(), rng));
    }
    return samples;
}

GmmParams three_blobs_truth() {
    GmmParams p;
    p.alpha = Vector(3);
    p.alpha << 0.5, 0.3, 0.2;
    p.means = {Vector(3), Vector(3), Vector(3)};
    p.means[0] << 0.0, 0.0, 0.0;
    p.means[1] << 6.0, 1.0, -4.0;
    p.means[2] << -5.0, 5.0, 3.0;
    p.covs.assign(3, Matrix(3, 3));
    p.covs[0] << 1.0, 0.3, 0.0, 0.3, 0.8, 0.1, 0.0, 0.1, 1.2;
    p.covs[1] << 0.6, -0.2, 0.1, -0.2, 1.1, 0.0, 0.1, 0.0, 0.9;
    p.covs[2] << 1.3, 0.2, -0.3, 0.2, 0.7, 0.1, -0.3, 0.1, 0.8;
    p.validate();
    return p;
}

NoiseSpec three_blobs_noise() {
    return NoiseSpec::diagonal_range(Vector::Constant(3, 0.05), Vector::Constant(3, 0.3));
}

void write_samples_csv(std::span<const Vector> samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write sample file " + path);
    for (const auto& s : samples) {
        std::string row;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            if (i) row += ',';
            row += format_double(s(i));
        }
        out << row << '\n';
    }
}

}  // namespace xdgmm
