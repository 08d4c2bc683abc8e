#pragma once

#include "xdgmm/types.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace xdgmm {

// Policy constants for CSV ingestion: a missing value gets variance 1e12
// (and the value itself is zeroed), a column declared noiseless gets 1e-2.
inline constexpr double kMissingVariance = 1e12;
inline constexpr double kNoiselessVariance = 1e-2;

struct ColumnSpec {
    std::string name;
    bool has_noise = true;
};

// Sidecar schema: column order, per-column noise flags, latent dimension,
// and an optional shared projection matrix (rows = observed columns,
// cols = d_latent).
struct DataSchema {
    std::vector<ColumnSpec> columns;
    Eigen::Index d_latent = 0;
    std::optional<Matrix> projection;

    Eigen::Index d_obs() const { return static_cast<Eigen::Index>(columns.size()); }
    void validate() const;

    nlohmann::json to_json() const;
    static DataSchema from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static DataSchema load(const std::string& path);
};

struct Dataset {
    Eigen::Index d_obs = 0;
    Eigen::Index d_latent = 0;
    std::vector<NoisyPoint> points;
    DataSchema schema;

    std::size_t size() const { return points.size(); }
    void validate() const;
};

// Reads a CSV with header `<name>` value columns, `<name>_err` standard
// deviations for noisy columns, and optional `<name1>_<name2>_corr`
// correlations.  Applies the missing-value and noiseless-column policies.
// Malformed rows and non-PSD noise matrices are reported with their line
// number.
Dataset load_csv(const std::string& path, const DataSchema& schema);

// Inverse of load_csv for policy-conformant datasets; numbers are written
// with 17 significant digits so a reload reproduces the dataset exactly.
void write_csv(const Dataset& data, const std::string& path);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Seeded shuffle, then contiguous partition.  Parts are disjoint,
// exhaustive, and all nonempty (else ValidationError).
std::array<Dataset, 3> split(const Dataset& data, const SplitFractions& fractions,
                             std::uint64_t seed);

// Per-point noise for synthetic data: none, a fixed covariance, or a
// diagonal with variances drawn uniformly per coordinate.
struct NoiseSpec {
    enum class Kind { none, fixed, diagonal_range };
    Kind kind = Kind::none;
    Matrix fixed_S;
    Vector sigma2_lo;
    Vector sigma2_hi;
    std::optional<Matrix> projection;

    static NoiseSpec none() { return {}; }
    static NoiseSpec fixed(Matrix S);
    static NoiseSpec diagonal_range(Vector lo, Vector hi);
};

// Ancestral sampling of x = R v + eps with v from the mixture and eps from
// the per-point noise.  Deterministic given the seed.
Dataset generate_synthetic(const GmmParams& truth, const NoiseSpec& noise, std::size_t n,
                           std::uint64_t seed);

// Draws n latent-space samples from the mixture itself (no noise).
std::vector<Vector> sample_model(const GmmParams& p, std::size_t n, std::uint64_t seed);

// Headerless CSV, one sample per row, 17 significant digits.
void write_samples_csv(std::span<const Vector> samples, const std::string& path);

// Built-in generator preset: three well-separated 3-D components with
// distinct weights and covariances, plus per-point diagonal noise with
// variances drawn from [0.05, 0.3].
GmmParams three_blobs_truth();
NoiseSpec three_blobs_noise();

}  // namespace xdgmm
