#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "e2bki/kernel.hpp"
#include "e2bki/refine.hpp"

namespace e2bki {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { scsm, sbki, ebs, e2bki };
enum class QueryMode { voxel3d, bev, continuous };

std::string to_string(Mode mode);
std::string to_string(QueryMode mode);
Mode mode_from_string(const std::string& s);
QueryMode query_mode_from_string(const std::string& s);

/// All mapping hyperparameters plus the mode switches, serialized as flat
/// `key = value` text.
struct MapConfig {
    double voxel_resolution = 0.2; // meters

    KernelParams kernel;

    double refine_epsilon = 2.5;
    double refine_dl_scale = 5.0; // d_l = dl_scale * length_scale
    double refine_ds_scale = 1.0; // d_s = ds_scale * length_scale
    bool refine_enabled_merge = true;
    bool refine_enabled_prune = true;

    int gaussian_total_clusters = 256;
    int gaussian_kmeans_max_iters = 50;
    std::uint64_t gaussian_rng_seed = 1;
    double gaussian_cov_floor_scale = 0.25; // floor = (scale * resolution)^2

    double ellipsoid_mass_fraction = 0.10;

    double bki_alpha0 = 0.001;
    int bki_num_classes = 3;

    Mode mode = Mode::e2bki;
    QueryMode query_mode = QueryMode::voxel3d;

    void validate() const;

    RefineParams refine_params() const {
        return RefineParams{refine_dl_scale * kernel.length_scale,
                            refine_ds_scale * kernel.length_scale, refine_epsilon};
    }

    double cov_floor() const {
        const double s = gaussian_cov_floor_scale * voxel_resolution;
        return s * s;
    }
};

/// Parses flat `key = value` text ('#' starts a comment). Unknown keys are
/// rejected.
MapConfig parse_config(std::istream& in);
MapConfig load_config(const std::string& path);

/// Deterministic serialization (fixed key order, full double precision).
void write_config(std::ostream& out, const MapConfig& config);
void save_config(const std::string& path, const MapConfig& config);

} // namespace e2bki
