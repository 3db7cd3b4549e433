#include "e2bki/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "e2bki/frame_io.hpp"

namespace e2bki {

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::scsm: return "scsm";
        case Mode::sbki: return "sbki";
        case Mode::ebs: return "ebs";
        case Mode::e2bki: return "e2bki";
    }
    throw ConfigError("unknown mode");
}

std::string to_string(QueryMode mode) {
    switch (mode) {
        case QueryMode::voxel3d: return "voxel3d";
        case QueryMode::bev: return "bev";
        case QueryMode::continuous: return "continuous";
    }
    throw ConfigError("unknown query mode");
}

Mode mode_from_string(const std::string& s) {
    if (s == "scsm") return Mode::scsm;
    if (s == "sbki") return Mode::sbki;
    if (s == "ebs") return Mode::ebs;
    if (s == "e2bki") return Mode::e2bki;
    throw ConfigError("invalid mode '" + s + "' (expected scsm|sbki|ebs|e2bki)");
}

QueryMode query_mode_from_string(const std::string& s) {
    if (s == "voxel3d") return QueryMode::voxel3d;
    if (s == "bev") return QueryMode::bev;
    if (s == "continuous") return QueryMode::continuous;
    throw ConfigError("invalid query mode '" + s + "' (expected voxel3d|bev|continuous)");
}

void MapConfig::validate() const {
    if (!(voxel_resolution > 0.0))
        throw ConfigError("map.voxel_resolution must be positive");
    try {
        kernel.validate();
        refine_params().validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (gaussian_total_clusters < 1)
        throw ConfigError("gaussian.total_clusters must be >= 1");
    if (gaussian_kmeans_max_iters < 1)
        throw ConfigError("gaussian.kmeans_max_iters must be >= 1");
    if (!(gaussian_cov_floor_scale > 0.0))
        throw ConfigError("gaussian.cov_floor_scale must be positive");
    if (!(ellipsoid_mass_fraction > 0.0 && ellipsoid_mass_fraction < 1.0))
        throw ConfigError("ellipsoid.mass_fraction must lie in (0,1)");
    if (!(bki_alpha0 > 0.0)) throw ConfigError("bki.alpha0 must be positive");
    if (bki_num_classes < 2) throw ConfigError("bki.num_classes must be >= 2");
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

} // namespace

MapConfig parse_config(std::istream& in) {
    MapConfig cfg;
    std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
        {"map.voxel_resolution", [&](const std::string& k, const std::string& v) { cfg.voxel_resolution = parse_double(k, v); }},
        {"map.mode", [&](const std::string&, const std::string& v) { cfg.mode = mode_from_string(v); }},
        {"map.query_mode", [&](const std::string&, const std::string& v) { cfg.query_mode = query_mode_from_string(v); }},
        {"kernel.length_scale", [&](const std::string& k, const std::string& v) { cfg.kernel.length_scale = parse_double(k, v); }},
        {"kernel.sigma0", [&](const std::string& k, const std::string& v) { cfg.kernel.sigma0 = parse_double(k, v); }},
        {"kernel.beta", [&](const std::string& k, const std::string& v) { cfg.kernel.beta = parse_double(k, v); }},
        {"kernel.gamma", [&](const std::string& k, const std::string& v) { cfg.kernel.gamma = parse_double(k, v); }},
        {"kernel.u_percentile", [&](const std::string& k, const std::string& v) { cfg.kernel.u_percentile = parse_double(k, v); }},
        {"refine.epsilon", [&](const std::string& k, const std::string& v) { cfg.refine_epsilon = parse_double(k, v); }},
        {"refine.dl_scale", [&](const std::string& k, const std::string& v) { cfg.refine_dl_scale = parse_double(k, v); }},
        {"refine.ds_scale", [&](const std::string& k, const std::string& v) { cfg.refine_ds_scale = parse_double(k, v); }},
        {"refine.enabled_merge", [&](const std::string& k, const std::string& v) { cfg.refine_enabled_merge = parse_bool(k, v); }},
        {"refine.enabled_prune", [&](const std::string& k, const std::string& v) { cfg.refine_enabled_prune = parse_bool(k, v); }},
        {"gaussian.total_clusters", [&](const std::string& k, const std::string& v) { cfg.gaussian_total_clusters = static_cast<int>(parse_int(k, v)); }},
        {"gaussian.kmeans_max_iters", [&](const std::string& k, const std::string& v) { cfg.gaussian_kmeans_max_iters = static_cast<int>(parse_int(k, v)); }},
        {"gaussian.rng_seed", [&](const std::string& k, const std::string& v) { cfg.gaussian_rng_seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
        {"gaussian.cov_floor_scale", [&](const std::string& k, const std::string& v) { cfg.gaussian_cov_floor_scale = parse_double(k, v); }},
        {"ellipsoid.mass_fraction", [&](const std::string& k, const std::string& v) { cfg.ellipsoid_mass_fraction = parse_double(k, v); }},
        {"bki.alpha0", [&](const std::string& k, const std::string& v) { cfg.bki_alpha0 = parse_double(k, v); }},
        {"bki.num_classes", [&](const std::string& k, const std::string& v) { cfg.bki_num_classes = static_cast<int>(parse_int(k, v)); }},
    };

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
        it->second(key, value);
    }
    cfg.validate();
    return cfg;
}

MapConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

void write_config(std::ostream& out, const MapConfig& cfg) {
    out << "map.voxel_resolution = " << format_double(cfg.voxel_resolution) << "\n";
    out << "map.mode = " << to_string(cfg.mode) << "\n";
    out << "map.query_mode = " << to_string(cfg.query_mode) << "\n";
    out << "kernel.length_scale = " << format_double(cfg.kernel.length_scale) << "\n";
    out << "kernel.sigma0 = " << format_double(cfg.kernel.sigma0) << "\n";
    out << "kernel.beta = " << format_double(cfg.kernel.beta) << "\n";
    out << "kernel.gamma = " << format_double(cfg.kernel.gamma) << "\n";
    out << "kernel.u_percentile = " << format_double(cfg.kernel.u_percentile) << "\n";
    out << "refine.epsilon = " << format_double(cfg.refine_epsilon) << "\n";
    out << "refine.dl_scale = " << format_double(cfg.refine_dl_scale) << "\n";
    out << "refine.ds_scale = " << format_double(cfg.refine_ds_scale) << "\n";
    out << "refine.enabled_merge = " << (cfg.refine_enabled_merge ? "true" : "false") << "\n";
    out << "refine.enabled_prune = " << (cfg.refine_enabled_prune ? "true" : "false") << "\n";
    out << "gaussian.total_clusters = " << cfg.gaussian_total_clusters << "\n";
    out << "gaussian.kmeans_max_iters = " << cfg.gaussian_kmeans_max_iters << "\n";
    out << "gaussian.rng_seed = " << cfg.gaussian_rng_seed << "\n";
    out << "gaussian.cov_floor_scale = " << format_double(cfg.gaussian_cov_floor_scale) << "\n";
    out << "ellipsoid.mass_fraction = " << format_double(cfg.ellipsoid_mass_fraction) << "\n";
    out << "bki.alpha0 = " << format_double(cfg.bki_alpha0) << "\n";
    out << "bki.num_classes = " << cfg.bki_num_classes << "\n";
}

void save_config(const std::string& path, const MapConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    write_config(out, cfg);
}

} // namespace e2bki
