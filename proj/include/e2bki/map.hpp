#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "e2bki/bki.hpp"
#include "e2bki/config.hpp"
#include "e2bki/ellipsoid.hpp"
#include "e2bki/frame_io.hpp"
#include "e2bki/gaussian.hpp"
#include "e2bki/spatial_hash.hpp"

namespace e2bki {

struct Key3 {
    std::int32_t x = 0, y = 0, z = 0;
    bool operator==(const Key3&) const = default;
    bool operator<(const Key3& o) const {
        if (x != o.x) return x < o.x;
        if (y != o.y) return y < o.y;
        return z < o.z;
    }
};

struct Key3Hash {
    std::size_t operator()(const Key3& k) const {
        std::uint64_t h = static_cast<std::uint32_t>(k.x) * 0x9e3779b97f4a7c15ULL;
        h ^= static_cast<std::uint32_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint32_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

struct Key2 {
    std::int32_t x = 0, y = 0;
    bool operator==(const Key2&) const = default;
    bool operator<(const Key2& o) const { return x != o.x ? x < o.x : y < o.y; }
};

struct Key2Hash {
    std::size_t operator()(const Key2& k) const {
        std::uint64_t h = static_cast<std::uint32_t>(k.x) * 0x9e3779b97f4a7c15ULL;
        h ^= static_cast<std::uint32_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

/// Sparse voxel grid of Dirichlet cells. index(x) = floor((x - origin)/res),
/// cell centers at origin + (index + 0.5) * res.
class VoxelGrid {
public:
    VoxelGrid(double resolution, Eigen::Vector3d origin, int class_count, double alpha0)
        : resolution_(resolution),
          origin_(std::move(origin)),
          class_count_(class_count),
          alpha0_(alpha0) {}

    Key3 index_of(const Eigen::Vector3d& p) const {
        return Key3{static_cast<std::int32_t>(std::floor((p.x() - origin_.x()) / resolution_)),
                    static_cast<std::int32_t>(std::floor((p.y() - origin_.y()) / resolution_)),
                    static_cast<std::int32_t>(std::floor((p.z() - origin_.z()) / resolution_))};
    }

    Eigen::Vector3d center_of(const Key3& k) const {
        return origin_ + Eigen::Vector3d((k.x + 0.5) * resolution_, (k.y + 0.5) * resolution_,
                                         (k.z + 0.5) * resolution_);
    }

    DirichletCell& cell(const Key3& k) {
        return cells_.try_emplace(k, class_count_, alpha0_).first->second;
    }

    const DirichletCell* find(const Key3& k) const {
        const auto it = cells_.find(k);
        return it == cells_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return cells_.size(); }
    double resolution() const { return resolution_; }
    const Eigen::Vector3d& origin() const { return origin_; }
    int class_count() const { return class_count_; }
    double alpha0() const { return alpha0_; }

    /// Deterministic iteration, keys ascending.
    std::vector<Key3> sorted_keys() const {
        std::vector<Key3> keys;
        keys.reserve(cells_.size());
        for (const auto& [k, v] : cells_) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        return keys;
    }

    void insert_restored(const Key3& k, DirichletCell cell) {
        cells_.insert_or_assign(k, std::move(cell));
    }

private:
    double resolution_;
    Eigen::Vector3d origin_;
    int class_count_;
    double alpha0_;
    std::unordered_map<Key3, DirichletCell, Key3Hash> cells_;
};

struct QueryResult {
    bool known = false;
    int label = -1; // -1 when unknown
    Eigen::VectorXd expectation;
    double variance = 0.0;
    double u_sem = 1.0;
    double u_spa = 0.0;
    double u_total = 1.0;
};

struct FrameReport {
    std::size_t points = 0;
    std::size_t skipped = 0;
    long clamp_warnings = 0;
    long conflict_skips = 0;
    std::size_t primitives_created = 0;
    std::size_t primitives_merged = 0;
    std::size_t primitives_pruned = 0;
    std::size_t live_primitives = 0;
    std::size_t cells_touched = 0;
    double ms_init = 0.0;
    double ms_refine = 0.0;
    double ms_update = 0.0;
};

/// Sparse bird's-eye-view grid built by marginalizing primitives to the xy
/// plane.
class BevGrid {
public:
    BevGrid(double resolution, Eigen::Vector2d origin, int class_count, double alpha0)
        : resolution_(resolution),
          origin_(std::move(origin)),
          class_count_(class_count),
          alpha0_(alpha0) {}

    Key2 index_of(const Eigen::Vector2d& p) const {
        return Key2{static_cast<std::int32_t>(std::floor((p.x() - origin_.x()) / resolution_)),
                    static_cast<std::int32_t>(std::floor((p.y() - origin_.y()) / resolution_))};
    }

    Eigen::Vector2d center_of(const Key2& k) const {
        return origin_ +
               Eigen::Vector2d((k.x + 0.5) * resolution_, (k.y + 0.5) * resolution_);
    }

    DirichletCell& cell(const Key2& k) {
        return cells_.try_emplace(k, class_count_, alpha0_).first->second;
    }

    const DirichletCell* find(const Key2& k) const {
        const auto it = cells_.find(k);
        return it == cells_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return cells_.size(); }
    double resolution() const { return resolution_; }

    std::vector<Key2> sorted_keys() const {
        std::vector<Key2> keys;
        keys.reserve(cells_.size());
        for (const auto& [k, v] : cells_) keys.push_back(k);
        std::sort(keys.begin(), keys.end());
        return keys;
    }

private:
    double resolution_;
    Eigen::Vector2d origin_;
    int class_count_;
    double alpha0_;
    std::unordered_map<Key2, DirichletCell, Key2Hash> cells_;
};

/// Owns the per-frame pipeline and the spatial state: the persistent
/// primitive set, the voxel Dirichlet grid and the continuous-query context.
///
/// e2bki ingestion runs partition -> cluster -> build primitives -> merge ->
/// prune -> adaptive-kernel voxel update. A primitive posts evidence to the
/// grid exactly once, in its creation frame; primitives folded into an
/// existing one by merging are the redundant observations and do not post
/// again. The baseline modes (scsm, sbki, ebs) update cells point-wise and
/// keep no primitives.
class SemanticMap {
public:
    explicit SemanticMap(MapConfig config);

    FrameReport ingest_frame(const Frame& frame);

    QueryResult query_voxel(const Key3& key) const;
    /// voxel3d mode reads the containing cell; continuous mode folds the
    /// adaptive kernel over nearby primitives without touching the grid.
    QueryResult query_point(const Eigen::Vector3d& x) const;
    QueryResult query_point(const Eigen::Vector3d& x, QueryMode mode) const;

    BevGrid project_bev() const;

    /// Writes base.config, base.prims, base.cells and base.ply. The text
    /// records round-trip bit-exactly; the PLY is a derived view for
    /// external tools.
    void export_map(const std::string& base_path) const;
    static SemanticMap import_map(const std::string& base_path);

    const MapConfig& config() const { return config_; }
    const VoxelGrid& grid() const { return grid_; }
    const std::vector<GaussianPrimitive>& primitives() const { return primitives_; }
    std::uint64_t frames_ingested() const { return frame_seq_; }

private:
    struct QueryContext {
        double u_thr = 0.0;
        double max_semi_axis = 0.0;
        std::vector<Ellipsoid<3>> ellipsoids;
        std::optional<SpatialHashGrid> index;
    };

    void ingest_e2bki(const std::vector<EvidentialPoint>& points, FrameReport& report);
    void ingest_points(const std::vector<EvidentialPoint>& points, FrameReport& report);
    void rebuild_query_context();
    QueryResult query_cell(const DirichletCell* cell) const;
    QueryResult query_continuous(const Eigen::Vector3d& x) const;

    template <typename F>
    void for_each_center_in_ball(const Eigen::Vector3d& center, double radius, F&& f) const;

    MapConfig config_;
    VoxelGrid grid_;
    std::vector<GaussianPrimitive> primitives_;
    std::uint64_t frame_seq_ = 0;
    double tau3_ = 0.0;
    QueryResult unknown_result_;
    QueryContext query_ctx_;
};

} // namespace e2bki
