#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace e2bki {

/// Uniform grid hash over 3D positions. Radius queries visit every grid cell
/// overlapping the query ball, so the candidate set is always a superset of
/// the true neighbors; results are filtered exactly and returned sorted by id
/// for deterministic iteration.
class SpatialHashGrid {
public:
    explicit SpatialHashGrid(double cell_size) : cell_size_(cell_size) {
        if (!(cell_size_ > 0.0))
            throw std::invalid_argument("SpatialHashGrid: cell size must be positive");
    }

    void insert(int id, const Eigen::Vector3d& position) {
        cells_[key_of(position)].push_back({id, position});
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [k, v] : cells_) n += v.size();
        return n;
    }

    /// Ids with ||position - query|| <= radius, ascending.
    std::vector<int> query_radius(const Eigen::Vector3d& query, double radius) const {
        std::vector<int> out;
        const double r2 = radius * radius;
        const Eigen::Vector3i lo = cell_of(query.array() - radius);
        const Eigen::Vector3i hi = cell_of(query.array() + radius);
        for (int ix = lo.x(); ix <= hi.x(); ++ix)
            for (int iy = lo.y(); iy <= hi.y(); ++iy)
                for (int iz = lo.z(); iz <= hi.z(); ++iz) {
                    const auto it = cells_.find(pack(ix, iy, iz));
                    if (it == cells_.end()) continue;
                    for (const Entry& e : it->second)
                        if ((e.position - query).squaredNorm() <= r2)
                            out.push_back(e.id);
                }
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    struct Entry {
        int id;
        Eigen::Vector3d position;
    };

    Eigen::Vector3i cell_of(const Eigen::Array3d& p) const {
        return Eigen::Vector3i(static_cast<int>(std::floor(p.x() / cell_size_)),
                               static_cast<int>(std::floor(p.y() / cell_size_)),
                               static_cast<int>(std::floor(p.z() / cell_size_)));
    }

    static std::uint64_t pack(int x, int y, int z) {
        const auto ux = static_cast<std::uint64_t>(static_cast<std::uint32_t>(x));
        const auto uy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(y));
        const auto uz = static_cast<std::uint64_t>(static_cast<std::uint32_t>(z));
        std::uint64_t h = ux * 0x9e3779b97f4a7c15ULL;
        h ^= uy * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
        h ^= uz * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
        return h;
    }

    std::uint64_t key_of(const Eigen::Vector3d& p) const {
        const Eigen::Vector3i c = cell_of(p.array());
        return pack(c.x(), c.y(), c.z());
    }

    double cell_size_;
    std::unordered_map<std::uint64_t, std::vector<Entry>> cells_;
};

} // namespace e2bki
