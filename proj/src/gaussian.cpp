#include "e2bki/gaussian.hpp"

#include <algorithm>
#include <limits>

#include "e2bki/rng.hpp"

namespace e2bki {

std::map<int, std::vector<int>> partition_by_class(std::span<const EvidentialPoint> points) {
    std::map<int, std::vector<int>> partition;
    for (std::size_t i = 0; i < points.size(); ++i)
        partition[points[i].prob.argmax()].push_back(static_cast<int>(i));
    return partition;
}

namespace {

// Reassigns one point from a cluster of size >= 2 (the one farthest from its
// own center, ties to the lowest point index) into each empty cluster.
void repair_empty_clusters(std::span<const Eigen::Vector3d> positions,
                           std::vector<Eigen::Vector3d>& centers,
                           std::vector<int>& assignment) {
    const int k = static_cast<int>(centers.size());
    std::vector<int> sizes(k, 0);
    for (int a : assignment) ++sizes[a];
    for (int empty = 0; empty < k; ++empty) {
        if (sizes[empty] > 0) continue;
        int worst = -1;
        double worst_d2 = -1.0;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            const int a = assignment[i];
            if (sizes[a] < 2) continue;
            const double d2 = (positions[i] - centers[a]).squaredNorm();
            if (d2 > worst_d2) {
                worst_d2 = d2;
                worst = static_cast<int>(i);
            }
        }
        if (worst < 0) continue; // k > distinct points; nothing to split
        --sizes[assignment[worst]];
        assignment[worst] = empty;
        sizes[empty] = 1;
        centers[empty] = positions[worst];
    }
}

} // namespace

std::vector<int> kmeanspp(std::span<const Eigen::Vector3d> positions, int k,
                          std::uint64_t seed, int max_iters) {
    const int n = static_cast<int>(positions.size());
    if (n == 0) throw std::invalid_argument("kmeanspp: empty input");
    if (k < 1) throw std::invalid_argument("kmeanspp: k must be >= 1");
    k = std::min(k, n);

    Rng rng(seed);
    std::vector<Eigen::Vector3d> centers;
    centers.reserve(k);
    centers.push_back(positions[rng.index(n)]);

    // D^2 seeding
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], (positions[i] - centers.back()).squaredNorm());
            total += d2[i];
        }
        int pick = n - 1;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double csum = 0.0;
            for (int i = 0; i < n; ++i) {
                csum += d2[i];
                if (csum > r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.index(n));
        }
        centers.push_back(positions[pick]);
    }

    auto assign_all = [&](std::vector<int>& assignment) {
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d2 = (positions[i] - centers[0]).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (positions[i] - centers[c]).squaredNorm();
                if (d < best_d2) {
                    best_d2 = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
    };

    std::vector<int> assignment(n, 0);
    assign_all(assignment);
    repair_empty_clusters(positions, centers, assignment);

    std::vector<int> previous(n);
    for (int iter = 0; iter < max_iters; ++iter) {
        std::vector<Eigen::Vector3d> sums(k, Eigen::Vector3d::Zero());
        std::vector<int> sizes(k, 0);
        for (int i = 0; i < n; ++i) {
            sums[assignment[i]] += positions[i];
            ++sizes[assignment[i]];
        }
        for (int c = 0; c < k; ++c)
            if (sizes[c] > 0) centers[c] = sums[c] / sizes[c];

        previous = assignment;
        assign_all(assignment);
        repair_empty_clusters(positions, centers, assignment);
        if (assignment == previous) break;
    }
    return assignment;
}

std::map<int, int> allocate_cluster_counts(const std::map<int, int>& partition_sizes,
                                           int total_k) {
    int total_points = 0;
    int non_empty = 0;
    for (const auto& [cls, size] : partition_sizes) {
        if (size < 0) throw std::invalid_argument("allocate_cluster_counts: negative size");
        if (size > 0) {
            total_points += size;
            ++non_empty;
        }
    }
    if (non_empty == 0)
        throw std::invalid_argument("allocate_cluster_counts: no non-empty classes");
    if (total_k < non_empty)
        throw std::invalid_argument(
            "allocate_cluster_counts: total_k smaller than the number of non-empty classes");

    std::map<int, int> counts;
    std::vector<std::pair<double, int>> remainders; // (-remainder, class): sort ascending
    int assigned = 0;
    for (const auto& [cls, size] : partition_sizes) {
        if (size == 0) continue;
        const double quota = static_cast<double>(total_k) * size / total_points;
        const int base = static_cast<int>(std::floor(quota));
        counts[cls] = base;
        assigned += base;
        remainders.push_back({-(quota - base), cls});
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t i = 0; i < remainders.size() && assigned < total_k; ++i) {
        ++counts[remainders[i].second];
        ++assigned;
    }
    // raise zero allocations to one, taking from the largest counts
    for (auto& [cls, count] : counts) {
        if (count > 0) continue;
        auto largest = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it)
            if (it->second > largest->second) largest = it;
        --largest->second;
        ++count;
    }
    return counts;
}

GaussianPrimitive build_primitive(std::span<const EvidentialPoint> points,
                                  std::span<const int> member_indices,
                                  double cov_floor, std::uint64_t stamp,
                                  long* clamp_warnings, long* conflict_skips) {
    if (member_indices.empty())
        throw std::invalid_argument("build_primitive: empty cluster");
    Eigen::Vector3d m1 = Eigen::Vector3d::Zero();
    Eigen::Matrix3d m2 = Eigen::Matrix3d::Zero();
    double range_sum = 0.0;
    std::vector<BeliefMass> masses;
    masses.reserve(member_indices.size());
    for (int idx : member_indices) {
        const EvidentialPoint& p = points[idx];
        m1 += p.position;
        m2 += p.position * p.position.transpose();
        range_sum += p.sensor_range;
        masses.push_back(prob_to_belief(p.prob, p.uncertainty, clamp_warnings));
    }
    const double eta = static_cast<double>(member_indices.size());
    BeliefMass semantics = combine_all(masses, conflict_skips);
    return GaussianPrimitive(std::move(m1), std::move(m2), eta, std::move(semantics),
                             range_sum / eta, cov_floor, stamp);
}

GaussianPrimitive build_primitive(std::span<const EvidentialPoint> cluster,
                                  double cov_floor, std::uint64_t stamp,
                                  long* clamp_warnings, long* conflict_skips) {
    std::vector<int> indices(cluster.size());
    for (std::size_t i = 0; i < cluster.size(); ++i) indices[i] = static_cast<int>(i);
    return build_primitive(cluster, indices, cov_floor, stamp, clamp_warnings,
                           conflict_skips);
}

} // namespace e2bki
