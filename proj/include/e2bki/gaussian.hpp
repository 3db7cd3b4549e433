#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "e2bki/belief.hpp"

namespace e2bki {

/// One 3D observation: position, class distribution, predictive uncertainty
/// and the range from the sensor origin at capture time.
struct EvidentialPoint {
    Eigen::Vector3d position;
    ClassProbability prob;
    double uncertainty = 0.0;
    double sensor_range = 0.0;
};

/// Anisotropic Gaussian over a cluster of evidential points, kept in moment
/// form (first moment, second moment, count) so that merging is pure
/// addition. Carries fused semantics and the mean sensor range of its
/// members as a reliability score.
class GaussianPrimitive {
public:
    GaussianPrimitive(Eigen::Vector3d m1, Eigen::Matrix3d m2, double eta,
                      BeliefMass semantics, double sensor_dist, double cov_floor,
                      std::uint64_t stamp = 0)
        : m1_(std::move(m1)),
          m2_(std::move(m2)),
          eta_(eta),
          semantics_(std::move(semantics)),
          prob_(belief_to_prob(semantics_)),
          argmax_(prob_.argmax()),
          sensor_dist_(sensor_dist),
          cov_floor_(cov_floor),
          stamp_(stamp) {
        if (!(eta_ >= 1.0))
            throw std::invalid_argument("GaussianPrimitive: eta must be >= 1");
        if (!(cov_floor_ >= 0.0))
            throw std::invalid_argument("GaussianPrimitive: negative covariance floor");
    }

    const Eigen::Vector3d& first_moment() const { return m1_; }
    const Eigen::Matrix3d& second_moment() const { return m2_; }
    double eta() const { return eta_; }

    Eigen::Vector3d mean() const { return m1_ / eta_; }

    // Raw moment-recovered covariance, symmetrized but not regularized.
    Eigen::Matrix3d covariance_raw() const {
        const Eigen::Vector3d mu = mean();
        Eigen::Matrix3d cov = m2_ / eta_ - mu * mu.transpose();
        return 0.5 * (cov + cov.transpose());
    }

    // Regularized covariance used for all geometry.
    Eigen::Matrix3d covariance() const {
        return covariance_raw() + cov_floor_ * Eigen::Matrix3d::Identity();
    }

    const BeliefMass& semantics() const { return semantics_; }
    const ClassProbability& prob() const { return prob_; }
    double uncertainty() const { return semantics_.uncertainty(); }
    int argmax_class() const { return argmax_; }
    int class_count() const { return prob_.class_count(); }
    double sensor_dist() const { return sensor_dist_; }
    double cov_floor() const { return cov_floor_; }

    // Ingestion step that created this primitive. Absorbing keeps the
    // target's stamp, so each primitive posts evidence to the grid exactly
    // once, in its creation frame; a fold only enriches the stored geometry
    // and semantics.
    std::uint64_t stamp() const { return stamp_; }
    void set_stamp(std::uint64_t s) { stamp_ = s; }

    /// Folds another primitive into this one: moments added componentwise,
    /// semantics combined with Dempster's rule (kept unchanged on total
    /// conflict), sensor distance merged as the eta-weighted mean.
    void absorb(const GaussianPrimitive& other, long* conflict_skips = nullptr) {
        if (other.class_count() != class_count())
            throw std::invalid_argument("absorb: mismatched class counts");
        const double eta_total = eta_ + other.eta_;
        sensor_dist_ = (sensor_dist_ * eta_ + other.sensor_dist_ * other.eta_) / eta_total;
        m1_ += other.m1_;
        m2_ += other.m2_;
        eta_ = eta_total;
        try {
            semantics_ = combine(semantics_, other.semantics_);
        } catch (const TotalConflictError&) {
            if (conflict_skips) ++*conflict_skips;
        }
        prob_ = belief_to_prob(semantics_);
        argmax_ = prob_.argmax();
    }

private:
    Eigen::Vector3d m1_;
    Eigen::Matrix3d m2_;
    double eta_;
    BeliefMass semantics_;
    ClassProbability prob_;
    int argmax_;
    double sensor_dist_;
    double cov_floor_;
    std::uint64_t stamp_;
};

/// Groups point indices by argmax class (ties to the lowest class index).
/// Only non-empty classes appear as keys.
std::map<int, std::vector<int>> partition_by_class(std::span<const EvidentialPoint> points);

/// K-Means++ seeding followed by Lloyd iterations until the assignment is
/// stable or max_iters is reached. k is clamped to the point count; every
/// cluster ends up non-empty. Deterministic for a given seed.
std::vector<int> kmeanspp(std::span<const Eigen::Vector3d> positions, int k,
                          std::uint64_t seed, int max_iters = 50);

/// Splits a total cluster budget across classes proportionally to their
/// point counts (largest-remainder rounding); every non-empty class gets at
/// least one cluster and the counts sum to total_k.
std::map<int, int> allocate_cluster_counts(const std::map<int, int>& partition_sizes,
                                           int total_k);

/// Builds a primitive from the points selected by member_indices: moments
/// are plain sums, semantics the ordered Dempster fold of the members'
/// belief masses, sensor distance their mean range.
GaussianPrimitive build_primitive(std::span<const EvidentialPoint> points,
                                  std::span<const int> member_indices,
                                  double cov_floor, std::uint64_t stamp = 0,
                                  long* clamp_warnings = nullptr,
                                  long* conflict_skips = nullptr);

/// Convenience overload over a whole cluster.
GaussianPrimitive build_primitive(std::span<const EvidentialPoint> cluster,
                                  double cov_floor, std::uint64_t stamp = 0,
                                  long* clamp_warnings = nullptr,
                                  long* conflict_skips = nullptr);

} // namespace e2bki
