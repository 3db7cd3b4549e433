#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

#include "e2bki/belief.hpp"

namespace e2bki {

struct PosteriorStats {
    int label = 0;
    Eigen::VectorXd expectation;
    double variance = 0.0; // Dirichlet variance at the label class
};

struct UncertaintyDecomposition {
    double semantic = 1.0; // kernel-weighted mean observation uncertainty
    double spatial = 0.0;  // evidence-sparsity term
    double total = 1.0;    // semantic + spatial, clamped to [0,1]
};

/// Dirichlet evidence accumulator for one query location. Tracks alpha per
/// class plus the running kernel mass and kernel-weighted uncertainty needed
/// for the decomposed uncertainty. All sums are Kahan-compensated; long
/// streams of alpha0-scale increments would otherwise lose precision.
class DirichletCell {
public:
    DirichletCell(int class_count, double alpha0)
        : alpha_(Eigen::VectorXd::Constant(class_count, alpha0)),
          alpha_comp_(Eigen::VectorXd::Zero(class_count)),
          alpha0_(alpha0) {
        if (class_count < 2)
            throw std::invalid_argument("DirichletCell: need at least 2 classes");
        if (!(alpha0 > 0.0))
            throw std::invalid_argument("DirichletCell: alpha0 must be positive");
    }

    static DirichletCell init(int class_count, double alpha0) {
        return DirichletCell(class_count, alpha0);
    }

    /// alpha^c += weight * p^c; zero weight is an exact no-op.
    void accumulate(double weight, const ClassProbability& p, double u) {
        if (!(weight >= 0.0))
            throw std::invalid_argument("DirichletCell: negative weight");
        if (p.class_count() != class_count())
            throw std::invalid_argument("DirichletCell: mismatched class count");
        if (!(u >= 0.0 && u <= 1.0))
            throw std::invalid_argument("DirichletCell: uncertainty outside [0,1]");
        if (weight == 0.0) return;
        for (int c = 0; c < class_count(); ++c)
            kahan_add(alpha_[c], alpha_comp_[c], weight * p.values()[c]);
        kahan_add(kernel_mass_, kernel_mass_comp_, weight);
        kahan_add(weighted_u_, weighted_u_comp_, weight * u);
    }

    const Eigen::VectorXd& alpha() const { return alpha_; }
    double kernel_mass() const { return kernel_mass_; }
    double weighted_u() const { return weighted_u_; }
    int class_count() const { return static_cast<int>(alpha_.size()); }
    double alpha0() const { return alpha0_; }

    PosteriorStats posterior_stats() const {
        PosteriorStats stats;
        const double s = alpha_.sum();
        for (int c = 1; c < class_count(); ++c)
            if (alpha_[c] > alpha_[stats.label]) stats.label = c;
        stats.expectation = alpha_ / s;
        const double al = alpha_[stats.label];
        stats.variance = al * (s - al) / (s * s * (s + 1.0));
        return stats;
    }

    /// Semantic part: kernel-weighted mean of observation uncertainties,
    /// defined as 1 for never-touched cells. Spatial part:
    /// (C-1) / (C^2 (S+1)) with S = C*alpha0 + kernel mass, the variance of
    /// the flattened Dirichlet. Total clamped to [0,1] so 1 - total stays a
    /// valid confidence.
    UncertaintyDecomposition decomposed_uncertainty() const {
        UncertaintyDecomposition d;
        const double c = static_cast<double>(class_count());
        d.semantic = kernel_mass_ > 0.0
                         ? std::clamp(weighted_u_ / kernel_mass_, 0.0, 1.0)
                         : 1.0;
        const double s = c * alpha0_ + kernel_mass_;
        d.spatial = (c - 1.0) / (c * c * (s + 1.0));
        d.total = std::clamp(d.semantic + d.spatial, 0.0, 1.0);
        return d;
    }

    /// Restores a cell from exported state (compensations reset).
    static DirichletCell restore(double alpha0, Eigen::VectorXd alpha,
                                 double kernel_mass, double weighted_u) {
        DirichletCell cell(static_cast<int>(alpha.size()), alpha0);
        cell.alpha_ = std::move(alpha);
        cell.kernel_mass_ = kernel_mass;
        cell.weighted_u_ = weighted_u;
        return cell;
    }

private:
    static void kahan_add(double& sum, double& comp, double value) {
        const double y = value - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }

    Eigen::VectorXd alpha_;
    Eigen::VectorXd alpha_comp_;
    double kernel_mass_ = 0.0;
    double kernel_mass_comp_ = 0.0;
    double weighted_u_ = 0.0;
    double weighted_u_comp_ = 0.0;
    double alpha0_;
};

} // namespace e2bki
