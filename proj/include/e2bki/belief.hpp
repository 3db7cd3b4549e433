#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>

namespace e2bki {

// Thrown by combine() when the conflict between two masses reaches 1 and the
// Dempster normalization would blow up. Callers keep their first operand.
class TotalConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Discrete distribution over C classes; entries non-negative, summing to one.
class ClassProbability {
public:
    explicit ClassProbability(Eigen::VectorXd probs) : probs_(std::move(probs)) {
        if (probs_.size() < 2)
            throw std::invalid_argument("ClassProbability: need at least 2 classes");
        double sum = 0.0;
        for (Eigen::Index i = 0; i < probs_.size(); ++i) {
            const double v = probs_[i];
            if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-12)
                throw std::invalid_argument("ClassProbability: entry outside [0,1]");
            if (probs_[i] < 0.0) probs_[i] = 0.0;
            sum += probs_[i];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("ClassProbability: entries must sum to 1");
    }

    static ClassProbability uniform(int class_count) {
        return ClassProbability(Eigen::VectorXd::Constant(class_count, 1.0 / class_count));
    }

    static ClassProbability one_hot(int class_count, int cls) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(class_count);
        p[cls] = 1.0;
        return ClassProbability(std::move(p));
    }

    const Eigen::VectorXd& values() const { return probs_; }
    int class_count() const { return static_cast<int>(probs_.size()); }

    // Lowest index wins ties.
    int argmax() const {
        int best = 0;
        for (int i = 1; i < class_count(); ++i)
            if (probs_[i] > probs_[best]) best = i;
        return best;
    }

private:
    Eigen::VectorXd probs_;
};

/// Subjective-logic mass: per-class beliefs plus residual uncertainty,
/// summing to one.
class BeliefMass {
public:
    BeliefMass(Eigen::VectorXd beliefs, double uncertainty)
        : beliefs_(std::move(beliefs)), uncertainty_(uncertainty) {
        if (beliefs_.size() < 2)
            throw std::invalid_argument("BeliefMass: need at least 2 classes");
        double sum = uncertainty_;
        if (!std::isfinite(uncertainty_) || uncertainty_ < -1e-12)
            throw std::invalid_argument("BeliefMass: negative uncertainty");
        if (uncertainty_ < 0.0) uncertainty_ = 0.0;
        for (Eigen::Index i = 0; i < beliefs_.size(); ++i) {
            const double v = beliefs_[i];
            if (!std::isfinite(v) || v < -1e-12)
                throw std::invalid_argument("BeliefMass: negative belief");
            if (beliefs_[i] < 0.0) beliefs_[i] = 0.0;
            sum += beliefs_[i];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("BeliefMass: masses must sum to 1");
    }

    // Fully uncertain mass: the identity element of combine().
    static BeliefMass vacuous(int class_count) {
        return BeliefMass(Eigen::VectorXd::Zero(class_count), 1.0);
    }

    const Eigen::VectorXd& beliefs() const { return beliefs_; }
    double uncertainty() const { return uncertainty_; }
    int class_count() const { return static_cast<int>(beliefs_.size()); }

private:
    Eigen::VectorXd beliefs_;
    double uncertainty_;
};

/// Converts a class distribution with predictive uncertainty u into a belief
/// mass, b^c = p^c - u/C. Components that would go negative (upstream float
/// error) are clamped to zero and the deficit is absorbed into the
/// uncertainty so masses still sum to one; each clamp bumps *clamp_warnings.
inline BeliefMass prob_to_belief(const ClassProbability& p, double u,
                                 long* clamp_warnings = nullptr) {
    if (!(u >= 0.0 && u <= 1.0))
        throw std::invalid_argument("prob_to_belief: uncertainty outside [0,1]");
    const int c = p.class_count();
    Eigen::VectorXd b = p.values().array() - u / c;
    bool clamped = false;
    for (int i = 0; i < c; ++i) {
        if (b[i] < 0.0) {
            b[i] = 0.0;
            clamped = true;
            if (clamp_warnings) ++*clamp_warnings;
        }
    }
    double u_out = clamped ? 1.0 - b.sum() : u;
    u_out = std::min(1.0, std::max(0.0, u_out));
    return BeliefMass(std::move(b), u_out);
}

/// Inverse map, p^c = b^c + u/C.
inline ClassProbability belief_to_prob(const BeliefMass& m) {
    return ClassProbability(m.beliefs().array() + m.uncertainty() / m.class_count());
}

/// Dempster's combination rule:
///   b^c = (b1^c b2^c + b1^c u2 + b2^c u1) / (1 - delta),  u = u1 u2 / (1 - delta)
/// with conflict delta = sum_{x != y} b1^x b2^y. Throws TotalConflictError when
/// delta reaches 1 (within 1e-12).
inline BeliefMass combine(const BeliefMass& m1, const BeliefMass& m2) {
    if (m1.class_count() != m2.class_count())
        throw std::invalid_argument("combine: mismatched class counts");
    // Un-normalized combined masses. Their total equals 1 - delta exactly;
    // summing them sidesteps the cancellation that computing delta by
    // subtraction suffers when the conflict is close to 1.
    Eigen::VectorXd b = m1.beliefs().array() * m2.beliefs().array() +
                        m1.beliefs().array() * m2.uncertainty() +
                        m2.beliefs().array() * m1.uncertainty();
    const double u = m1.uncertainty() * m2.uncertainty();
    const double total = b.sum() + u;
    if (total <= 1e-12)
        throw TotalConflictError("combine: total conflict between belief masses");
    b /= total;
    return BeliefMass(std::move(b), u / total);
}

/// Left-fold of combine() in input order. Operands that hit total conflict
/// are skipped and counted in *conflict_skips.
inline BeliefMass combine_all(std::span<const BeliefMass> masses,
                              long* conflict_skips = nullptr) {
    if (masses.empty())
        throw std::invalid_argument("combine_all: empty sequence");
    BeliefMass acc = masses[0];
    for (std::size_t i = 1; i < masses.size(); ++i) {
        try {
            acc = combine(acc, masses[i]);
        } catch (const TotalConflictError&) {
            if (conflict_skips) ++*conflict_skips;
        }
    }
    return acc;
}

} // namespace e2bki
