#pragma once

#include <stdexcept>
#include <vector>

#include "e2bki/gaussian.hpp"

namespace e2bki {

/// Refinement radii and pruning sensitivity. d_l is the semantic-consistency
/// neighborhood, d_s the merge radius; epsilon scales the sensor-distance
/// ratio that triggers pruning.
struct RefineParams {
    double d_l = 1.0;  // meters, typically 5 * length_scale
    double d_s = 0.2;  // meters, typically length_scale
    double epsilon = 2.5;

    void validate() const {
        if (!(d_s > 0.0 && d_s <= d_l))
            throw std::invalid_argument("RefineParams: require 0 < d_s <= d_l");
        if (!(epsilon >= 1.0))
            throw std::invalid_argument("RefineParams: epsilon must be >= 1");
    }
};

/// Merges semantically consistent neighborhoods. In insertion order, a
/// primitive whose d_l neighbors all share its argmax class folds every
/// live primitive within d_s into itself (moment addition, Dempster
/// semantics, eta-weighted sensor distance). Distances and classes are
/// snapshots from the sweep start; sweeps repeat until no fold happens, so a
/// second call right after is a no-op. Returns the number of primitives
/// folded away.
int merge_pass(std::vector<GaussianPrimitive>& primitives, const RefineParams& params,
               long* conflict_skips = nullptr);

/// Removes primitive j when some neighbor i within d_l has a conflicting
/// argmax class and sensor_dist_j > epsilon * sensor_dist_i. All decisions
/// are made against the pre-pass snapshot, so removals never cascade within
/// one pass. Returns the number pruned.
int prune_pass(std::vector<GaussianPrimitive>& primitives, const RefineParams& params);

} // namespace e2bki
