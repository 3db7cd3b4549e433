#include "e2bki/refine.hpp"

#include <vector>

#include "e2bki/spatial_hash.hpp"

namespace e2bki {

int merge_pass(std::vector<GaussianPrimitive>& primitives, const RefineParams& params,
               long* conflict_skips) {
    params.validate();
    const int n = static_cast<int>(primitives.size());
    if (n < 2) return 0;

    // Sweeps run until no fold happens, each against a snapshot of positions
    // and classes taken at sweep start; a folding sweep shrinks the set, so
    // this terminates and a repeated pass is a no-op. After the first sweep
    // only targets whose neighborhood actually changed (something moved in or
    // vanished within d_l + d_s) can fold, so later sweeps rescan just those.
    std::vector<bool> alive(n, true);
    std::vector<Eigen::Vector3d> changed;
    const double ds2 = params.d_s * params.d_s;
    int total = 0;
    bool first = true;

    while (true) {
        std::vector<Eigen::Vector3d> positions(n);
        std::vector<int> classes(n);
        SpatialHashGrid grid(params.d_l);
        for (int i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            positions[i] = primitives[i].mean();
            classes[i] = primitives[i].argmax_class();
            grid.insert(i, positions[i]);
        }

        std::vector<bool> dirty(n, first);
        if (!first) {
            for (const Eigen::Vector3d& p : changed)
                for (int id : grid.query_radius(p, params.d_l + params.d_s))
                    dirty[id] = true;
        }
        changed.clear();

        int folds = 0;
        for (int target = 0; target < n; ++target) {
            if (!alive[target] || !dirty[target]) continue;
            const std::vector<int> neighbors =
                grid.query_radius(positions[target], params.d_l);
            bool consistent = true;
            for (int nb : neighbors) {
                if (nb != target && classes[nb] != classes[target]) {
                    consistent = false;
                    break;
                }
            }
            if (!consistent) continue;
            bool absorbed_any = false;
            for (int nb : neighbors) {
                if (nb == target || !alive[nb]) continue;
                if ((positions[nb] - positions[target]).squaredNorm() > ds2) continue;
                primitives[target].absorb(primitives[nb], conflict_skips);
                alive[nb] = false;
                changed.push_back(positions[nb]);
                absorbed_any = true;
                ++folds;
            }
            if (absorbed_any) changed.push_back(positions[target]);
        }
        total += folds;
        if (folds == 0) break;
        first = false;
    }

    if (total > 0) {
        std::vector<GaussianPrimitive> kept;
        kept.reserve(n - total);
        for (int i = 0; i < n; ++i)
            if (alive[i]) kept.push_back(std::move(primitives[i]));
        primitives = std::move(kept);
    }
    return total;
}

int prune_pass(std::vector<GaussianPrimitive>& primitives, const RefineParams& params) {
    params.validate();
    const int n = static_cast<int>(primitives.size());
    if (n < 2) return 0;

    std::vector<Eigen::Vector3d> positions(n);
    std::vector<int> classes(n);
    std::vector<double> deltas(n);
    SpatialHashGrid grid(params.d_l);
    for (int i = 0; i < n; ++i) {
        positions[i] = primitives[i].mean();
        classes[i] = primitives[i].argmax_class();
        deltas[i] = primitives[i].sensor_dist();
        grid.insert(i, positions[i]);
    }

    // all decisions against the pre-pass snapshot; no cascade within a pass
    std::vector<bool> pruned(n, false);
    for (int j = 0; j < n; ++j) {
        for (int i : grid.query_radius(positions[j], params.d_l)) {
            if (i == j) continue;
            if (classes[i] != classes[j] && deltas[j] > params.epsilon * deltas[i]) {
                pruned[j] = true;
                break;
            }
        }
    }

    std::vector<GaussianPrimitive> kept;
    kept.reserve(n);
    int removed = 0;
    for (int i = 0; i < n; ++i) {
        if (pruned[i])
            ++removed;
        else
            kept.push_back(std::move(primitives[i]));
    }
    primitives = std::move(kept);
    return removed;
}

} // namespace e2bki
