#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "e2bki/frame_io.hpp"
#include "e2bki/map.hpp"

namespace e2bki {

/// Per-class confusion counts over a query set, plus Brier accumulators for
/// both confidence conventions (1 - decomposed uncertainty and
/// 1 - normalized Dirichlet variance).
class ConfusionTally {
public:
    explicit ConfusionTally(int class_count);

    /// Query answered by the map: updates TP/FP/FN and the Brier sums.
    void add_known(int true_class, int predicted_class, double conf_decomposed,
                   double conf_variance);
    /// Query the map could not answer (unoccupied): counts as FN for the
    /// true class and is excluded from the Brier average.
    void add_unknown(int true_class);

    long tp(int c) const { return tp_[c]; }
    long fp(int c) const { return fp_[c]; }
    long fn(int c) const { return fn_[c]; }
    long queries() const { return queries_; }
    long occupied_queries() const { return occupied_; }
    int class_count() const { return static_cast<int>(tp_.size()); }

    double brier_sum_decomposed() const { return brier_decomposed_; }
    double brier_sum_variance() const { return brier_variance_; }

private:
    std::vector<long> tp_, fp_, fn_;
    long queries_ = 0;
    long occupied_ = 0;
    double brier_decomposed_ = 0.0;
    double brier_variance_ = 0.0;
};

struct Metrics {
    Eigen::VectorXd iou;  // NaN for classes with no queries at all
    double miou = 0.0;    // classes absent from ground truth excluded
    double acc = 0.0;
    double brier_decomposed = 0.0; // NaN when no occupied queries
    double brier_variance = 0.0;
    bool brier_defined = false;
};

Metrics metrics(const ConfusionTally& tally);

struct RefQuery {
    Eigen::Vector3d position;
    int true_class;
};

/// Aggregates all ground-truth points, voxelizes at resolution/4 and keeps
/// only voxels with a single true label; one query per surviving voxel at
/// the member centroid.
std::vector<RefQuery> build_reference_queries(const std::vector<Frame>& frames,
                                              const std::vector<std::vector<int>>& truths,
                                              double resolution);

/// Runs every reference query against the map under both confidence
/// conventions.
ConfusionTally evaluate_map(const SemanticMap& map, std::span<const RefQuery> queries);

/// Desk-scale synthetic world: a ground plane, a fence strip and ellipsoidal
/// vegetation blobs, observed from a moving sensor.
///
/// Label corruption is structured the way segmentation networks fail: the
/// world is tiled into xy patches, and each (patch, class) pair is misread
/// for the whole run with a probability that rises logistically with the
/// patch's closest sensor approach. Every point carries u = that corruption
/// probability plus clipped Gaussian jitter, so the reported uncertainty is
/// honest but imperfect. Point density falls off with range as
/// min(1, (density_range/r)^2), mimicking a scanning sensor; the *_points
/// fields are attempt counts before that rejection.
struct SceneSpec {
    std::uint64_t seed = 1;
    int frame_count = 50;
    int class_count = 3; // 0 ground, 1 fence, 2 vegetation
    int ground_points = 1400;
    int fence_points = 700;
    int vegetation_points = 600;
    int vegetation_blobs = 5;
    double corruption_max = 0.30;
    double corruption_midpoint = 7.5; // meters
    double corruption_scale = 0.8;    // meters
    double patch_size = 1.25;         // meters, corruption granularity
    double u_jitter = 0.05;
    double position_noise = 0.02; // meters
    double density_range = 4.0;   // meters; 0 disables the falloff
    // Spurious-return fraction, scaled by corruption_max/0.3. Outliers carry
    // a uniformly random label, uncertainty 1 - 1/C + jitter and sit well
    // above the surface they came from.
    double outlier_rate = 0.30;
};

/// Probability that a (patch, class) pair at the given closest sensor
/// approach is misread for the whole run.
double corruption_probability(const SceneSpec& spec, double range);

/// Sensor origin of one frame; the trajectory is a straight sweep.
Eigen::Vector3d scene_sensor_origin(const SceneSpec& spec, int frame_index);

/// Deterministic given the seed. When out_dir is non-empty, emits
/// frame_0000.txt / truth_0000.txt pairs there.
std::vector<Frame> generate_scene(const SceneSpec& spec,
                                  std::vector<std::vector<int>>* truths,
                                  const std::string& out_dir = {});

struct ExperimentCell {
    Mode mode = Mode::e2bki;
    std::uint64_t seed = 1;
    double frame_fraction = 1.0;
    double corruption = 0.30;
};

struct ExperimentRow {
    ExperimentCell cell;
    Metrics result;
    double wall_ms = 0.0;
    bool ok = false;
    std::string error;
};

/// Selects frames 0, stride, 2*stride, ... with stride = round(1/fraction).
std::vector<int> select_frames(int frame_count, double fraction);

/// Runs each (mode x sparsity x corruption x seed) cell against reference
/// queries built from the full scene. Cells run in parallel up to `threads`
/// workers; results are deterministic and ordered as given. Scene frames are
/// emitted under scene_dir when non-empty. Per-cell failures are recorded
/// and the run continues.
std::vector<ExperimentRow> run_experiment(const MapConfig& base_config,
                                          const SceneSpec& base_scene,
                                          std::span<const ExperimentCell> cells,
                                          int threads = 1,
                                          const std::string& scene_dir = {});

/// CSV schema: mode, seed, frame_fraction, corruption, miou, acc, brier,
/// wall_ms. The brier column follows each mode's convention: decomposed
/// uncertainty for e2bki, normalized variance for the baselines.
void write_experiment_csv(std::ostream& out, std::span<const ExperimentRow> rows);

} // namespace e2bki
