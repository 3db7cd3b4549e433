#include "e2bki/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "e2bki/log.hpp"
#include "e2bki/rng.hpp"

namespace e2bki {

ConfusionTally::ConfusionTally(int class_count)
    : tp_(class_count, 0), fp_(class_count, 0), fn_(class_count, 0) {
    if (class_count < 2)
        throw std::invalid_argument("ConfusionTally: need at least 2 classes");
}

void ConfusionTally::add_known(int true_class, int predicted_class, double conf_decomposed,
                               double conf_variance) {
    ++queries_;
    ++occupied_;
    if (predicted_class == true_class) {
        ++tp_[true_class];
    } else {
        ++fp_[predicted_class];
        ++fn_[true_class];
    }
    const double correct = predicted_class == true_class ? 1.0 : 0.0;
    const double cd = std::clamp(conf_decomposed, 0.0, 1.0);
    const double cv = std::clamp(conf_variance, 0.0, 1.0);
    brier_decomposed_ += (correct - cd) * (correct - cd);
    brier_variance_ += (correct - cv) * (correct - cv);
}

void ConfusionTally::add_unknown(int true_class) {
    ++queries_;
    ++fn_[true_class];
}

Metrics metrics(const ConfusionTally& tally) {
    if (tally.queries() == 0) throw std::invalid_argument("metrics: no queries");
    const int c = tally.class_count();
    Metrics m;
    m.iou = Eigen::VectorXd::Constant(c, std::numeric_limits<double>::quiet_NaN());
    double iou_sum = 0.0;
    int present = 0;
    long tp_total = 0;
    for (int i = 0; i < c; ++i) {
        const long denom = tally.tp(i) + tally.fp(i) + tally.fn(i);
        if (denom > 0) m.iou[i] = static_cast<double>(tally.tp(i)) / denom;
        tp_total += tally.tp(i);
        // classes absent from the ground truth are excluded from mIoU
        if (tally.tp(i) + tally.fn(i) > 0) {
            iou_sum += m.iou[i];
            ++present;
        }
    }
    m.miou = present > 0 ? iou_sum / present : 0.0;
    m.acc = static_cast<double>(tp_total) / tally.queries();
    if (tally.occupied_queries() > 0) {
        m.brier_defined = true;
        m.brier_decomposed = tally.brier_sum_decomposed() / tally.occupied_queries();
        m.brier_variance = tally.brier_sum_variance() / tally.occupied_queries();
    } else {
        m.brier_defined = false;
        m.brier_decomposed = std::numeric_limits<double>::quiet_NaN();
        m.brier_variance = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

namespace {

struct RefKeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
        std::uint64_t h = static_cast<std::uint64_t>(k[0]) * 0x9e3779b97f4a7c15ULL;
        h ^= static_cast<std::uint64_t>(k[1]) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(k[2]) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

} // namespace

std::vector<RefQuery> build_reference_queries(const std::vector<Frame>& frames,
                                              const std::vector<std::vector<int>>& truths,
                                              double resolution) {
    if (frames.size() != truths.size())
        throw std::invalid_argument("build_reference_queries: frames/truths size mismatch");
    const double cell = resolution / 4.0;

    struct Accum {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        long count = 0;
        int label = -1;
        bool mixed = false;
    };
    std::unordered_map<std::array<std::int64_t, 3>, Accum, RefKeyHash> voxels;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (frames[f].points.size() != truths[f].size())
            throw std::invalid_argument(
                "build_reference_queries: truth sidecar does not match frame size");
        for (std::size_t i = 0; i < frames[f].points.size(); ++i) {
            if (truths[f][i] < 0) continue; // no ground truth for this point
            const Eigen::Vector3d& p = frames[f].points[i].position;
            const std::array<std::int64_t, 3> key = {
                static_cast<std::int64_t>(std::floor(p.x() / cell)),
                static_cast<std::int64_t>(std::floor(p.y() / cell)),
                static_cast<std::int64_t>(std::floor(p.z() / cell))};
            Accum& a = voxels[key];
            a.sum += p;
            ++a.count;
            if (a.label < 0)
                a.label = truths[f][i];
            else if (a.label != truths[f][i])
                a.mixed = true;
        }
    }

    std::vector<std::pair<std::array<std::int64_t, 3>, Accum>> kept;
    kept.reserve(voxels.size());
    for (const auto& [key, a] : voxels)
        if (!a.mixed) kept.push_back({key, a});
    std::sort(kept.begin(), kept.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<RefQuery> queries;
    queries.reserve(kept.size());
    for (const auto& [key, a] : kept)
        queries.push_back(RefQuery{a.sum / static_cast<double>(a.count), a.label});
    return queries;
}

ConfusionTally evaluate_map(const SemanticMap& map, std::span<const RefQuery> queries) {
    ConfusionTally tally(map.config().bki_num_classes);
    for (const RefQuery& q : queries) {
        const QueryResult r = map.query_point(q.position);
        if (!r.known) {
            tally.add_unknown(q.true_class);
        } else {
            tally.add_known(q.true_class, r.label, 1.0 - r.u_total,
                            1.0 - std::min(1.0, 4.0 * r.variance));
        }
    }
    return tally;
}

double corruption_probability(const SceneSpec& spec, double range) {
    const double z = (range - spec.corruption_midpoint) / spec.corruption_scale;
    return spec.corruption_max / (1.0 + std::exp(-z));
}

Eigen::Vector3d scene_sensor_origin(const SceneSpec& spec, int frame_index) {
    const double t =
        spec.frame_count > 1
            ? static_cast<double>(frame_index) / static_cast<double>(spec.frame_count - 1)
            : 0.5;
    // out-and-back sweep along x
    const double s = t <= 0.5 ? 2.0 * t : 2.0 * (1.0 - t);
    return Eigen::Vector3d(-6.0 + 12.0 * s, -4.0, 1.5);
}

namespace {

// Per-run misread table: each (xy patch, class) either reads true for the
// whole run or flips to one fixed wrong class, decided by a patch-keyed
// stream so frames agree with each other.
class CorruptionField {
public:
    CorruptionField(const SceneSpec& spec) : spec_(spec) {
        for (int f = 0; f < spec.frame_count; ++f)
            origins_.push_back(scene_sensor_origin(spec, f));
    }

    struct PatchState {
        double probability = 0.0;
        int reported = 0; // equals the true class when not flipped
    };

    const PatchState& lookup(const Eigen::Vector3d& pos, int true_class) {
        const auto ix =
            static_cast<std::int64_t>(std::floor(pos.x() / spec_.patch_size)) + (1 << 20);
        const auto iy =
            static_cast<std::int64_t>(std::floor(pos.y() / spec_.patch_size)) + (1 << 20);
        const std::uint64_t key = (static_cast<std::uint64_t>(ix) << 29) |
                                  (static_cast<std::uint64_t>(iy) << 8) |
                                  static_cast<std::uint64_t>(true_class);
        const auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;

        const Eigen::Vector3d center((ix - (1 << 20) + 0.5) * spec_.patch_size,
                                     (iy - (1 << 20) + 0.5) * spec_.patch_size, 0.6);
        double closest = std::numeric_limits<double>::infinity();
        for (const Eigen::Vector3d& o : origins_)
            closest = std::min(closest, (center - o).norm());

        PatchState state;
        state.probability = corruption_probability(spec_, closest);
        state.reported = true_class;
        Rng rng(mix_seed(mix_seed(spec_.seed, 0x9a7c), key));
        if (rng.uniform() < state.probability) {
            const int shift = 1 + static_cast<int>(rng.index(spec_.class_count - 1));
            state.reported = (true_class + shift) % spec_.class_count;
        }
        return cache_.emplace(key, state).first->second;
    }

private:
    const SceneSpec& spec_;
    std::vector<Eigen::Vector3d> origins_;
    std::unordered_map<std::uint64_t, PatchState> cache_;
};

} // namespace

std::vector<Frame> generate_scene(const SceneSpec& spec,
                                  std::vector<std::vector<int>>* truths,
                                  const std::string& out_dir) {
    if (spec.class_count != 3)
        throw std::invalid_argument("generate_scene: the synthetic world has 3 classes");
    if (spec.frame_count < 1)
        throw std::invalid_argument("generate_scene: need at least one frame");

    Rng scene_rng(mix_seed(spec.seed, 0xe25c));
    // vegetation blob geometry is fixed per scene
    struct Blob {
        Eigen::Vector3d center;
        Eigen::Vector3d semi;
    };
    std::vector<Blob> blobs;
    for (int b = 0; b < spec.vegetation_blobs; ++b) {
        Blob blob;
        blob.center = Eigen::Vector3d(scene_rng.uniform(-7.0, 7.0),
                                      scene_rng.uniform(-5.5, 1.5),
                                      scene_rng.uniform(0.4, 0.8));
        blob.semi = Eigen::Vector3d(scene_rng.uniform(0.6, 1.2), scene_rng.uniform(0.6, 1.2),
                                    scene_rng.uniform(0.4, 0.8));
        blobs.push_back(blob);
    }

    CorruptionField corruption(spec);
    std::vector<Frame> frames;
    frames.reserve(spec.frame_count);
    if (truths) truths->clear();

    for (int f = 0; f < spec.frame_count; ++f) {
        Rng rng(mix_seed(spec.seed, 1000003ULL * (f + 1)));
        Frame frame;
        frame.class_count = spec.class_count;
        frame.origin = scene_sensor_origin(spec, f);
        std::vector<int> truth;

        auto emit = [&](const Eigen::Vector3d& true_pos, int true_class) {
            const double true_range = (true_pos - frame.origin).norm();
            if (spec.density_range > 0.0 && true_range > spec.density_range) {
                const double keep = (spec.density_range / true_range) *
                                    (spec.density_range / true_range);
                if (rng.uniform() >= keep) return;
            }
            // spurious-return rate follows the same logistic rise with range
            const double z_range =
                (true_range - spec.corruption_midpoint) / spec.corruption_scale;
            const double outlier_rate = spec.outlier_rate *
                                        std::min(1.0, spec.corruption_max / 0.30) /
                                        (1.0 + std::exp(-z_range));
            const bool outlier = rng.uniform() < outlier_rate;

            int reported;
            double u;
            Eigen::Vector3d pos = true_pos;
            if (outlier) {
                // garbage label with honestly huge uncertainty
                reported = static_cast<int>(rng.index(spec.class_count));
                u = 1.0 - 1.0 / spec.class_count + spec.u_jitter * rng.gaussian();
                for (int i = 0; i < 3; ++i)
                    pos[i] += 3.0 * spec.position_noise * rng.gaussian();
            } else {
                const auto& patch = corruption.lookup(true_pos, true_class);
                reported = patch.reported;
                u = patch.probability + spec.u_jitter * rng.gaussian();
                for (int i = 0; i < 3; ++i) pos[i] += spec.position_noise * rng.gaussian();
            }
            u = std::clamp(u, 0.0, 1.0);

            // one-hot belief scaled by certainty, spread back to a distribution
            Eigen::VectorXd probs =
                Eigen::VectorXd::Constant(spec.class_count, u / spec.class_count);
            probs[reported] += 1.0 - u;

            const double range = (pos - frame.origin).norm();
            frame.points.push_back(EvidentialPoint{std::move(pos),
                                                   ClassProbability(std::move(probs)), u,
                                                   range});
            // spurious returns carry no ground truth
            truth.push_back(outlier ? -1 : true_class);
        };

        for (int i = 0; i < spec.ground_points; ++i)
            emit(Eigen::Vector3d(rng.uniform(-8.0, 8.0), rng.uniform(-6.0, 6.0), 0.0), 0);
        for (int i = 0; i < spec.fence_points; ++i)
            emit(Eigen::Vector3d(rng.uniform(-8.0, 8.0), 3.0, rng.uniform(0.0, 1.2)), 1);
        if (!blobs.empty()) {
            for (int i = 0; i < spec.vegetation_points; ++i) {
                const Blob& blob = blobs[rng.index(blobs.size())];
                Eigen::Vector3d dir(rng.gaussian(), rng.gaussian(), rng.gaussian());
                const double norm = dir.norm();
                if (norm < 1e-12) {
                    dir = Eigen::Vector3d::UnitX();
                } else {
                    dir /= norm;
                }
                emit(blob.center + dir.cwiseProduct(blob.semi), 2);
            }
        }

        frames.push_back(std::move(frame));
        if (truths) truths->push_back(std::move(truth));

        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            char name[64];
            std::snprintf(name, sizeof(name), "frame_%04d.txt", f);
            write_frame_file(out_dir + "/" + name, frames.back());
            std::snprintf(name, sizeof(name), "truth_%04d.txt", f);
            write_truth_file(out_dir + "/" + name,
                             truths ? truths->back() : std::vector<int>{});
        }
    }
    return frames;
}

std::vector<int> select_frames(int frame_count, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("select_frames: fraction must lie in (0,1]");
    const int stride = std::max(1, static_cast<int>(std::lround(1.0 / fraction)));
    std::vector<int> indices;
    for (int i = 0; i < frame_count; i += stride) indices.push_back(i);
    return indices;
}

std::vector<ExperimentRow> run_experiment(const MapConfig& base_config,
                                          const SceneSpec& base_scene,
                                          std::span<const ExperimentCell> cells,
                                          int threads, const std::string& scene_dir) {
    struct Scene {
        std::vector<Frame> frames;
        std::vector<RefQuery> queries;
    };

    // scenes are shared across cells with the same (seed, corruption)
    std::map<std::pair<std::uint64_t, double>, Scene> scenes;
    for (const ExperimentCell& cell : cells) {
        const auto key = std::make_pair(cell.seed, cell.corruption);
        if (scenes.count(key)) continue;
        SceneSpec spec = base_scene;
        spec.seed = cell.seed;
        spec.corruption_max = cell.corruption;
        std::string dir;
        if (!scene_dir.empty()) {
            std::ostringstream ss;
            ss << scene_dir << "/seed" << cell.seed << "_corr" << cell.corruption;
            dir = ss.str();
        }
        Scene scene;
        std::vector<std::vector<int>> truths;
        scene.frames = generate_scene(spec, &truths, dir);
        scene.queries = build_reference_queries(scene.frames, truths,
                                                base_config.voxel_resolution);
        scenes.emplace(key, std::move(scene));
    }

    std::vector<ExperimentRow> rows(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            const ExperimentCell& cell = cells[i];
            ExperimentRow& row = rows[i];
            row.cell = cell;
            try {
                const Scene& scene = scenes.at({cell.seed, cell.corruption});
                MapConfig cfg = base_config;
                cfg.mode = cell.mode;
                cfg.gaussian_rng_seed = mix_seed(base_config.gaussian_rng_seed, cell.seed);
                SemanticMap map(cfg);
                const auto start = std::chrono::steady_clock::now();
                for (int idx : select_frames(static_cast<int>(scene.frames.size()),
                                             cell.frame_fraction))
                    map.ingest_frame(scene.frames[idx]);
                row.wall_ms = std::chrono::duration<double, std::milli>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
                row.result = metrics(evaluate_map(map, scene.queries));
                row.ok = true;
            } catch (const std::exception& e) {
                row.ok = false;
                row.error = e.what();
                log_warn(std::string("experiment cell failed: ") + e.what());
            }
        }
    };

    threads = std::max(1, threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return rows;
}

void write_experiment_csv(std::ostream& out, std::span<const ExperimentRow> rows) {
    out << "mode,seed,frame_fraction,corruption,miou,acc,brier,wall_ms\n";
    char buf[64];
    auto fixed6 = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        return std::string(buf);
    };
    for (const ExperimentRow& row : rows) {
        const double brier = row.cell.mode == Mode::e2bki ? row.result.brier_decomposed
                                                          : row.result.brier_variance;
        std::snprintf(buf, sizeof(buf), "%g", row.cell.frame_fraction);
        const std::string frac = buf;
        std::snprintf(buf, sizeof(buf), "%g", row.cell.corruption);
        const std::string corr = buf;
        out << to_string(row.cell.mode) << "," << row.cell.seed << "," << frac << ","
            << corr << ",";
        if (row.ok)
            out << fixed6(row.result.miou) << "," << fixed6(row.result.acc) << ","
                << fixed6(brier) << ",";
        else
            out << "nan,nan,nan,";
        std::snprintf(buf, sizeof(buf), "%.3f", row.wall_ms);
        out << buf << "\n";
    }
}

} // namespace e2bki
