#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <e2bki/eval.hpp>
#include <e2bki/rng.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace e2bki;

namespace {

std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "e2bki_eval_test" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("metrics arithmetic") {
    SUBCASE("perfect single-class map") {
        ConfusionTally tally(2);
        for (int i = 0; i < 10; ++i) tally.add_known(0, 0, 1.0, 1.0);
        const Metrics m = metrics(tally);
        CHECK(m.iou[0] == doctest::Approx(1.0));
        CHECK(m.acc == doctest::Approx(1.0));
        CHECK(m.brier_decomposed == doctest::Approx(0.0));
        CHECK(m.miou == doctest::Approx(1.0)); // class 1 absent, excluded
    }
    SUBCASE("all queries unmatched") {
        ConfusionTally tally(2);
        for (int i = 0; i < 5; ++i) tally.add_unknown(1);
        const Metrics m = metrics(tally);
        CHECK(m.acc == doctest::Approx(0.0));
        CHECK(!m.brier_defined);
        CHECK(std::isnan(m.brier_decomposed));
    }
    SUBCASE("hand-computed two-class tally") {
        // TP=(3,1), FP=(1,0), FN=(0,1), Q=5
        ConfusionTally tally(2);
        tally.add_known(0, 0, 1, 1);
        tally.add_known(0, 0, 1, 1);
        tally.add_known(0, 0, 1, 1);
        tally.add_known(1, 1, 1, 1);
        tally.add_known(1, 0, 1, 1); // FP for 0, FN for 1
        const Metrics m = metrics(tally);
        CHECK(m.iou[0] == doctest::Approx(0.75));
        CHECK(m.iou[1] == doctest::Approx(0.5));
        CHECK(m.miou == doctest::Approx(0.625));
        CHECK(m.acc == doctest::Approx(0.8));
    }
    SUBCASE("queries decompose into TP + misclassified + unknown") {
        Rng rng(3);
        ConfusionTally tally(3);
        long known = 0, unknown = 0, correct = 0;
        for (int i = 0; i < 500; ++i) {
            const int truth = static_cast<int>(rng.index(3));
            if (rng.uniform() < 0.3) {
                tally.add_unknown(truth);
                ++unknown;
            } else {
                const int pred = static_cast<int>(rng.index(3));
                tally.add_known(truth, pred, rng.uniform(), rng.uniform());
                ++known;
                if (pred == truth) ++correct;
            }
        }
        long tp = 0;
        for (int c = 0; c < 3; ++c) tp += tally.tp(c);
        CHECK(tally.queries() == known + unknown);
        CHECK(tp == correct);
        CHECK(tally.occupied_queries() == known);
        const Metrics m = metrics(tally);
        CHECK(m.acc == doctest::Approx(double(correct) / (known + unknown)));
        CHECK(m.brier_decomposed >= 0.0);
        CHECK(m.brier_decomposed <= 1.0);
    }
    SUBCASE("confidence one makes the Brier score the error rate") {
        ConfusionTally tally(2);
        tally.add_known(0, 0, 1.0, 1.0);
        tally.add_known(0, 1, 1.0, 1.0);
        tally.add_known(0, 0, 1.0, 1.0);
        tally.add_known(0, 1, 1.0, 1.0);
        const Metrics m = metrics(tally);
        CHECK(m.brier_decomposed == doctest::Approx(0.5));
    }
    SUBCASE("no queries is an error") {
        ConfusionTally tally(2);
        CHECK_THROWS_AS(metrics(tally), std::invalid_argument);
    }
}

TEST_CASE("reference queries") {
    auto frame_with = [](std::vector<Eigen::Vector3d> pts) {
        Frame f;
        f.class_count = 3;
        for (const auto& p : pts)
            f.points.push_back(EvidentialPoint{p, ClassProbability::uniform(3), 1.0, 1.0});
        return f;
    };

    SUBCASE("uniform labels keep every voxel") {
        const Frame f = frame_with({{0.01, 0, 0}, {1.0, 0, 0}, {2.0, 0, 0}});
        const auto queries = build_reference_queries({f}, {{1, 1, 1}}, 0.2);
        CHECK(queries.size() == 3);
        for (const auto& q : queries) CHECK(q.true_class == 1);
    }
    SUBCASE("a voxel with two true labels is dropped") {
        // both points land in the same 0.05 m voxel but disagree
        const Frame f = frame_with({{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}, {1.0, 0, 0}});
        const auto queries = build_reference_queries({f}, {{0, 1, 2}}, 0.2);
        CHECK(queries.size() == 1);
        CHECK(queries[0].true_class == 2);
    }
    SUBCASE("matches a brute-force recount on a random cloud") {
        Rng rng(5);
        Frame f;
        f.class_count = 3;
        std::vector<int> truth;
        for (int i = 0; i < 100; ++i) {
            f.points.push_back(EvidentialPoint{
                Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
                ClassProbability::uniform(3), 1.0, 1.0});
            truth.push_back(static_cast<int>(rng.index(3)));
        }
        const auto queries = build_reference_queries({f}, {truth}, 0.2);

        std::map<std::array<int, 3>, std::set<int>> brute;
        for (int i = 0; i < 100; ++i) {
            const auto& p = f.points[i].position;
            brute[{static_cast<int>(std::floor(p.x() / 0.05)),
                   static_cast<int>(std::floor(p.y() / 0.05)),
                   static_cast<int>(std::floor(p.z() / 0.05))}]
                .insert(truth[i]);
        }
        std::size_t expect = 0;
        for (const auto& [k, labels] : brute)
            if (labels.size() == 1) ++expect;
        CHECK(queries.size() == expect);
    }
}

TEST_CASE("scene generation") {
    SceneSpec spec;
    spec.frame_count = 3;

    SUBCASE("deterministic given the seed") {
        const std::string dir1 = temp_dir("gen1");
        const std::string dir2 = temp_dir("gen2");
        generate_scene(spec, nullptr, dir1);
        generate_scene(spec, nullptr, dir2);
        for (int f = 0; f < spec.frame_count; ++f) {
            char name[64];
            std::snprintf(name, sizeof(name), "/frame_%04d.txt", f);
            CHECK(read_text(dir1 + name) == read_text(dir2 + name));
        }
    }
    SUBCASE("zero corruption gives clean labels and small uncertainty") {
        SceneSpec clean = spec;
        clean.corruption_max = 0.0; // also disables spurious returns
        std::vector<std::vector<int>> truths;
        const auto frames = generate_scene(clean, &truths);
        for (std::size_t f = 0; f < frames.size(); ++f)
            for (std::size_t i = 0; i < frames[f].points.size(); ++i) {
                CHECK(truths[f][i] >= 0);
                CHECK(frames[f].points[i].prob.argmax() == truths[f][i]);
                CHECK(frames[f].points[i].uncertainty <= 4.0 * clean.u_jitter);
            }
    }
    SUBCASE("emitted files parse back to the in-memory frames") {
        const std::string dir = temp_dir("parse");
        std::vector<std::vector<int>> truths;
        const auto frames = generate_scene(spec, &truths, dir);
        const Frame f0 = read_frame_file(dir + "/frame_0000.txt");
        CHECK(f0.points.size() == frames[0].points.size());
        CHECK(f0.origin == frames[0].origin);
        CHECK(f0.points[7].position == frames[0].points[7].position);
        CHECK(read_truth_file(dir + "/truth_0000.txt") == truths[0]);
    }
    SUBCASE("patch misread rate tracks the logistic model within 3 sigma") {
        // corruption is drawn once per (patch, class); the statistical unit
        // is therefore the patch decision, pooled over many seeds
        std::map<int, std::pair<long, long>> bins; // probability bin -> (flips, total)
        std::map<int, double> prob_sums;
        for (std::uint64_t seed = 1; seed <= 40; ++seed) {
            SceneSpec s = spec;
            s.seed = seed;
            s.frame_count = 4;
            std::vector<std::vector<int>> truths;
            const auto frames = generate_scene(s, &truths);

            // majority vote per (patch, class); position noise can smear a
            // few boundary points into the wrong patch
            std::map<std::tuple<long, long, int>, std::pair<long, long>> votes;
            for (std::size_t f = 0; f < frames.size(); ++f) {
                for (std::size_t i = 0; i < frames[f].points.size(); ++i) {
                    if (truths[f][i] < 0) continue; // spurious return
                    const auto& p = frames[f].points[i];
                    const auto key = std::make_tuple(
                        static_cast<long>(std::floor(p.position.x() / s.patch_size)),
                        static_cast<long>(std::floor(p.position.y() / s.patch_size)),
                        truths[f][i]);
                    auto& [flips, total] = votes[key];
                    flips += p.prob.argmax() != truths[f][i] ? 1 : 0;
                    total += 1;
                }
            }
            std::map<std::tuple<long, long, int>, bool> patches;
            for (const auto& [key, v] : votes)
                patches[key] = 2 * v.first > v.second;
            for (const auto& [key, flipped] : patches) {
                const Eigen::Vector3d center((std::get<0>(key) + 0.5) * s.patch_size,
                                             (std::get<1>(key) + 0.5) * s.patch_size, 0.6);
                double closest = std::numeric_limits<double>::infinity();
                for (int f = 0; f < s.frame_count; ++f)
                    closest =
                        std::min(closest, (center - scene_sensor_origin(s, f)).norm());
                const double q = corruption_probability(s, closest);
                const int bin = static_cast<int>(q * 20.0);
                bins[bin].first += flipped ? 1 : 0;
                bins[bin].second += 1;
                prob_sums[bin] += q;
            }
        }
        int checked = 0;
        for (const auto& [bin, counts] : bins) {
            if (counts.second < 300) continue;
            ++checked;
            const double n = static_cast<double>(counts.second);
            const double expect = prob_sums[bin] / n;
            const double sigma = std::sqrt(std::max(expect * (1.0 - expect), 1e-6) / n);
            CHECK(std::abs(counts.first / n - expect) <= 3.0 * sigma + 0.005);
        }
        CHECK(checked >= 2);
    }
}

TEST_CASE("select_frames strides") {
    CHECK(select_frames(50, 1.0).size() == 50);
    CHECK(select_frames(50, 0.2) ==
          std::vector<int>{0, 5, 10, 15, 20, 25, 30, 35, 40, 45});
    CHECK(select_frames(50, 0.04) == std::vector<int>{0, 25});
    CHECK_THROWS_AS(select_frames(50, 0.0), std::invalid_argument);
}

TEST_CASE("experiment runs are deterministic and survive per-cell failures") {
    SceneSpec scene;
    scene.frame_count = 4;
    scene.ground_points = 150;
    scene.fence_points = 60;
    scene.vegetation_points = 60;

    MapConfig cfg;
    cfg.gaussian_total_clusters = 24;

    std::vector<ExperimentCell> cells;
    for (Mode mode : {Mode::scsm, Mode::sbki, Mode::e2bki})
        cells.push_back(ExperimentCell{mode, 7, 1.0, 0.3});
    cells.push_back(ExperimentCell{Mode::e2bki, 7, 0.5, 0.3});

    const auto rows1 = run_experiment(cfg, scene, cells, 2);
    const auto rows2 = run_experiment(cfg, scene, cells, 1);
    REQUIRE(rows1.size() == cells.size());
    for (std::size_t i = 0; i < rows1.size(); ++i) {
        REQUIRE(rows1[i].ok);
        REQUIRE(rows2[i].ok);
        CHECK(rows1[i].result.acc == rows2[i].result.acc);
        CHECK(rows1[i].result.miou == rows2[i].result.miou);
        CHECK(rows1[i].result.brier_decomposed == rows2[i].result.brier_decomposed);
    }

    std::ostringstream csv1, csv2;
    write_experiment_csv(csv1, rows1);
    write_experiment_csv(csv2, rows2);
    CHECK(csv1.str().rfind("mode,seed,frame_fraction,corruption,miou,acc,brier,wall_ms\n",
                           0) == 0);
    // identical apart from the wall-clock column
    auto strip_wall = [](const std::string& csv) {
        std::istringstream in(csv);
        std::string line, out;
        while (std::getline(in, line))
            out += line.substr(0, line.rfind(',')) + "\n";
        return out;
    };
    CHECK(strip_wall(csv1.str()) == strip_wall(csv2.str()));
}
