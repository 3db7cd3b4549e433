#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <e2bki/map.hpp>
#include <e2bki/rng.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace e2bki;

namespace {

std::string temp_base(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "e2bki_map_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

std::string read_text(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

EvidentialPoint make_point(const Eigen::Vector3d& pos, int cls, double u, double range,
                           int classes = 3) {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(classes, u / classes);
    p[cls] += 1.0 - u;
    return EvidentialPoint{pos, ClassProbability(p), u, range};
}

Frame blob_frame(Rng& rng, const Eigen::Vector3d& center, int cls, int n, double spread,
                 double u = 0.1) {
    Frame frame;
    frame.class_count = 3;
    frame.origin = Eigen::Vector3d::Zero();
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d pos =
            center + spread * Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian());
        frame.points.push_back(make_point(pos, cls, u, pos.norm()));
    }
    return frame;
}

MapConfig test_config() {
    MapConfig cfg;
    cfg.bki_num_classes = 3;
    return cfg;
}

} // namespace

TEST_CASE("a compact single-class frame labels the touched cells with that class") {
    Rng rng(1);
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    const Frame frame = blob_frame(rng, {1.0, 1.0, 0.5}, 2, 40, 0.02);
    const FrameReport rep = map.ingest_frame(frame);

    CHECK(rep.points == 40);
    CHECK(rep.primitives_created > 0);
    CHECK(rep.cells_touched > 0);
    CHECK(map.grid().size() > 0);

    for (const Key3& key : map.grid().sorted_keys()) {
        const QueryResult r = map.query_voxel(key);
        REQUIRE(r.known);
        CHECK(r.label == 2);
    }
    CHECK(map.query_point(Eigen::Vector3d(1.0, 1.0, 0.5)).known);
}

TEST_CASE("empty and invalid frames") {
    MapConfig cfg = test_config();
    SemanticMap map(cfg);

    SUBCASE("empty frame is a no-op") {
        Frame frame;
        frame.class_count = 3;
        const FrameReport rep = map.ingest_frame(frame);
        CHECK(rep.points == 0);
        CHECK(rep.cells_touched == 0);
        CHECK(map.grid().size() == 0);
        CHECK(map.frames_ingested() == 0);
    }
    SUBCASE("invalid points are skipped and counted") {
        Rng rng(2);
        Frame frame = blob_frame(rng, {0, 0, 0}, 0, 5, 0.02);
        frame.points[1].position.x() = std::numeric_limits<double>::quiet_NaN();
        frame.points[3].sensor_range = -1.0;
        const FrameReport rep = map.ingest_frame(frame);
        CHECK(rep.skipped == 2);
        CHECK(rep.primitives_created > 0);
    }
    SUBCASE("class count mismatch is rejected") {
        Frame frame;
        frame.class_count = 5;
        frame.points.push_back(make_point({0, 0, 0}, 0, 0.1, 1.0, 5));
        CHECK_THROWS_AS(map.ingest_frame(frame), std::invalid_argument);
    }
}

TEST_CASE("ingesting two frames equals ingesting their concatenation") {
    // degenerate singleton clusters, refinement off, every uncertainty equal:
    // the update rule is additive across frames
    Rng rng(3);
    MapConfig cfg = test_config();
    cfg.refine_enabled_merge = false;
    cfg.refine_enabled_prune = false;
    cfg.gaussian_total_clusters = 100000;

    Frame a = blob_frame(rng, {0.5, 0, 0}, 0, 10, 0.3, 0.25);
    Frame b = blob_frame(rng, {0.9, 0.2, 0}, 1, 12, 0.3, 0.25);

    SemanticMap split(cfg);
    split.ingest_frame(a);
    split.ingest_frame(b);

    Frame both = a;
    for (const auto& p : b.points) both.points.push_back(p);
    SemanticMap joint(cfg);
    joint.ingest_frame(both);

    const auto keys_split = split.grid().sorted_keys();
    const auto keys_joint = joint.grid().sorted_keys();
    REQUIRE(keys_split == keys_joint);
    for (const Key3& key : keys_split) {
        const auto* cs = split.grid().find(key);
        const auto* cj = joint.grid().find(key);
        CHECK((cs->alpha() - cj->alpha()).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("continuous query at a stored voxel center equals the stored result") {
    Rng rng(4);
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    Frame frame = blob_frame(rng, {0.5, 0.5, 0.2}, 0, 60, 0.15);
    Frame more = blob_frame(rng, {1.2, 0.5, 0.2}, 1, 50, 0.12);
    for (const auto& p : more.points) frame.points.push_back(p);
    map.ingest_frame(frame);

    int compared = 0;
    for (const Key3& key : map.grid().sorted_keys()) {
        const QueryResult stored = map.query_voxel(key);
        const QueryResult cont =
            map.query_point(map.grid().center_of(key), QueryMode::continuous);
        REQUIRE(cont.known == stored.known);
        CHECK(cont.label == stored.label);
        CHECK((cont.expectation - stored.expectation).cwiseAbs().maxCoeff() <= 1e-13);
        CHECK(cont.u_total == doctest::Approx(stored.u_total).epsilon(1e-13));
        ++compared;
    }
    CHECK(compared > 5);
}

TEST_CASE("queries far from all evidence are unknown") {
    Rng rng(5);
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    map.ingest_frame(blob_frame(rng, {0, 0, 0}, 0, 30, 0.05));

    for (QueryMode qm : {QueryMode::voxel3d, QueryMode::continuous}) {
        const QueryResult r = map.query_point(Eigen::Vector3d(50, 50, 50), qm);
        CHECK(!r.known);
        CHECK(r.label == -1);
        CHECK(r.u_total == 1.0);
        CHECK(r.u_sem == 1.0);
    }
}

TEST_CASE("continuous query interpolates between two same-class primitives") {
    Rng rng(6);
    MapConfig cfg = test_config();
    cfg.gaussian_total_clusters = 2;
    cfg.refine_enabled_merge = false;
    SemanticMap map(cfg);

    Frame frame = blob_frame(rng, {0.0, 0, 0}, 1, 25, 0.03);
    const Frame other = blob_frame(rng, {0.5, 0, 0}, 1, 25, 0.03);
    for (const auto& p : other.points) frame.points.push_back(p);
    map.ingest_frame(frame);
    REQUIRE(map.primitives().size() == 2);

    const QueryResult mid = map.query_point(Eigen::Vector3d(0.25, 0, 0), QueryMode::continuous);
    REQUIRE(mid.known);
    CHECK(mid.label == 1);
}

TEST_CASE("scsm mode reduces to per-voxel counting") {
    Rng rng(7);
    MapConfig cfg = test_config();
    cfg.mode = Mode::scsm;
    SemanticMap map(cfg);

    Frame frame = blob_frame(rng, {0.3, -0.2, 0.1}, 0, 100, 0.5, 0.2);
    for (int i = 0; i < 40; ++i)
        frame.points.push_back(make_point(
            {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}, 2, 0.2, 1.0));
    map.ingest_frame(frame);

    // independent recount
    std::map<Key3, Eigen::VectorXd> expected;
    for (const auto& p : frame.points) {
        const Key3 k = map.grid().index_of(p.position);
        auto [it, fresh] =
            expected.try_emplace(k, Eigen::VectorXd::Constant(3, cfg.bki_alpha0));
        it->second[p.prob.argmax()] += 1.0;
    }
    REQUIRE(map.grid().size() == expected.size());
    for (const auto& [key, alpha] : expected) {
        const auto* cell = map.grid().find(key);
        REQUIRE(cell != nullptr);
        CHECK((cell->alpha() - alpha).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("every cell reachable by brute force is found by the radius update") {
    Rng rng(8);
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    Frame frame = blob_frame(rng, {0.2, 0.1, 0.0}, 0, 30, 0.25, 0.3);
    const Frame second = blob_frame(rng, {-0.6, 0.4, 0.3}, 2, 25, 0.2, 0.4);
    for (const auto& p : second.points) frame.points.push_back(p);
    map.ingest_frame(frame);

    // recompute the update brute-force over a box that safely covers everything
    const double tau = chi2_quantile(3, cfg.ellipsoid_mass_fraction);
    std::vector<double> us;
    for (const auto& p : map.primitives()) us.push_back(p.uncertainty());
    const double u_thr = u_threshold(us, cfg.kernel.u_percentile);

    std::set<Key3> brute;
    const double res = cfg.voxel_resolution;
    for (int ix = -20; ix <= 20; ++ix)
        for (int iy = -20; iy <= 20; ++iy)
            for (int iz = -20; iz <= 20; ++iz) {
                const Key3 key{ix, iy, iz};
                const Eigen::Vector3d center(
                    (ix + 0.5) * res, (iy + 0.5) * res, (iz + 0.5) * res);
                for (const auto& p : map.primitives()) {
                    const auto shell = to_ellipsoid(p, tau);
                    const double w = adaptive_kernel(surface_distance<3>(center, shell),
                                                     p.uncertainty(), cfg.kernel, u_thr);
                    if (w > 0.0) {
                        brute.insert(key);
                        break;
                    }
                }
            }

    const auto keys = map.grid().sorted_keys();
    const std::set<Key3> found(keys.begin(), keys.end());
    CHECK(found == brute);
}

TEST_CASE("bev projection") {
    MapConfig cfg = test_config();

    SUBCASE("empty map gives an empty grid") {
        SemanticMap map(cfg);
        CHECK(map.project_bev().size() == 0);
    }
    SUBCASE("spherical primitive leaves a four-fold symmetric disk footprint") {
        cfg.gaussian_total_clusters = 1;
        SemanticMap map(cfg);
        Frame frame;
        frame.class_count = 3;
        // points on a sphere of radius 0.5 centered at the origin
        Rng rng(9);
        for (int i = 0; i < 400; ++i) {
            Eigen::Vector3d dir(rng.gaussian(), rng.gaussian(), rng.gaussian());
            dir.normalize();
            frame.points.push_back(make_point(0.5 * dir, 1, 0.2, 1.0));
        }
        map.ingest_frame(frame);
        REQUIRE(map.primitives().size() == 1);

        const BevGrid bev = map.project_bev();
        REQUIRE(bev.size() > 0);
        std::set<std::pair<int, int>> cells;
        for (const Key2& k : bev.sorted_keys()) {
            CHECK(bev.find(k)->posterior_stats().label == 1);
            cells.insert({k.x, k.y});
        }
        // footprint centered on the origin: closed under 90-degree rotation
        for (const auto& [x, y] : cells)
            CHECK(cells.count({-y - 1, x}) == 1);
    }
    SUBCASE("z-elongated primitive leaves a near-point footprint") {
        cfg.gaussian_total_clusters = 1;
        SemanticMap map(cfg);
        Frame frame;
        frame.class_count = 3;
        Rng rng(10);
        for (int i = 0; i < 200; ++i)
            frame.points.push_back(
                make_point({0.0, 0.0, rng.uniform(-1.0, 1.0)}, 0, 0.2, 1.0));
        map.ingest_frame(frame);
        REQUIRE(map.primitives().size() == 1);

        const BevGrid bev = map.project_bev();
        REQUIRE(bev.size() > 0);
        // support is bounded by kernel reach plus the tiny marginal ellipse
        const double tau2 = chi2_quantile(2, cfg.ellipsoid_mass_fraction);
        const double r_ell = std::sqrt(tau2 * (cfg.cov_floor() + 1e-4));
        const double bound = cfg.kernel.length_scale * cfg.kernel.beta * std::exp(0.8) +
                             r_ell + bev.resolution();
        for (const Key2& k : bev.sorted_keys())
            CHECK(bev.center_of(k).norm() <= bound);
    }
    SUBCASE("baseline modes have no primitives to project") {
        cfg.mode = Mode::sbki;
        SemanticMap map(cfg);
        CHECK_THROWS_AS(map.project_bev(), std::invalid_argument);
    }
}

TEST_CASE("map export round trip") {
    Rng rng(11);
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    map.ingest_frame(blob_frame(rng, {0.4, 0.2, 0.1}, 0, 50, 0.2, 0.15));
    map.ingest_frame(blob_frame(rng, {0.8, -0.3, 0.2}, 1, 40, 0.2, 0.22));

    const std::string base1 = temp_base("map1");
    const std::string base2 = temp_base("map2");
    map.export_map(base1);
    const SemanticMap back = SemanticMap::import_map(base1);
    back.export_map(base2);

    for (const char* ext : {".config", ".prims", ".cells", ".ply"})
        CHECK(read_text(base1 + ext) == read_text(base2 + ext));

    // reloaded map answers queries identically
    for (const Key3& key : map.grid().sorted_keys()) {
        const QueryResult a = map.query_voxel(key);
        const QueryResult b = back.query_voxel(key);
        CHECK(a.label == b.label);
        CHECK(a.u_total == b.u_total);
    }
    CHECK(back.primitives().size() == map.primitives().size());
    CHECK(back.frames_ingested() == map.frames_ingested());
}

TEST_CASE("empty map exports valid header-only files") {
    MapConfig cfg = test_config();
    SemanticMap map(cfg);
    const std::string base = temp_base("empty");
    map.export_map(base);
    const SemanticMap back = SemanticMap::import_map(base);
    CHECK(back.grid().size() == 0);
    CHECK(back.primitives().empty());
    const std::string ply = read_text(base + ".ply");
    CHECK(ply.find("element vertex 0") != std::string::npos);
}

TEST_CASE("single-cell map exports a single PLY vertex") {
    MapConfig cfg = test_config();
    cfg.mode = Mode::scsm;
    SemanticMap map(cfg);
    Frame frame;
    frame.class_count = 3;
    frame.points.push_back(make_point({0.05, 0.05, 0.05}, 1, 0.1, 1.0));
    map.ingest_frame(frame);
    const std::string base = temp_base("onecell");
    map.export_map(base);
    const std::string ply = read_text(base + ".ply");
    CHECK(ply.find("element vertex 1") != std::string::npos);
}

TEST_CASE("identical seed and frames give byte-identical exports") {
    MapConfig cfg = test_config();
    const std::string base1 = temp_base("det1");
    const std::string base2 = temp_base("det2");
    for (const std::string& base : {base1, base2}) {
        Rng rng(12);
        SemanticMap map(cfg);
        map.ingest_frame(blob_frame(rng, {0.3, 0.3, 0.0}, 0, 80, 0.3, 0.2));
        map.ingest_frame(blob_frame(rng, {0.9, -0.1, 0.3}, 2, 60, 0.25, 0.3));
        map.export_map(base);
    }
    for (const char* ext : {".config", ".prims", ".cells", ".ply"})
        CHECK(read_text(base1 + ext) == read_text(base2 + ext));
}

TEST_CASE("sbki and e2bki summaries diverge on the same input") {
    Rng rng(13);
    Frame frame = blob_frame(rng, {0.5, 0.5, 0.0}, 0, 60, 0.3, 0.3);

    MapConfig cfg = test_config();
    SemanticMap full(cfg);
    cfg.mode = Mode::sbki;
    SemanticMap baseline(cfg);
    const FrameReport ra = full.ingest_frame(frame);
    const FrameReport rb = baseline.ingest_frame(frame);
    CHECK(ra.primitives_created > 0);
    CHECK(rb.primitives_created == 0);
    CHECK(full.grid().size() != baseline.grid().size());
}
