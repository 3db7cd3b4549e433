#include "e2bki/map.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "e2bki/log.hpp"
#include "e2bki/refine.hpp"
#include "e2bki/rng.hpp"

namespace e2bki {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// label colors for the PLY view
constexpr std::array<std::array<int, 3>, 16> kPalette = {{
    {84, 170, 76},   {204, 57, 57},   {68, 114, 196}, {237, 177, 32},
    {126, 47, 142},  {119, 172, 48},  {77, 190, 238}, {162, 20, 47},
    {0, 128, 128},   {230, 126, 34},  {95, 95, 95},   {255, 105, 180},
    {139, 69, 19},   {0, 100, 0},     {25, 25, 112},  {190, 190, 60},
}};

} // namespace

SemanticMap::SemanticMap(MapConfig config)
    : config_(std::move(config)),
      grid_(config_.voxel_resolution, Eigen::Vector3d::Zero(), config_.bki_num_classes,
            config_.bki_alpha0) {
    config_.validate();
    tau3_ = chi2_quantile(3, config_.ellipsoid_mass_fraction);

    const DirichletCell fresh(config_.bki_num_classes, config_.bki_alpha0);
    const PosteriorStats stats = fresh.posterior_stats();
    const UncertaintyDecomposition unc = fresh.decomposed_uncertainty();
    unknown_result_.known = false;
    unknown_result_.label = -1;
    unknown_result_.expectation = stats.expectation;
    unknown_result_.variance = stats.variance;
    unknown_result_.u_sem = 1.0;
    unknown_result_.u_spa = unc.spatial;
    unknown_result_.u_total = 1.0;
}

FrameReport SemanticMap::ingest_frame(const Frame& frame) {
    if (frame.class_count != config_.bki_num_classes)
        throw std::invalid_argument("ingest_frame: frame declares " +
                                    std::to_string(frame.class_count) +
                                    " classes, map is configured for " +
                                    std::to_string(config_.bki_num_classes));
    FrameReport report;
    report.points = frame.points.size();

    std::vector<EvidentialPoint> valid;
    valid.reserve(frame.points.size());
    for (const EvidentialPoint& p : frame.points) {
        const bool ok = p.position.allFinite() && p.uncertainty >= 0.0 &&
                        p.uncertainty <= 1.0 && p.sensor_range >= 0.0 &&
                        p.prob.class_count() == config_.bki_num_classes;
        if (ok)
            valid.push_back(p);
        else
            ++report.skipped;
    }
    if (valid.empty()) {
        report.live_primitives = primitives_.size();
        return report;
    }

    ++frame_seq_;
    if (config_.mode == Mode::e2bki)
        ingest_e2bki(valid, report);
    else
        ingest_points(valid, report);
    report.live_primitives = primitives_.size();
    return report;
}

void SemanticMap::ingest_e2bki(const std::vector<EvidentialPoint>& points,
                               FrameReport& report) {
    const auto t_init = Clock::now();
    const auto partition = partition_by_class(points);
    std::map<int, int> sizes;
    for (const auto& [cls, members] : partition)
        sizes[cls] = static_cast<int>(members.size());

    const int non_empty = static_cast<int>(partition.size());
    const int total_k = std::clamp(config_.gaussian_total_clusters, non_empty,
                                   static_cast<int>(points.size()));
    const auto counts = allocate_cluster_counts(sizes, total_k);

    for (const auto& [cls, members] : partition) {
        std::vector<Eigen::Vector3d> positions;
        positions.reserve(members.size());
        for (int idx : members) positions.push_back(points[idx].position);

        const std::uint64_t seed =
            mix_seed(config_.gaussian_rng_seed, mix_seed(frame_seq_, cls));
        const int k = std::min(counts.at(cls), static_cast<int>(members.size()));
        const auto assignment =
            kmeanspp(positions, k, seed, config_.gaussian_kmeans_max_iters);

        std::vector<std::vector<int>> clusters(k);
        for (std::size_t i = 0; i < members.size(); ++i)
            clusters[assignment[i]].push_back(members[i]);
        for (const auto& cluster : clusters) {
            if (cluster.empty()) continue;
            primitives_.push_back(build_primitive(points, cluster, config_.cov_floor(),
                                                  frame_seq_, &report.clamp_warnings,
                                                  &report.conflict_skips));
            ++report.primitives_created;
        }
    }
    report.ms_init = ms_since(t_init);

    const auto t_refine = Clock::now();
    const RefineParams refine = config_.refine_params();
    if (config_.refine_enabled_merge)
        report.primitives_merged =
            merge_pass(primitives_, refine, &report.conflict_skips);
    if (config_.refine_enabled_prune)
        report.primitives_pruned = prune_pass(primitives_, refine);
    report.ms_refine = ms_since(t_refine);

    // BKI update from the primitives created this frame and still live, once
    // each; primitives absorbed into an older one were redundant and their
    // targets already posted their own evidence.
    const auto t_update = Clock::now();
    std::vector<const GaussianPrimitive*> updates;
    for (const GaussianPrimitive& p : primitives_)
        if (p.stamp() == frame_seq_) updates.push_back(&p);

    if (!updates.empty()) {
        std::vector<double> us;
        us.reserve(updates.size());
        for (const auto* p : updates) us.push_back(p->uncertainty());
        const double u_thr = u_threshold(us, config_.kernel.u_percentile);
        const double reach = config_.kernel.max_support();

        for (const auto* p : updates) {
            const Ellipsoid<3> shell = to_ellipsoid(*p, tau3_);
            const double radius = reach + shell.semi_axes.maxCoeff();
            const Eigen::Vector3d mu = p->mean();
            for_each_center_in_ball(mu, radius, [&](const Key3& key,
                                                    const Eigen::Vector3d& center) {
                const double w = adaptive_kernel(surface_distance<3>(center, shell),
                                                 p->uncertainty(), config_.kernel, u_thr);
                if (w > 0.0) {
                    grid_.cell(key).accumulate(w, p->prob(), p->uncertainty());
                    ++report.cells_touched;
                }
            });
        }
    }
    report.ms_update = ms_since(t_update);

    rebuild_query_context();
}

void SemanticMap::ingest_points(const std::vector<EvidentialPoint>& points,
                                FrameReport& report) {
    const auto t_update = Clock::now();
    const int c = config_.bki_num_classes;

    double u_thr = 1.0;
    if (config_.mode == Mode::ebs) {
        std::vector<double> us;
        us.reserve(points.size());
        for (const EvidentialPoint& p : points) us.push_back(p.uncertainty);
        u_thr = u_threshold(us, config_.kernel.u_percentile);
    }

    for (const EvidentialPoint& p : points) {
        switch (config_.mode) {
            case Mode::scsm: {
                // discrete counting: unit weight to the containing voxel
                const ClassProbability label = ClassProbability::one_hot(c, p.prob.argmax());
                grid_.cell(grid_.index_of(p.position)).accumulate(1.0, label, p.uncertainty);
                ++report.cells_touched;
                break;
            }
            case Mode::sbki: {
                const ClassProbability label = ClassProbability::one_hot(c, p.prob.argmax());
                for_each_center_in_ball(
                    p.position, config_.kernel.length_scale,
                    [&](const Key3& key, const Eigen::Vector3d& center) {
                        const double w = config_.kernel.sigma0 *
                                         sparse_kernel((center - p.position).norm(),
                                                       config_.kernel.length_scale);
                        if (w > 0.0) {
                            grid_.cell(key).accumulate(w, label, p.uncertainty);
                            ++report.cells_touched;
                        }
                    });
                break;
            }
            case Mode::ebs: {
                if (p.uncertainty > u_thr) break;
                const double scale = config_.kernel.length_scale * config_.kernel.beta *
                                     std::exp(1.0 - config_.kernel.gamma * p.uncertainty);
                for_each_center_in_ball(
                    p.position, scale, [&](const Key3& key, const Eigen::Vector3d& center) {
                        const double w =
                            adaptive_kernel((center - p.position).norm(), p.uncertainty,
                                            config_.kernel, u_thr);
                        if (w > 0.0) {
                            grid_.cell(key).accumulate(w, p.prob, p.uncertainty);
                            ++report.cells_touched;
                        }
                    });
                break;
            }
            case Mode::e2bki:
                break; // handled by ingest_e2bki
        }
    }
    report.ms_update = ms_since(t_update);
}

template <typename F>
void SemanticMap::for_each_center_in_ball(const Eigen::Vector3d& center, double radius,
                                          F&& f) const {
    const Key3 lo = grid_.index_of((center.array() - radius).matrix());
    const Key3 hi = grid_.index_of((center.array() + radius).matrix());
    const double r2 = radius * radius;
    for (std::int32_t ix = lo.x; ix <= hi.x; ++ix)
        for (std::int32_t iy = lo.y; iy <= hi.y; ++iy)
            for (std::int32_t iz = lo.z; iz <= hi.z; ++iz) {
                const Key3 key{ix, iy, iz};
                const Eigen::Vector3d c = grid_.center_of(key);
                if ((c - center).squaredNorm() <= r2) f(key, c);
            }
}

void SemanticMap::rebuild_query_context() {
    query_ctx_ = QueryContext{};
    if (config_.mode != Mode::e2bki || primitives_.empty()) return;

    std::vector<double> us;
    us.reserve(primitives_.size());
    query_ctx_.ellipsoids.reserve(primitives_.size());
    for (const GaussianPrimitive& p : primitives_) {
        us.push_back(p.uncertainty());
        query_ctx_.ellipsoids.push_back(to_ellipsoid(p, tau3_));
        query_ctx_.max_semi_axis = std::max(
            query_ctx_.max_semi_axis, query_ctx_.ellipsoids.back().semi_axes.maxCoeff());
    }
    query_ctx_.u_thr = u_threshold(us, config_.kernel.u_percentile);
    query_ctx_.index.emplace(config_.kernel.max_support() + query_ctx_.max_semi_axis);
    for (std::size_t i = 0; i < primitives_.size(); ++i)
        query_ctx_.index->insert(static_cast<int>(i), primitives_[i].mean());
}

QueryResult SemanticMap::query_cell(const DirichletCell* cell) const {
    if (!cell || cell->kernel_mass() <= 0.0) return unknown_result_;
    const PosteriorStats stats = cell->posterior_stats();
    const UncertaintyDecomposition unc = cell->decomposed_uncertainty();
    QueryResult r;
    r.known = true;
    r.label = stats.label;
    r.expectation = stats.expectation;
    r.variance = stats.variance;
    r.u_sem = unc.semantic;
    r.u_spa = unc.spatial;
    r.u_total = unc.total;
    return r;
}

QueryResult SemanticMap::query_voxel(const Key3& key) const {
    return query_cell(grid_.find(key));
}

QueryResult SemanticMap::query_point(const Eigen::Vector3d& x) const {
    return query_point(x, config_.query_mode);
}

QueryResult SemanticMap::query_point(const Eigen::Vector3d& x, QueryMode mode) const {
    if (mode == QueryMode::continuous) {
        if (config_.mode != Mode::e2bki)
            throw std::invalid_argument(
                "continuous queries need primitives; only available in e2bki mode");
        return query_continuous(x);
    }
    return query_cell(grid_.find(grid_.index_of(x)));
}

QueryResult SemanticMap::query_continuous(const Eigen::Vector3d& x) const {
    if (!query_ctx_.index) return unknown_result_;
    const double reach = config_.kernel.max_support();
    DirichletCell cell(config_.bki_num_classes, config_.bki_alpha0);
    for (int id : query_ctx_.index->query_radius(x, reach + query_ctx_.max_semi_axis)) {
        const GaussianPrimitive& p = primitives_[id];
        const Ellipsoid<3>& shell = query_ctx_.ellipsoids[id];
        if ((x - p.mean()).norm() > reach + shell.semi_axes.maxCoeff()) continue;
        const double w = adaptive_kernel(surface_distance<3>(x, shell), p.uncertainty(),
                                         config_.kernel, query_ctx_.u_thr);
        if (w > 0.0) cell.accumulate(w, p.prob(), p.uncertainty());
    }
    return query_cell(cell.kernel_mass() > 0.0 ? &cell : nullptr);
}

BevGrid SemanticMap::project_bev() const {
    if (config_.mode != Mode::e2bki)
        throw std::invalid_argument("project_bev: requires primitives (e2bki mode)");
    BevGrid bev(config_.voxel_resolution, Eigen::Vector2d::Zero(), config_.bki_num_classes,
                config_.bki_alpha0);
    if (primitives_.empty()) return bev;

    const double tau2 = chi2_quantile(2, config_.ellipsoid_mass_fraction);
    const double reach = config_.kernel.max_support();
    const double u_thr = query_ctx_.u_thr;

    for (const GaussianPrimitive& p : primitives_) {
        // marginalize to the xy plane: drop z of the mean, take the xy block
        const Eigen::Vector2d mu2 = p.mean().head<2>();
        const Eigen::Matrix2d cov2 = p.covariance().topLeftCorner<2, 2>();
        const Ellipsoid<2> shell = make_ellipsoid<2>(mu2, cov2, tau2);
        const double radius = reach + shell.semi_axes.maxCoeff();

        const Key2 lo = bev.index_of((mu2.array() - radius).matrix());
        const Key2 hi = bev.index_of((mu2.array() + radius).matrix());
        const double r2 = radius * radius;
        for (std::int32_t ix = lo.x; ix <= hi.x; ++ix)
            for (std::int32_t iy = lo.y; iy <= hi.y; ++iy) {
                const Key2 key{ix, iy};
                const Eigen::Vector2d center = bev.center_of(key);
                if ((center - mu2).squaredNorm() > r2) continue;
                const double w = adaptive_kernel(surface_distance<2>(center, shell),
                                                 p.uncertainty(), config_.kernel, u_thr);
                if (w > 0.0) bev.cell(key).accumulate(w, p.prob(), p.uncertainty());
            }
    }
    return bev;
}

namespace {

[[noreturn]] void io_fail(const std::string& path, const std::string& msg) {
    throw std::runtime_error(path + ": " + msg);
}

std::vector<std::string> fields_of(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string f;
    while (ss >> f) fields.push_back(f);
    return fields;
}

double field_double(const std::string& path, const std::string& s) {
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        io_fail(path, "expected a number, got '" + s + "'");
    }
}

std::string expect_line(const std::string& path, std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) io_fail(path, "unexpected end of file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

} // namespace

void SemanticMap::export_map(const std::string& base_path) const {
    save_config(base_path + ".config", config_);

    {
        const std::string path = base_path + ".prims";
        std::ofstream out(path);
        if (!out) io_fail(path, "cannot write file");
        out << "E2BKI-PRIMS v1\n";
        out << "classes " << config_.bki_num_classes << "\n";
        out << "count " << primitives_.size() << "\n";
        for (const GaussianPrimitive& p : primitives_) {
            out << p.stamp() << " " << format_double(p.eta());
            for (int i = 0; i < 3; ++i) out << " " << format_double(p.first_moment()[i]);
            const Eigen::Matrix3d& m2 = p.second_moment();
            out << " " << format_double(m2(0, 0)) << " " << format_double(m2(0, 1)) << " "
                << format_double(m2(0, 2)) << " " << format_double(m2(1, 1)) << " "
                << format_double(m2(1, 2)) << " " << format_double(m2(2, 2));
            for (int c = 0; c < config_.bki_num_classes; ++c)
                out << " " << format_double(p.semantics().beliefs()[c]);
            out << " " << format_double(p.semantics().uncertainty());
            out << " " << format_double(p.sensor_dist());
            out << " " << format_double(p.cov_floor());
            out << "\n";
        }
    }

    const std::vector<Key3> keys = grid_.sorted_keys();
    {
        const std::string path = base_path + ".cells";
        std::ofstream out(path);
        if (!out) io_fail(path, "cannot write file");
        out << "E2BKI-CELLS v1\n";
        out << "classes " << config_.bki_num_classes << "\n";
        out << "alpha0 " << format_double(config_.bki_alpha0) << "\n";
        out << "resolution " << format_double(config_.voxel_resolution) << "\n";
        out << "frames " << frame_seq_ << "\n";
        out << "count " << keys.size() << "\n";
        for (const Key3& k : keys) {
            const DirichletCell* cell = grid_.find(k);
            out << k.x << " " << k.y << " " << k.z;
            for (int c = 0; c < config_.bki_num_classes; ++c)
                out << " " << format_double(cell->alpha()[c]);
            out << " " << format_double(cell->kernel_mass()) << " "
                << format_double(cell->weighted_u()) << "\n";
        }
    }

    {
        const std::string path = base_path + ".ply";
        std::ofstream out(path);
        if (!out) io_fail(path, "cannot write file");
        out << "ply\nformat ascii 1.0\n";
        out << "comment e2bki semantic voxel map\n";
        out << "element vertex " << keys.size() << "\n";
        out << "property float x\nproperty float y\nproperty float z\n";
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
        out << "property int label\nproperty float u_total\n";
        out << "end_header\n";
        for (const Key3& k : keys) {
            const QueryResult r = query_cell(grid_.find(k));
            const Eigen::Vector3d c = grid_.center_of(k);
            const auto& rgb =
                kPalette[r.label >= 0 ? static_cast<std::size_t>(r.label) % kPalette.size()
                                      : 0];
            out << format_double(c.x()) << " " << format_double(c.y()) << " "
                << format_double(c.z()) << " " << rgb[0] << " " << rgb[1] << " " << rgb[2]
                << " " << r.label << " " << format_double(r.u_total) << "\n";
        }
    }
}

SemanticMap SemanticMap::import_map(const std::string& base_path) {
    SemanticMap map(load_config(base_path + ".config"));

    {
        const std::string path = base_path + ".prims";
        std::ifstream in(path);
        if (!in) io_fail(path, "cannot open file");
        if (expect_line(path, in) != "E2BKI-PRIMS v1") io_fail(path, "bad magic");
        auto header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "classes") io_fail(path, "expected 'classes C'");
        const int classes = static_cast<int>(field_double(path, header[1]));
        if (classes != map.config_.bki_num_classes)
            io_fail(path, "class count does not match the config");
        header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "count") io_fail(path, "expected 'count J'");
        const long count = static_cast<long>(field_double(path, header[1]));

        for (long i = 0; i < count; ++i) {
            const auto f = fields_of(expect_line(path, in));
            const std::size_t expected = 2 + 3 + 6 + classes + 3;
            if (f.size() != expected)
                io_fail(path, "primitive record has " + std::to_string(f.size()) +
                                  " fields, expected " + std::to_string(expected));
            std::size_t at = 0;
            const auto stamp = static_cast<std::uint64_t>(field_double(path, f[at++]));
            const double eta = field_double(path, f[at++]);
            Eigen::Vector3d m1;
            for (int j = 0; j < 3; ++j) m1[j] = field_double(path, f[at++]);
            Eigen::Matrix3d m2;
            m2(0, 0) = field_double(path, f[at++]);
            m2(0, 1) = m2(1, 0) = field_double(path, f[at++]);
            m2(0, 2) = m2(2, 0) = field_double(path, f[at++]);
            m2(1, 1) = field_double(path, f[at++]);
            m2(1, 2) = m2(2, 1) = field_double(path, f[at++]);
            m2(2, 2) = field_double(path, f[at++]);
            Eigen::VectorXd beliefs(classes);
            for (int c = 0; c < classes; ++c) beliefs[c] = field_double(path, f[at++]);
            const double u = field_double(path, f[at++]);
            const double sensor_dist = field_double(path, f[at++]);
            const double cov_floor = field_double(path, f[at++]);
            map.primitives_.emplace_back(std::move(m1), std::move(m2), eta,
                                         BeliefMass(std::move(beliefs), u), sensor_dist,
                                         cov_floor, stamp);
        }
    }

    {
        const std::string path = base_path + ".cells";
        std::ifstream in(path);
        if (!in) io_fail(path, "cannot open file");
        if (expect_line(path, in) != "E2BKI-CELLS v1") io_fail(path, "bad magic");
        auto header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "classes") io_fail(path, "expected 'classes C'");
        const int classes = static_cast<int>(field_double(path, header[1]));
        if (classes != map.config_.bki_num_classes)
            io_fail(path, "class count does not match the config");
        header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "alpha0") io_fail(path, "expected 'alpha0 A'");
        const double alpha0 = field_double(path, header[1]);
        header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "resolution")
            io_fail(path, "expected 'resolution R'");
        header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "frames") io_fail(path, "expected 'frames N'");
        map.frame_seq_ = static_cast<std::uint64_t>(field_double(path, header[1]));
        header = fields_of(expect_line(path, in));
        if (header.size() != 2 || header[0] != "count") io_fail(path, "expected 'count M'");
        const long count = static_cast<long>(field_double(path, header[1]));

        for (long i = 0; i < count; ++i) {
            const auto f = fields_of(expect_line(path, in));
            const std::size_t expected = 3 + classes + 2;
            if (f.size() != expected)
                io_fail(path, "cell record has " + std::to_string(f.size()) +
                                  " fields, expected " + std::to_string(expected));
            std::size_t at = 0;
            Key3 key;
            key.x = static_cast<std::int32_t>(field_double(path, f[at++]));
            key.y = static_cast<std::int32_t>(field_double(path, f[at++]));
            key.z = static_cast<std::int32_t>(field_double(path, f[at++]));
            Eigen::VectorXd alpha(classes);
            for (int c = 0; c < classes; ++c) alpha[c] = field_double(path, f[at++]);
            const double kernel_mass = field_double(path, f[at++]);
            const double weighted_u = field_double(path, f[at++]);
            map.grid_.insert_restored(
                key, DirichletCell::restore(alpha0, std::move(alpha), kernel_mass,
                                            weighted_u));
        }
    }

    map.rebuild_query_context();
    return map;
}

} // namespace e2bki
