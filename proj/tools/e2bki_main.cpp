// e2bki command line: build semantic maps from frame files, query and
// project them, benchmark the pipeline stages and run experiment matrices.
//
// Exit codes: 0 success, 2 frame/input file errors, 3 config errors,
// 1 anything else. Results go to stdout as TSV/CSV; diagnostics to stderr.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <e2bki/config.hpp>
#include <e2bki/eval.hpp>
#include <e2bki/frame_io.hpp>
#include <e2bki/log.hpp>
#include <e2bki/map.hpp>

namespace fs = std::filesystem;
using namespace e2bki;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitFrameError = 2;
constexpr int kExitConfigError = 3;

struct CliOptions {
    std::string config_path;
    std::string mode;
    std::string query_mode;
    std::vector<std::string> frames;
    std::string frame_list;
    std::string out;
    std::string map_base;
    std::string points_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    int repeat = 3;
    // experiment matrix
    std::vector<std::string> modes = {"scsm", "sbki", "ebs", "e2bki"};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<double> fractions = {1.0, 0.2, 0.04};
    std::vector<double> corruptions = {0.30};
    int scene_frames = 50;
    bool emit_scenes = false;
};

MapConfig resolve_config(const CliOptions& opt) {
    MapConfig cfg;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    if (!opt.mode.empty()) cfg.mode = mode_from_string(opt.mode);
    if (!opt.query_mode.empty()) cfg.query_mode = query_mode_from_string(opt.query_mode);
    if (opt.seed_set) cfg.gaussian_rng_seed = opt.seed;
    cfg.validate();
    return cfg;
}

std::vector<std::string> resolve_frame_paths(const CliOptions& opt) {
    std::vector<std::string> paths = opt.frames;
    if (!opt.frame_list.empty()) {
        std::ifstream in(opt.frame_list);
        if (!in) throw FrameParseError(opt.frame_list + ": cannot open frame list");
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty() && line[0] != '#') paths.push_back(line);
        }
    }
    if (paths.empty()) throw FrameParseError("no input frames given");
    for (const std::string& p : paths)
        if (!fs::exists(p)) throw FrameParseError(p + ": frame file does not exist");
    return paths;
}

void write_frame_reports(const std::string& path, const std::vector<FrameReport>& reports) {
    std::ofstream out(path);
    out << "frame\tpoints\tskipped\tcreated\tmerged\tpruned\tlive\tcells_touched"
        << "\tms_init\tms_refine\tms_update\n";
    char buf[64];
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const FrameReport& r = reports[i];
        out << i << "\t" << r.points << "\t" << r.skipped << "\t" << r.primitives_created
            << "\t" << r.primitives_merged << "\t" << r.primitives_pruned << "\t"
            << r.live_primitives << "\t" << r.cells_touched;
        std::snprintf(buf, sizeof(buf), "\t%.3f\t%.3f\t%.3f\n", r.ms_init, r.ms_refine,
                      r.ms_update);
        out << buf;
    }
}

int cmd_build(const CliOptions& opt) {
    const MapConfig cfg = resolve_config(opt);
    const auto paths = resolve_frame_paths(opt);
    if (opt.out.empty()) throw std::runtime_error("build: --out is required");

    SemanticMap map(cfg);
    std::vector<FrameReport> reports;
    FrameReport total;
    for (const std::string& path : paths) {
        log_info("ingesting " + path);
        const Frame frame = read_frame_file(path);
        reports.push_back(map.ingest_frame(frame));
        const FrameReport& r = reports.back();
        total.points += r.points;
        total.skipped += r.skipped;
        total.primitives_created += r.primitives_created;
        total.primitives_merged += r.primitives_merged;
        total.primitives_pruned += r.primitives_pruned;
        total.cells_touched += r.cells_touched;
    }

    if (const auto dir = fs::path(opt.out).parent_path(); !dir.empty())
        fs::create_directories(dir);
    map.export_map(opt.out);
    write_frame_reports(opt.out + ".frames.tsv", reports);

    std::cout << "mode\tframes\tpoints\tskipped\tprimitives\tmerged\tpruned\tcells\tvoxels\n";
    std::cout << to_string(cfg.mode) << "\t" << paths.size() << "\t" << total.points << "\t"
              << total.skipped << "\t" << map.primitives().size() << "\t"
              << total.primitives_merged << "\t" << total.primitives_pruned << "\t"
              << total.cells_touched << "\t" << map.grid().size() << "\n";
    return kExitOk;
}

int cmd_query(const CliOptions& opt) {
    const SemanticMap map = SemanticMap::import_map(opt.map_base);
    std::ifstream in(opt.points_path);
    if (!in) throw FrameParseError(opt.points_path + ": cannot open points file");

    std::optional<QueryMode> qm;
    if (!opt.query_mode.empty()) qm = query_mode_from_string(opt.query_mode);

    std::cout << "x\ty\tz\tlabel";
    for (int c = 0; c < map.config().bki_num_classes; ++c) std::cout << "\tp" << c;
    std::cout << "\tvariance\tu_sem\tu_spa\tu_total\n";

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double x, y, z;
        if (!(ss >> x >> y >> z))
            throw FrameParseError(opt.points_path + ":" + std::to_string(line_no) +
                                  ": expected 'x y z'");
        const Eigen::Vector3d p(x, y, z);
        const QueryResult r = qm ? map.query_point(p, *qm) : map.query_point(p);
        std::cout << format_double(x) << "\t" << format_double(y) << "\t" << format_double(z)
                  << "\t";
        if (r.known)
            std::cout << r.label;
        else
            std::cout << "unknown";
        for (int c = 0; c < map.config().bki_num_classes; ++c)
            std::cout << "\t" << format_double(r.expectation[c]);
        std::cout << "\t" << format_double(r.variance) << "\t" << format_double(r.u_sem)
                  << "\t" << format_double(r.u_spa) << "\t" << format_double(r.u_total)
                  << "\n";
    }
    return kExitOk;
}

int cmd_bev(const CliOptions& opt) {
    const SemanticMap map = SemanticMap::import_map(opt.map_base);
    const BevGrid bev = map.project_bev();

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!opt.out.empty()) {
        file.open(opt.out);
        if (!file) throw std::runtime_error(opt.out + ": cannot write file");
        out = &file;
    }
    *out << "ix\tiy\tcx\tcy\tlabel\tvariance\tu_total\n";
    for (const Key2& k : bev.sorted_keys()) {
        const DirichletCell* cell = bev.find(k);
        const PosteriorStats stats = cell->posterior_stats();
        const UncertaintyDecomposition unc = cell->decomposed_uncertainty();
        const Eigen::Vector2d c = bev.center_of(k);
        *out << k.x << "\t" << k.y << "\t" << format_double(c.x()) << "\t"
             << format_double(c.y()) << "\t" << stats.label << "\t"
             << format_double(stats.variance) << "\t" << format_double(unc.total) << "\n";
    }
    return kExitOk;
}

int cmd_bench(const CliOptions& opt) {
    const MapConfig base = resolve_config(opt);
    const auto paths = resolve_frame_paths(opt);
    std::vector<Frame> frames;
    for (const std::string& p : paths) frames.push_back(read_frame_file(p));

    struct RunTotals {
        double ms_init = 0, ms_refine = 0, ms_update = 0;
        std::vector<std::size_t> live;
        std::size_t final_primitives = 0;
        double total() const { return ms_init + ms_refine + ms_update; }
    };
    auto run_once = [&](bool merging) {
        MapConfig cfg = base;
        cfg.refine_enabled_merge = merging;
        SemanticMap map(cfg);
        RunTotals t;
        for (const Frame& f : frames) {
            const FrameReport r = map.ingest_frame(f);
            t.ms_init += r.ms_init;
            t.ms_refine += r.ms_refine;
            t.ms_update += r.ms_update;
            t.live.push_back(r.live_primitives);
        }
        t.final_primitives = map.primitives().size();
        return t;
    };

    const int repeat = std::max(1, opt.repeat);
    std::vector<RunTotals> on_runs, off_runs;
    for (int r = 0; r < repeat; ++r) {
        on_runs.push_back(run_once(true));
        off_runs.push_back(run_once(false));
    }
    auto best = [](const std::vector<RunTotals>& runs) {
        std::size_t best_i = 0;
        for (std::size_t i = 1; i < runs.size(); ++i)
            if (runs[i].total() < runs[best_i].total()) best_i = i;
        return runs[best_i];
    };
    auto spread = [](const std::vector<RunTotals>& runs) {
        double lo = 1e300, hi = 0.0;
        for (const auto& r : runs) {
            lo = std::min(lo, r.total());
            hi = std::max(hi, r.total());
        }
        return hi > 0.0 ? (hi - lo) / hi : 0.0;
    };
    const RunTotals on = best(on_runs);
    const RunTotals off = best(off_runs);

    char buf[128];
    std::cout << "stage\tmerge_on_ms\tmerge_off_ms\n";
    std::snprintf(buf, sizeof(buf), "gaussian_init\t%.3f\t%.3f\n", on.ms_init, off.ms_init);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "refine\t%.3f\t%.3f\n", on.ms_refine, off.ms_refine);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "bki_update\t%.3f\t%.3f\n", on.ms_update, off.ms_update);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "total\t%.3f\t%.3f\n", on.total(), off.total());
    std::cout << buf;
    std::cout << "final_primitives\t" << on.final_primitives << "\t" << off.final_primitives
              << "\n";
    std::snprintf(buf, sizeof(buf), "update_ratio_on_off\t%.4f\t-\n",
                  off.ms_update > 0.0 ? on.ms_update / off.ms_update : 0.0);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "repeat_spread\t%.4f\t%.4f\n", spread(on_runs),
                  spread(off_runs));
    std::cout << buf;
    std::cout << "frame\tlive_merge_on\tlive_merge_off\n";
    for (std::size_t i = 0; i < on.live.size(); ++i)
        std::cout << i << "\t" << on.live[i] << "\t" << off.live[i] << "\n";
    return kExitOk;
}

int cmd_experiment(const CliOptions& opt) {
    const MapConfig cfg = resolve_config(opt);
    if (opt.out.empty()) throw std::runtime_error("experiment: --out is required");
    fs::create_directories(opt.out);

    SceneSpec scene;
    scene.frame_count = opt.scene_frames;

    std::vector<ExperimentCell> cells;
    for (const std::string& mode : opt.modes)
        for (double corruption : opt.corruptions)
            for (double fraction : opt.fractions)
                for (std::uint64_t seed : opt.seeds)
                    cells.push_back(
                        ExperimentCell{mode_from_string(mode), seed, fraction, corruption});

    const std::string scene_dir = opt.emit_scenes ? opt.out + "/scenes" : std::string{};
    const auto rows = run_experiment(cfg, scene, cells, opt.threads, scene_dir);

    const std::string csv_path = opt.out + "/results.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error(csv_path + ": cannot write file");
    write_experiment_csv(csv, rows);
    csv.close();

    std::ifstream echo(csv_path);
    std::cout << echo.rdbuf();
    int failures = 0;
    for (const auto& row : rows)
        if (!row.ok) ++failures;
    if (failures > 0)
        log_warn(std::to_string(failures) + " experiment cells failed");
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"continuous 3D semantic mapping with evidential Gaussian primitives"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "flat key=value config file");
        cmd->add_option("--mode", opt.mode, "mapping mode: scsm|sbki|ebs|e2bki");
        cmd->add_option("--query-mode", opt.query_mode,
                        "query mode: voxel3d|bev|continuous");
        cmd->add_option("--seed", opt.seed, "clustering/scene seed")
            ->each([&](const std::string&) { opt.seed_set = true; });
        cmd->add_option("--threads", opt.threads, "worker cap for parallel sections");
    };

    CLI::App* build = app.add_subcommand("build", "ingest frames and export a map");
    add_common(build);
    build->add_option("--frames", opt.frames, "frame files in ingestion order");
    build->add_option("--frame-list", opt.frame_list, "file listing frame paths");
    build->add_option("--out", opt.out, "output base path for the map export")->required();

    CLI::App* query = app.add_subcommand("query", "query an exported map");
    add_common(query);
    query->add_option("--map", opt.map_base, "map export base path")->required();
    query->add_option("--points", opt.points_path, "text file with 'x y z' rows")
        ->required();

    CLI::App* bev = app.add_subcommand("bev", "project an exported map to a BEV grid");
    add_common(bev);
    bev->add_option("--map", opt.map_base, "map export base path")->required();
    bev->add_option("--out", opt.out, "output TSV (stdout when omitted)");

    CLI::App* bench = app.add_subcommand("bench", "per-stage timing, merging on vs off");
    add_common(bench);
    bench->add_option("--frames", opt.frames, "frame files");
    bench->add_option("--frame-list", opt.frame_list, "file listing frame paths");
    bench->add_option("--repeat", opt.repeat, "repetitions (best run is reported)");

    CLI::App* experiment =
        app.add_subcommand("experiment", "mode x sparsity x corruption matrix -> CSV");
    add_common(experiment);
    experiment->add_option("--out", opt.out, "output directory")->required();
    experiment->add_option("--modes", opt.modes, "modes to run");
    experiment->add_option("--seeds", opt.seeds, "scene seeds");
    experiment->add_option("--fractions", opt.fractions, "frame fractions");
    experiment->add_option("--corruptions", opt.corruptions, "max corruption levels");
    experiment->add_option("--scene-frames", opt.scene_frames, "frames per scene");
    experiment->add_flag("--emit-scenes", opt.emit_scenes,
                         "write generated frame/truth files under <out>/scenes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) return cmd_build(opt);
        if (query->parsed()) return cmd_query(opt);
        if (bev->parsed()) return cmd_bev(opt);
        if (bench->parsed()) return cmd_bench(opt);
        if (experiment->parsed()) return cmd_experiment(opt);
    } catch (const FrameParseError& e) {
        std::cerr << "frame error: " << e.what() << "\n";
        return kExitFrameError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
