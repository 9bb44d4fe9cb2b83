#include "cytopipe/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "cytopipe/adapters.hpp"
#include "cytopipe/annotate_server.hpp"
#include "cytopipe/detect.hpp"
#include "cytopipe/evaluation.hpp"
#include "cytopipe/focus.hpp"
#include "cytopipe/groundtruth.hpp"
#include "cytopipe/io.hpp"
#include "cytopipe/manifest.hpp"
#include "cytopipe/patchio.hpp"
#include "cytopipe/pipeline.hpp"
#include "cytopipe/raster.hpp"
#include "cytopipe/synthetic.hpp"

namespace cytopipe {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Config file: JSON object of defaults. Flags win over the file, the file
// wins over built-in defaults.
// ---------------------------------------------------------------------------

const std::set<std::string> kConfigKeys = {
    "seed",      "threshold",  "patch_size", "k",          "median",      "contrast_threshold",
    "qc_min",    "folds",      "parallelism", "map_width", "map_height",  "batch",
    "timeout_ms", "window",    "cell_threshold", "radius", "sigma",       "cache_tiles"};

struct Config {
    nlohmann::json values = nlohmann::json::object();
    std::string source;
};

Config load_config(const std::string& flag_path) {
    Config cfg;
    std::string path = flag_path;
    if (path.empty()) {
        if (const char* env = std::getenv("CYTOPIPE_CONFIG"); env && *env) path = env;
    }
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path);
    try {
        cfg.values = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path + ": " + e.what());
    }
    if (!cfg.values.is_object()) throw ValidationError("config " + path + " must be a JSON object");
    for (const auto& [key, value] : cfg.values.items()) {
        if (!kConfigKeys.count(key)) throw ValidationError("config " + path + ": unknown key '" + key + "'");
    }
    cfg.source = path;
    return cfg;
}

template <typename T>
T resolve(const std::optional<T>& flag, const Config& cfg, const char* key, T fallback) {
    if (flag) return *flag;
    if (cfg.values.contains(key)) {
        try {
            return cfg.values.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError("config key '" + std::string(key) + "' has the wrong type");
        }
    }
    return fallback;
}

// ---------------------------------------------------------------------------
// Run context and reporting
// ---------------------------------------------------------------------------

struct Context {
    std::ostream& out;
    std::ostream& err;
    bool json = false;
    std::string config_path;
    Config config;
    ordered_json report = ordered_json::object();
    std::vector<std::string> warnings;
    std::function<int()> action;

    Context(std::ostream& o, std::ostream& e) : out(o), err(e) {}

    void warn(const std::string& w) { warnings.push_back(w); }
    void warn_all(const std::vector<std::string>& ws) {
        for (const auto& w : ws) warn(w);
    }
};

void print_human(std::ostream& out, const ordered_json& j) {
    for (const auto& [key, value] : j.items()) {
        if (value.is_string()) {
            out << key << ": " << value.get<std::string>() << "\n";
        } else {
            out << key << ": " << value.dump() << "\n";
        }
    }
}

std::pair<int, int> parse_size(const std::string& text) {
    const std::size_t x = text.find('x');
    if (x == std::string::npos) throw InvalidParameter("size must be WxH, got '" + text + "'");
    const int w = parse_int(text.substr(0, x), "size", 0);
    const int h = parse_int(text.substr(x + 1), "size", 0);
    if (w < 1 || h < 1) throw InvalidParameter("size must be positive, got '" + text + "'");
    return {w, h};
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct SlideOptions {
    std::vector<std::string> manifests;
    std::string slides_file;

    void add(CLI::App* app) {
        app->add_option("--manifest", manifests, "Slide manifest JSON (repeatable)");
        app->add_option("--slides", slides_file, "Text file listing one manifest path per line");
    }

    std::vector<std::string> paths() const {
        std::vector<std::string> out = manifests;
        if (!slides_file.empty()) {
            std::ifstream in(slides_file);
            if (!in) throw ValidationError("cannot open " + slides_file);
            std::string line;
            while (std::getline(in, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) out.push_back(line);
            }
        }
        return out;
    }

    std::vector<SlideManifest> load(bool required = true) const {
        std::vector<SlideManifest> slides;
        std::set<std::string> ids;
        for (const std::string& p : paths()) {
            slides.push_back(load_manifest(p));
            if (!ids.insert(slides.back().slide_id).second) {
                throw ValidationError("slide '" + slides.back().slide_id + "' given twice");
            }
        }
        if (required && slides.empty()) throw ValidationError("at least one --manifest is required");
        return slides;
    }
};

const SlideManifest& slide_for(const std::vector<SlideManifest>& slides, const std::string& id) {
    for (const SlideManifest& s : slides) {
        if (s.slide_id == id) return s;
    }
    throw ValidationError("no manifest given for slide '" + id + "'");
}

std::map<std::string, Diagnosis> diagnosis_map(const std::vector<SlideManifest>& slides) {
    std::map<std::string, Diagnosis> d;
    for (const SlideManifest& s : slides) d[s.slide_id] = s.diagnosis;
    return d;
}

// ---------------------------------------------------------------------------
// synth-gt
// ---------------------------------------------------------------------------

struct SynthGtOptions {
    std::string points, out, map_size;
    int width = 0, height = 0;
    std::optional<int> radius;
    std::optional<double> sigma;
};

int run_synth_gt(const SynthGtOptions& o, Context& ctx) {
    const int radius = resolve(o.radius, ctx.config, "radius", kDefaultGtRadius);
    const double sigma = resolve(o.sigma, ctx.config, "sigma", kDefaultGtSigma);
    PointAnnotation ann{o.width, o.height, read_points_csv(o.points)};
    DensityMap map;
    if (o.map_size.empty()) {
        map = make_fuzzy_gt(ann, radius, sigma);
    } else {
        const auto [w, h] = parse_size(o.map_size);
        map = gaussian_blur(resize_area(dilated_target(ann, radius), w, h), sigma);
    }
    write_dmap(o.out, map);
    float peak = 0.0f;
    for (float v : map.data()) peak = std::max(peak, v);
    ctx.report["out"] = o.out;
    ctx.report["width"] = map.width();
    ctx.report["height"] = map.height();
    ctx.report["points"] = ann.points.size();
    ctx.report["max_value"] = peak;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectOptions {
    SlideOptions slides;
    std::string adapter, maps, cmd, out, map_size;
    std::optional<float> threshold;
    std::optional<int> timeout_ms, parallelism;
};

std::unique_ptr<DensityAdapter> make_density_adapter(const DetectOptions& o, const Context& ctx,
                                                     const std::string& manifest_path) {
    std::string mode = o.adapter;
    if (mode.empty()) mode = o.cmd.empty() ? "precomputed" : "command";
    if (mode == "precomputed") {
        fs::path dir = o.maps;
        if (dir.empty()) dir = fs::path(manifest_path).parent_path().parent_path() / "dmaps";
        return std::make_unique<PrecomputedDensityAdapter>(dir);
    }
    if (mode == "command") {
        if (o.cmd.empty()) throw ValidationError("--adapter command needs --cmd");
        const int timeout = resolve(o.timeout_ms, ctx.config, "timeout_ms", 60000);
        return std::make_unique<CommandDensityAdapter>(o.cmd, std::chrono::milliseconds(timeout));
    }
    throw ValidationError("--adapter must be precomputed or command");
}

int run_detect(const DetectOptions& o, Context& ctx) {
    DetectionParams params;
    params.threshold = resolve(o.threshold, ctx.config, "threshold", kDefaultThreshold);
    if (!(params.threshold > 0.0f) || !std::isfinite(params.threshold)) {
        throw InvalidParameter("threshold must be > 0");
    }
    params.parallelism = resolve(o.parallelism, ctx.config, "parallelism", 0);
    std::string size = o.map_size;
    if (size.empty() && ctx.config.values.contains("map_width")) {
        size = std::to_string(resolve<int>(std::nullopt, ctx.config, "map_width", 1024)) + "x" +
               std::to_string(resolve<int>(std::nullopt, ctx.config, "map_height", 512));
    }
    if (size == "tile") {
        params.map_width = params.map_height = 0;
    } else if (!size.empty()) {
        std::tie(params.map_width, params.map_height) = parse_size(size);
    }

    const std::vector<std::string> paths = o.slides.paths();
    if (paths.empty()) throw ValidationError("at least one --manifest is required");
    std::vector<GlobalDetection> all;
    ordered_json per_slide = ordered_json::array();
    std::size_t failed = 0;
    for (const std::string& path : paths) {
        const SlideManifest slide = load_manifest(path);
        auto adapter = make_density_adapter(o, ctx, path);
        DetectionRun run = run_detection(slide, *adapter, params);
        ordered_json failures = ordered_json::array();
        for (const TileFailure& f : run.failures) {
            failures.push_back({{"tile_id", f.tile_id}, {"error", f.message}});
            ctx.warn("slide " + f.slide_id + " tile " + f.tile_id + ": " + f.message);
        }
        failed += run.failures.size();
        per_slide.push_back({{"slide_id", slide.slide_id},
                             {"detections", run.detections.size()},
                             {"raw", run.raw_count},
                             {"not_owned", run.not_owned},
                             {"duplicates_removed", run.duplicates_removed},
                             {"failed_tiles", failures}});
        all.insert(all.end(), run.detections.begin(), run.detections.end());
    }
    write_detections_csv(o.out, all);
    ctx.report["out"] = o.out;
    ctx.report["threshold"] = std::stod(format_float(params.threshold));
    ctx.report["detections"] = all.size();
    ctx.report["failed_tiles"] = failed;
    ctx.report["slides"] = per_slide;
    return failed > 0 ? kExitRuntime : kExitOk;
}

// ---------------------------------------------------------------------------
// sweep / eval-detect
// ---------------------------------------------------------------------------

struct SweepOptions {
    std::vector<std::string> maps, points;
    std::vector<float> thresholds;
    std::optional<int> patch_size;
    std::string out;
};

std::vector<MapWithTruth> load_pairs(const std::vector<std::string>& maps,
                                     const std::vector<std::string>& points) {
    if (maps.empty() || maps.size() != points.size()) {
        throw ValidationError("give one --points file per --map");
    }
    std::vector<MapWithTruth> pairs;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        DensityMap m = read_dmap(maps[i]);
        PointAnnotation truth{m.width(), m.height(), read_points_csv(points[i])};
        pairs.push_back({std::move(m), std::move(truth)});
    }
    return pairs;
}

int run_sweep(const SweepOptions& o, Context& ctx) {
    const int patch = resolve(o.patch_size, ctx.config, "patch_size", kDefaultPatchSize);
    const std::vector<MapWithTruth> pairs = load_pairs(o.maps, o.points);
    const std::vector<float> grid = o.thresholds.empty() ? default_threshold_grid() : o.thresholds;
    const std::vector<SweepRow> rows = threshold_sweep(pairs, grid, patch);
    if (!o.out.empty()) write_sweep_csv(o.out, rows);
    ordered_json table = ordered_json::array();
    for (const SweepRow& r : rows) {
        table.push_back({{"T", std::stod(format_float(r.threshold))}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}});
    }
    if (!o.out.empty()) ctx.report["out"] = o.out;
    ctx.report["pairs"] = pairs.size();
    ctx.report["rows"] = table;
    return kExitOk;
}

struct EvalDetectOptions {
    std::string detections, truth, slide, map, points;
    std::optional<float> threshold;
    std::optional<int> patch_size;
};

void report_match(Context& ctx, const MatchReport& r, std::span<const Detection> dets,
                  std::span<const Point> gts) {
    double worst = 0.0;
    for (const auto& [d, g] : r.pairs) {
        worst = std::max(worst, std::hypot(dets[d].x - gts[g].x, dets[d].y - gts[g].y));
    }
    ctx.report["tp"] = r.tp;
    ctx.report["fp"] = r.fp;
    ctx.report["fn"] = r.fn;
    ctx.report["precision"] = r.precision;
    ctx.report["recall"] = r.recall;
    ctx.report["f1"] = r.f1;
    ctx.report["max_tp_distance"] = worst;
}

int run_eval_detect(const EvalDetectOptions& o, Context& ctx) {
    const int patch = resolve(o.patch_size, ctx.config, "patch_size", kDefaultPatchSize);
    std::vector<Detection> dets;
    std::vector<Point> gts;
    if (!o.map.empty()) {
        if (o.points.empty()) throw ValidationError("--map needs --points");
        const float t = resolve(o.threshold, ctx.config, "threshold", kDefaultThreshold);
        dets = density_to_detections(read_dmap(o.map), t);
        gts = read_points_csv(o.points);
    } else {
        if (o.detections.empty() || o.truth.empty()) {
            throw ValidationError("give --detections and --truth, or --map and --points");
        }
        for (const GlobalDetection& g : read_detections_csv(o.detections)) {
            if (!o.slide.empty() && g.slide_id != o.slide) continue;
            dets.push_back({g.x, g.y, static_cast<double>(g.x), static_cast<double>(g.y), 0});
        }
        gts = read_points_csv(o.truth);
    }
    report_match(ctx, match_detections(dets, gts, patch), dets, gts);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// focus / extract
// ---------------------------------------------------------------------------

struct FocusOptions {
    SlideOptions slides;
    std::string detections, out;
    std::optional<int> k, median, patch_size, parallelism, cache_tiles;
    std::optional<double> contrast;
};

std::map<std::string, std::vector<Cell>> cells_by_slide(const std::vector<Cell>& cells) {
    std::map<std::string, std::vector<Cell>> by;
    for (const Cell& c : cells) by[c.slide_id].push_back(c);
    return by;
}

int run_focus_cmd(const FocusOptions& o, Context& ctx) {
    FocusParams params;
    params.neighborhood = resolve(o.k, ctx.config, "k", 0);
    params.median_window = resolve(o.median, ctx.config, "median", 3);
    params.contrast_threshold = resolve(o.contrast, ctx.config, "contrast_threshold", kDefaultContrastThreshold);
    if (params.neighborhood < 0) throw InvalidParameter("k must be >= 0");
    const int patch = resolve(o.patch_size, ctx.config, "patch_size", kDefaultPatchSize);
    const int workers = resolve(o.parallelism, ctx.config, "parallelism", 0);
    const int cache = resolve(o.cache_tiles, ctx.config, "cache_tiles", 0);

    const std::vector<SlideManifest> slides = o.slides.load();
    const std::vector<Cell> cells = cells_from_detections(read_detections_csv(o.detections));
    std::map<std::string, int> level_of;
    std::map<std::string, double> score_of;
    for (auto& [slide_id, group] : cells_by_slide(cells)) {
        const SlideManifest& slide = slide_for(slides, slide_id);
        SlideReader reader(slide, static_cast<std::size_t>(cache));
        const FocusRun run = run_focus(reader, group, params, patch, workers);
        ctx.warn_all(run.warnings);
        for (const FocusOutcome& f : run.cells) {
            level_of[f.cell.cell_id] = f.level;
            score_of[f.cell.cell_id] = f.embm_score;
        }
    }
    std::vector<FocusPrediction> preds;
    std::vector<int> histogram;
    for (const Cell& c : cells) {
        const int level = level_of.at(c.cell_id);
        preds.push_back({c.cell_id, level});
        if (static_cast<int>(histogram.size()) <= level) histogram.resize(static_cast<std::size_t>(level) + 1, 0);
        ++histogram[static_cast<std::size_t>(level)];
    }
    write_focus_csv(o.out, preds);
    ctx.report["out"] = o.out;
    ctx.report["cells"] = preds.size();
    ctx.report["level_histogram"] = histogram;
    return kExitOk;
}

struct ExtractOptions {
    SlideOptions slides;
    std::string detections, focus, out;
    int offset = 0;
    bool all_levels = false;
    std::optional<int> patch_size, parallelism, cache_tiles;
    std::optional<double> contrast;
};

int run_extract_cmd(const ExtractOptions& o, Context& ctx) {
    ExtractParams params;
    params.patch_size = resolve(o.patch_size, ctx.config, "patch_size", kDefaultPatchSize);
    params.offset = o.offset;
    params.all_levels = o.all_levels;
    params.contrast_threshold = resolve(o.contrast, ctx.config, "contrast_threshold", kDefaultContrastThreshold);
    params.parallelism = resolve(o.parallelism, ctx.config, "parallelism", 0);
    const int cache = resolve(o.cache_tiles, ctx.config, "cache_tiles", 0);

    const std::vector<SlideManifest> slides = o.slides.load();
    const std::vector<Cell> cells = cells_from_detections(read_detections_csv(o.detections));
    const std::vector<FocusPrediction> focus = read_focus_csv(o.focus);
    std::map<std::string, ArchiveEntry> entry_of;
    int z_levels = 0;
    for (auto& [slide_id, group] : cells_by_slide(cells)) {
        const SlideManifest& slide = slide_for(slides, slide_id);
        if (z_levels != 0 && o.all_levels && slide.z_levels != z_levels) {
            throw ValidationError("--all-levels archives need the same z-level count on every slide");
        }
        z_levels = std::max(z_levels, slide.z_levels);
        SlideReader reader(slide, static_cast<std::size_t>(cache));
        const ExtractRun run = run_extract(reader, group, focus, o.out, params);
        ctx.warn_all(run.warnings);
        for (const ArchiveEntry& e : run.entries) entry_of[e.cell_id] = e;
    }
    std::vector<ArchiveEntry> entries;
    for (const Cell& c : cells) entries.push_back(entry_of.at(c.cell_id));
    fs::create_directories(o.out);
    write_archive_index(fs::path(o.out) / "index.csv", entries);
    write_archive_info(o.out, {std::max(z_levels, 1), params.patch_size, params.all_levels});
    ctx.report["out"] = o.out;
    ctx.report["patches"] = entries.size();
    ctx.report["offset"] = params.offset;
    ctx.report["all_levels"] = params.all_levels;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// qc / classify / aggregate
// ---------------------------------------------------------------------------

struct QcOptions {
    std::string archive, index, out, rejected;
    std::optional<double> min_score, contrast;
};

int run_qc(const QcOptions& o, Context& ctx) {
    const double min_score = resolve(o.min_score, ctx.config, "qc_min", kDefaultQcMinScore);
    const double contrast = resolve(o.contrast, ctx.config, "contrast_threshold", kDefaultContrastThreshold);
    const fs::path root = o.archive;
    const fs::path index = o.index.empty() ? root / "index.csv" : fs::path(o.index);
    const fs::path out = o.out.empty() ? root / "qc_index.csv" : fs::path(o.out);
    const fs::path rejected = o.rejected.empty() ? root / "qc_rejected.csv" : fs::path(o.rejected);

    const std::vector<ArchiveEntry> entries = read_archive_index(index);
    std::map<std::string, ArchiveEntry> by_id;
    for (const ArchiveEntry& e : entries) by_id[e.cell_id] = e;
    QcResult result = qc_filter(load_archive_patches(root, entries), min_score, contrast);

    std::vector<ArchiveEntry> kept;
    for (const Patch& p : result.kept) {
        ArchiveEntry e = by_id.at(p.cell_id);
        e.embm_score = embm_score(p.image, contrast).value;
        kept.push_back(e);
    }
    write_archive_index(out, kept);
    CsvWriter rej(rejected, {"cell_id", "embm_score"});
    for (const QcRejection& r : result.rejected) rej.row({r.cell_id, format_fixed(r.score, 6)});
    rej.close();
    ctx.report["out"] = out.string();
    ctx.report["rejected_out"] = rejected.string();
    ctx.report["min_score"] = min_score;
    ctx.report["kept"] = kept.size();
    ctx.report["rejected"] = result.rejected.size();
    return kExitOk;
}

struct ClassifyOptions {
    SlideOptions slides;
    std::string archive, index, adapter, scores, cmd, out;
    std::optional<int> timeout_ms, parallelism, folds;
    std::optional<std::size_t> batch;
    std::optional<std::uint64_t> seed;
};

int run_classify(const ClassifyOptions& o, Context& ctx) {
    const fs::path root = o.archive;
    fs::path index = o.index;
    if (index.empty()) index = fs::exists(root / "qc_index.csv") ? root / "qc_index.csv" : root / "index.csv";
    const std::vector<ArchiveEntry> entries = read_archive_index(index);

    std::unique_ptr<ClassifierAdapter> adapter;
    const std::string mode = o.adapter.empty() ? (o.cmd.empty() ? (o.scores.empty() ? "stub" : "precomputed") : "command")
                                               : o.adapter;
    if (mode == "stub") {
        adapter = std::make_unique<MeanIntensityClassifier>();
    } else if (mode == "precomputed") {
        if (o.scores.empty()) throw ValidationError("--adapter precomputed needs --scores");
        adapter = std::make_unique<PrecomputedClassifierAdapter>(o.scores);
    } else if (mode == "command") {
        if (o.cmd.empty()) throw ValidationError("--adapter command needs --cmd");
        const int timeout = resolve(o.timeout_ms, ctx.config, "timeout_ms", 60000);
        adapter = std::make_unique<CommandClassifierAdapter>(o.cmd, std::chrono::milliseconds(timeout));
    } else {
        throw ValidationError("--adapter must be stub, precomputed or command");
    }

    ClassifyParams params;
    params.batch_size = resolve(o.batch, ctx.config, "batch", std::size_t{256});
    params.parallelism = resolve(o.parallelism, ctx.config, "parallelism", 1);
    const int n_folds = resolve(o.folds, ctx.config, "folds", 0);
    const std::uint64_t seed = resolve(o.seed, ctx.config, "seed", std::uint64_t{0});

    std::optional<FoldAssignment> folds;
    if (n_folds != 0) {
        const std::vector<SlideManifest> slides = o.slides.load();
        folds = split_folds(slides, n_folds, seed);
    }

    std::vector<PatchRef> refs;
    for (const ArchiveEntry& e : entries) {
        refs.push_back({e.cell_id, archive_patch_path(root, e.slide_id, e.cell_id, e.z)});
    }
    const ClassifyRun run = classify_cells(refs, *adapter, params);
    ctx.warn_all(run.warnings);

    std::vector<CellRecord> records;
    std::size_t missing = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ArchiveEntry& e = entries[i];
        CellRecord r{e.cell_id, e.slide_id, e.x, e.y, e.z, e.embm_score, run.scores[i], std::nullopt};
        if (folds) r.fold_id = folds->fold_of_slide(e.slide_id);
        if (!r.class_score) ++missing;
        records.push_back(std::move(r));
    }
    write_records_csv(o.out, records);
    ctx.report["out"] = o.out;
    ctx.report["adapter"] = mode;
    ctx.report["cells"] = records.size();
    ctx.report["scored"] = records.size() - missing;
    ctx.report["missing"] = missing;
    ctx.report["invocations"] = run.invocations;
    ctx.report["failed_batches"] = run.failed_batches;
    if (folds) ctx.report["folds"] = folds->n_folds;
    return kExitOk;
}

struct AggregateOptions {
    SlideOptions slides;
    std::string records, out;
    std::optional<double> cell_threshold;
};

ordered_json fold_json(const FoldReport& f) {
    ordered_json folds = ordered_json::array();
    for (const FoldResult& r : f.folds) {
        folds.push_back({{"fold", r.fold},
                         {"tp", r.confusion.tp},
                         {"fp", r.confusion.fp},
                         {"fn", r.confusion.fn},
                         {"tn", r.confusion.tn},
                         {"accuracy", format_percent(r.metrics.accuracy)},
                         {"precision", format_percent(r.metrics.precision)},
                         {"recall", format_percent(r.metrics.recall)},
                         {"f1", format_percent(r.metrics.f1)}});
    }
    return {{"per_fold", folds},
            {"accuracy", format_mean_std(f.accuracy)},
            {"precision", format_mean_std(f.precision)},
            {"recall", format_mean_std(f.recall)},
            {"f1", format_mean_std(f.f1)}};
}

int run_aggregate(const AggregateOptions& o, Context& ctx) {
    const double cell_t = resolve(o.cell_threshold, ctx.config, "cell_threshold", 0.5);
    const std::vector<SlideManifest> slides = o.slides.load();
    const auto diag = diagnosis_map(slides);
    const std::vector<CellRecord> records = read_records_csv(o.records);
    const AggregateResult agg = aggregate_slides(records, diag, cell_t);
    ctx.warn_all(agg.warnings);

    ordered_json per = ordered_json::array();
    if (!o.out.empty()) {
        CsvWriter w(o.out, {"slide_id", "diagnosis", "n_cells", "n_malignant", "fraction", "predicted"});
        for (const SlideFraction& s : agg.slides) {
            w.row({s.slide_id, std::string(to_string(s.diagnosis)), std::to_string(s.n_cells),
                   std::to_string(s.n_malignant), format_fixed(s.fraction, 6),
                   s.predicted_cancer ? "cancer" : "healthy"});
        }
        w.close();
        ctx.report["out"] = o.out;
    }
    for (const SlideFraction& s : agg.slides) {
        per.push_back({{"slide_id", s.slide_id},
                       {"diagnosis", std::string(to_string(s.diagnosis))},
                       {"n_cells", s.n_cells},
                       {"fraction", s.fraction},
                       {"predicted", s.predicted_cancer ? "cancer" : "healthy"}});
    }
    ctx.report["threshold"] = agg.threshold;
    ctx.report["slide_accuracy"] = agg.accuracy;
    ctx.report["slide_errors"] = agg.errors;
    ctx.report["slides"] = per;
    const FoldReport folds = fold_metrics(records, diag, cell_t);
    if (!folds.folds.empty()) ctx.report["cell_metrics"] = fold_json(folds);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-focus
// ---------------------------------------------------------------------------

struct EvalFocusOptions {
    std::string pred, labels;
    std::optional<double> window;
};

int run_eval_focus(const EvalFocusOptions& o, Context& ctx) {
    const double window = resolve(o.window, ctx.config, "window", 2.0);
    const std::vector<ExpertLabelSet> truth = read_expert_labels_csv(o.labels);
    const std::vector<FocusPrediction> preds = read_focus_csv(o.pred);
    ctx.report["cells"] = preds.size();
    ctx.report["window"] = window;
    ctx.report["accuracy"] = focus_accuracy(preds, truth, window);
    const bool multi = !truth.empty() && std::all_of(truth.begin(), truth.end(), [](const ExpertLabelSet& s) {
        return s.labels.size() >= 2;
    });
    if (multi) {
        ctx.report["human_accuracy"] = leave_one_out_human(truth, window);
    } else {
        ctx.report["human_accuracy"] = nullptr;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// annotate-serve / make-synthetic
// ---------------------------------------------------------------------------

struct ServeOptions {
    std::string archive, labels, static_dir, host = "127.0.0.1";
    int port = 8080;
    std::optional<std::uint64_t> seed;
};

int run_serve(const ServeOptions& o, Context& ctx) {
    AnnotateConfig cfg;
    cfg.archive = o.archive;
    cfg.labels = o.labels.empty() ? fs::path(o.archive) / "labels.csv" : fs::path(o.labels);
    cfg.static_dir = o.static_dir;
    cfg.host = o.host;
    cfg.port = o.port;
    cfg.seed = resolve(o.seed, ctx.config, "seed", std::uint64_t{0});
    AnnotationServer server(cfg);
    const int port = server.bind();
    ctx.err << "serving " << server.tasks().size() << " cells on http://" << cfg.host << ":" << port
            << "/ (labels: " << cfg.labels.string() << ")" << std::endl;
    server.serve();
    ctx.report["labels"] = cfg.labels.string();
    return kExitOk;
}

struct SynthOptions {
    std::string out, tile_size, map_size;
    std::optional<std::size_t> cells;
    std::optional<int> tiles, slides, z_levels, overlap;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
};

int run_make_synthetic(const SynthOptions& o, Context& ctx) {
    SyntheticParams p;
    p.seed = resolve(o.seed, ctx.config, "seed", p.seed);
    if (o.cells) p.cells = *o.cells;
    if (o.tiles) p.tiles = *o.tiles;
    if (o.slides) p.slides = *o.slides;
    if (o.z_levels) p.z_levels = *o.z_levels;
    if (o.overlap) p.overlap = *o.overlap;
    if (o.noise) p.noise_sigma = *o.noise;
    if (!o.tile_size.empty()) std::tie(p.tile_width, p.tile_height) = parse_size(o.tile_size);
    if (!o.map_size.empty()) std::tie(p.map_width, p.map_height) = parse_size(o.map_size);
    const SyntheticDataset ds = make_synthetic(o.out, p);
    ordered_json slides = ordered_json::array();
    for (const SyntheticSlide& s : ds.slides) {
        slides.push_back({{"slide_id", s.manifest.slide_id},
                          {"diagnosis", std::string(to_string(s.manifest.diagnosis))},
                          {"manifest", s.manifest_path.string()},
                          {"nuclei", s.nuclei.size()}});
    }
    ctx.report["out"] = o.out;
    ctx.report["seed"] = p.seed;
    ctx.report["slides_file"] = (fs::path(o.out) / "slides.txt").string();
    ctx.report["dmaps"] = ds.dmap_dir.string();
    ctx.report["slides"] = slides;
    return kExitOk;
}

// ---------------------------------------------------------------------------

template <typename Opts, typename Fn>
std::shared_ptr<Opts> bind_action(CLI::App* sub, Context& ctx, Fn fn) {
    auto opts = std::make_shared<Opts>();
    sub->callback([&ctx, opts, fn] { ctx.action = [&ctx, opts, fn] { return fn(*opts, ctx); }; });
    return opts;
}

void build_app(CLI::App& app, Context& ctx) {
    app.require_subcommand(1);
    app.fallthrough();
    app.add_flag("--json", ctx.json, "Machine-readable JSON summary on stdout");
    app.add_option("--config", ctx.config_path, "JSON config file (default: $CYTOPIPE_CONFIG)");

    {
        auto* s = app.add_subcommand("synth-gt", "Fuzzy density target from point annotations");
        auto o = bind_action<SynthGtOptions>(s, ctx, run_synth_gt);
        s->add_option("--points", o->points, "Points CSV (x,y)")->required();
        s->add_option("--width", o->width, "Frame width")->required();
        s->add_option("--height", o->height, "Frame height")->required();
        s->add_option("--radius", o->radius, "Disk radius (15)");
        s->add_option("--sigma", o->sigma, "Gaussian sigma (1)");
        s->add_option("--map-size", o->map_size, "Resize to WxH between dilation and blur");
        s->add_option("--out", o->out, "Output DMAP")->required();
    }
    {
        auto* s = app.add_subcommand("detect", "Density maps to global nucleus detections");
        auto o = bind_action<DetectOptions>(s, ctx, run_detect);
        o->slides.add(s);
        s->add_option("--adapter", o->adapter, "precomputed | command");
        s->add_option("--maps", o->maps, "Precomputed maps dir (<dir>/<slide>/<tile>.dmap)");
        s->add_option("--cmd", o->cmd, "External command: <cmd> <tile image> <out.dmap>");
        s->add_option("--timeout-ms", o->timeout_ms, "Adapter timeout");
        s->add_option("-T,--threshold", o->threshold, "Detection threshold (0.59)");
        s->add_option("--map-size", o->map_size, "Declared map size WxH, or 'tile' (1024x512)");
        s->add_option("--parallelism", o->parallelism, "Worker count (0 = all cores)");
        s->add_option("--out", o->out, "Detections CSV")->required();
    }
    {
        auto* s = app.add_subcommand("sweep", "Precision/recall/F1 over detection thresholds");
        auto o = bind_action<SweepOptions>(s, ctx, run_sweep);
        s->add_option("--map", o->maps, "Density map (repeatable)")->required();
        s->add_option("--points", o->points, "Map-space truth points, one per --map")->required();
        s->add_option("--thresholds", o->thresholds, "Threshold list (0.51..0.69 step 0.02)");
        s->add_option("--patch-size", o->patch_size, "Matching window (80)");
        s->add_option("--out", o->out, "Sweep CSV");
    }
    {
        auto* s = app.add_subcommand("eval-detect", "Match detections against truth points");
        auto o = bind_action<EvalDetectOptions>(s, ctx, run_eval_detect);
        s->add_option("--detections", o->detections, "Detections CSV");
        s->add_option("--truth", o->truth, "Global truth points CSV");
        s->add_option("--slide", o->slide, "Only detections of this slide");
        s->add_option("--map", o->map, "Evaluate one density map instead");
        s->add_option("--points", o->points, "Truth points for --map");
        s->add_option("-T,--threshold", o->threshold, "Threshold for --map (0.59)");
        s->add_option("--patch-size", o->patch_size, "Matching window (80)");
    }
    {
        auto* s = app.add_subcommand("focus", "Best focus level per detected cell");
        auto o = bind_action<FocusOptions>(s, ctx, run_focus_cmd);
        o->slides.add(s);
        s->add_option("--detections", o->detections, "Detections CSV")->required();
        s->add_option("-k,--neighborhood", o->k, "Blur metric picks among 2(k+1) levels (0)");
        s->add_option("--median", o->median, "Median window (3)");
        s->add_option("--contrast-threshold", o->contrast, "Salient edge contrast (8)");
        s->add_option("--patch-size", o->patch_size, "Patch side (80)");
        s->add_option("--parallelism", o->parallelism, "Worker count (0 = all cores)");
        s->add_option("--cache-tiles", o->cache_tiles, "Decoded tile cache size");
        s->add_option("--out", o->out, "Focus CSV (cell_id,level)")->required();
    }
    {
        auto* s = app.add_subcommand("extract", "Write the patch archive");
        auto o = bind_action<ExtractOptions>(s, ctx, run_extract_cmd);
        o->slides.add(s);
        s->add_option("--detections", o->detections, "Detections CSV")->required();
        s->add_option("--focus", o->focus, "Focus CSV")->required();
        s->add_option("--offset", o->offset, "Defocus offset n from the selected level (0)");
        s->add_flag("--all-levels", o->all_levels, "Also store every z-level (annotation)");
        s->add_option("--patch-size", o->patch_size, "Patch side (80)");
        s->add_option("--contrast-threshold", o->contrast, "Salient edge contrast (8)");
        s->add_option("--parallelism", o->parallelism, "Worker count (0 = all cores)");
        s->add_option("--cache-tiles", o->cache_tiles, "Decoded tile cache size");
        s->add_option("--out", o->out, "Archive directory")->required();
    }
    {
        auto* s = app.add_subcommand("qc", "Drop blurred patches");
        auto o = bind_action<QcOptions>(s, ctx, run_qc);
        s->add_option("--archive", o->archive, "Archive directory")->required();
        s->add_option("--index", o->index, "Input index (archive/index.csv)");
        s->add_option("--min", o->min_score, "Minimum blur score (0.03)");
        s->add_option("--contrast-threshold", o->contrast, "Salient edge contrast (8)");
        s->add_option("--out", o->out, "Kept index (archive/qc_index.csv)");
        s->add_option("--rejected", o->rejected, "Rejected list (archive/qc_rejected.csv)");
    }
    {
        auto* s = app.add_subcommand("classify", "Score archived patches");
        auto o = bind_action<ClassifyOptions>(s, ctx, run_classify);
        o->slides.add(s);
        s->add_option("--archive", o->archive, "Archive directory")->required();
        s->add_option("--index", o->index, "Index to score (qc_index.csv, else index.csv)");
        s->add_option("--adapter", o->adapter, "stub | precomputed | command");
        s->add_option("--scores", o->scores, "Precomputed cell_id,score CSV");
        s->add_option("--cmd", o->cmd, "External command: <cmd> <batch.csv> <scores.csv>");
        s->add_option("--timeout-ms", o->timeout_ms, "Adapter timeout");
        s->add_option("--batch", o->batch, "Patches per adapter call (256)");
        s->add_option("--parallelism", o->parallelism, "Concurrent adapter calls (1)");
        s->add_option("--folds", o->folds, "Assign patient-level folds (needs manifests)");
        s->add_option("--seed", o->seed, "Fold seed");
        s->add_option("--out", o->out, "Records CSV")->required();
    }
    {
        auto* s = app.add_subcommand("aggregate", "Slide fractions, separating threshold, fold metrics");
        auto o = bind_action<AggregateOptions>(s, ctx, run_aggregate);
        o->slides.add(s);
        s->add_option("--records", o->records, "Records CSV")->required();
        s->add_option("--cell-threshold", o->cell_threshold, "Score counted as malignant (0.5)");
        s->add_option("--out", o->out, "Per-slide CSV");
    }
    {
        auto* s = app.add_subcommand("eval-focus", "Focus accuracy against expert labels");
        auto o = bind_action<EvalFocusOptions>(s, ctx, run_eval_focus);
        s->add_option("--pred", o->pred, "Focus CSV")->required();
        s->add_option("--labels", o->labels, "Expert labels CSV")->required();
        s->add_option("--window", o->window, "Accepted distance from the median label (2)");
    }
    {
        auto* s = app.add_subcommand("annotate-serve", "Serve the focus annotation API and UI");
        auto o = bind_action<ServeOptions>(s, ctx, run_serve);
        s->add_option("--archive", o->archive, "Archive written with extract --all-levels")->required();
        s->add_option("--labels", o->labels, "Labels CSV (archive/labels.csv)");
        s->add_option("--static", o->static_dir, "UI assets directory");
        s->add_option("--host", o->host, "Bind address");
        s->add_option("--port", o->port, "Port (0 = any)");
        s->add_option("--seed", o->seed, "Task order seed");
    }
    {
        auto* s = app.add_subcommand("make-synthetic", "Generate a synthetic multi-z slide set with oracles");
        auto o = bind_action<SynthOptions>(s, ctx, run_make_synthetic);
        s->add_option("--out", o->out, "Output directory")->required();
        s->add_option("--cells", o->cells, "Nuclei per slide (200)");
        s->add_option("--tiles", o->tiles, "Tiles per slide (4)");
        s->add_option("--slides", o->slides, "Slides (2)");
        s->add_option("--seed", o->seed, "Seed (7)");
        s->add_option("--z-levels", o->z_levels, "Focus levels (11)");
        s->add_option("--tile-size", o->tile_size, "Tile WxH (2048x1024)");
        s->add_option("--map-size", o->map_size, "Density map WxH (1024x512)");
        s->add_option("--overlap", o->overlap, "Tile overlap in pixels (64)");
        s->add_option("--noise", o->noise, "Density map noise sigma (0.05)");
    }
}

void emit(Context& ctx, int code, const std::string& error) {
    if (ctx.json) {
        ordered_json j = ordered_json::object();
        j["status"] = code == kExitOk ? "ok" : "error";
        j["exit_code"] = code;
        if (!error.empty()) j["error"] = error;
        for (const auto& [k, v] : ctx.report.items()) j[k] = v;
        j["warnings"] = ctx.warnings;
        ctx.out << j.dump(2) << "\n";
    } else {
        print_human(ctx.out, ctx.report);
    }
    for (const std::string& w : ctx.warnings) ctx.err << "warning: " << w << "\n";
    if (!error.empty()) ctx.err << "error: " << error << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Context ctx{out, err};
    CLI::App app{"Whole-slide cytology screening pipeline", "cytopipe"};
    build_app(app, ctx);
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }
    int code = kExitOk;
    std::string error;
    try {
        ctx.config = load_config(ctx.config_path);
        code = ctx.action();
    } catch (const ValidationError& e) {
        code = kExitValidation;
        error = e.what();
    } catch (const nlohmann::json::exception& e) {
        code = kExitValidation;
        error = e.what();
    } catch (const RuntimeFailure& e) {
        code = kExitRuntime;
        error = e.what();
    } catch (const std::exception& e) {
        code = kExitRuntime;
        error = e.what();
    }
    emit(ctx, code, error);
    return code;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace cytopipe
