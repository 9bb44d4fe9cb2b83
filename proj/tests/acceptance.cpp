// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <boost/math/distributions/chi_squared.hpp>

#include <array>
#include <chrono>
#include <cstring>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cytopipe/adapters.hpp"
#include "cytopipe/blur.hpp"
#include "cytopipe/cli.hpp"
#include "cytopipe/evaluation.hpp"
#include "cytopipe/io.hpp"
#include "cytopipe/manifest.hpp"
#include "cytopipe/patchio.hpp"
#include "cytopipe/pipeline.hpp"
#include "cytopipe/raster.hpp"
#include "cytopipe/synthetic.hpp"
#include "test_support.hpp"

#ifndef CYTOPIPE_GOLDEN_DIR
#error "CYTOPIPE_GOLDEN_DIR must be defined"
#endif

using namespace cytotest;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Verdict()>& check) {
    Verdict v;
    try {
        v = check();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s [%d] %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

// ---------------------------------------------------------------------------

Verdict gt_synthesis() {
    Rng rng(1001);
    int bad = 0;
    for (int set = 0; set < 100; ++set) {
        const int w = 256 + int(uniform_below(rng, 256));
        const int h = 256 + int(uniform_below(rng, 256));
        std::vector<Point> pts;
        for (std::size_t i = 0, n = 1 + uniform_below(rng, 30); i < n; ++i)
            pts.push_back({20 + int(uniform_below(rng, w - 40)), 20 + int(uniform_below(rng, h - 40))});
        const DensityMap m = make_fuzzy_gt({w, h, pts});
        std::size_t arg = 0;
        for (std::size_t i = 1; i < m.data().size(); ++i)
            if (m.data()[i] > m.data()[arg]) arg = i;
        const float peak = m.data()[arg];
        const Point at{int(arg % std::size_t(w)), int(arg / std::size_t(w))};
        bool on_point = false;
        for (const Point& p : pts) on_point = on_point || std::hypot(p.x - at.x, p.y - at.y) <= kDefaultGtRadius;
        bool points_are_peaks = true;
        for (const Point& p : pts) points_are_peaks = points_are_peaks && std::abs(m.at(p.x, p.y) - peak) <= 1e-3f;
        if (std::abs(peak - 1.0f) > 1e-3f || !on_point || !points_are_peaks) ++bad;
    }
    std::vector<Point> pts;
    for (int i = 0; i < 100; ++i) pts.push_back({20 + int(uniform_below(rng, 984)), 20 + int(uniform_below(rng, 472))});
    const auto t0 = Clock::now();
    const DensityMap big = make_fuzzy_gt({1024, 512, pts});
    const double secs = seconds_since(t0);
    (void)big;
    return {bad == 0 && secs < 1.0, fmt("%.0f/100 sets off-peak; 1024x512 with 100 points in %.3f s (< 1 s)", bad, secs)};
}

Verdict detection_recovery(const fs::path& scratch) {
    const SyntheticDataset ds = make_synthetic(scratch / "recovery", SyntheticParams{});
    PrecomputedDensityAdapter adapter(ds.dmap_dir);
    DetectionParams params;
    params.threshold = 0.59f;
    bool pass = true;
    std::string detail;
    for (const SyntheticSlide& s : ds.slides) {
        const DetectionRun run = run_detection(s.manifest, adapter, params);
        std::vector<Detection> dets;
        for (const auto& d : run.detections) dets.push_back({d.x, d.y, double(d.x), double(d.y), d.blob_pixel_count});
        std::vector<Point> truth;
        for (const auto& n : s.nuclei) truth.push_back(n.position);
        const MatchReport r = match_detections(dets, truth, kDefaultPatchSize);
        double worst = 0.0;
        for (const auto& [di, gi] : r.pairs)
            worst = std::max(worst, std::hypot(dets[di].x - truth[gi].x, dets[di].y - truth[gi].y));
        pass = pass && run.failures.empty() && r.f1 >= 0.99 && worst <= 2.0;
        detail += s.manifest.slide_id +
                  fmt(" F1=%.4f (tp %.0f fp %.0f fn %.0f)", r.f1, double(r.tp), double(r.fp), double(r.fn)) +
                  fmt(" max TP offset %.2f px; ", worst);
    }
    return {pass, detail + "need F1 >= 0.99, offset <= 2 px"};
}

Verdict matching_oracle() {
    Rng rng(1003);
    int agree = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Detection> d;
        std::vector<Point> g;
        const int span = 40 + int(uniform_below(rng, 400));
        for (std::size_t i = 0, n = uniform_below(rng, 21); i < n; ++i) {
            const int x = int(uniform_below(rng, span)), y = int(uniform_below(rng, span));
            d.push_back({x, y, double(x), double(y), 1});
        }
        for (std::size_t i = 0, n = uniform_below(rng, 21); i < n; ++i)
            g.push_back({int(uniform_below(rng, span)), int(uniform_below(rng, span))});
        const MatchReport r = match_detections(d, g, 80);
        const BruteCounts b = brute_force_match(d, g, 80);
        agree += r.tp == b.tp && r.fp == b.fp && r.fn == b.fn;
    }
    return {agree == 1000, fmt("%.0f/1000 instances identical to brute force", agree)};
}

Verdict focus_selection() {
    Rng rng(1004);
    int within = 0, exact = 0;
    double worst_ms = 0.0, total_ms = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int j = 1 + int(uniform_below(rng, 9));
        const ImageF32 tex = block_texture(rng, 80, 80, 1, 3, 12, 0, 255);
        const ZStack s = blur_ladder_stack(tex, 11, j, 0.8);
        const auto t0 = Clock::now();
        const FocusChoice c = select_focus(s, FocusParams{});
        const double ms = seconds_since(t0) * 1e3;
        worst_ms = std::max(worst_ms, ms);
        total_ms += ms;
        within += std::abs(int(c.selected_level) - j) <= 2;
        exact += int(c.selected_level) == j;
    }
    return {within >= 95 && exact >= 80 && worst_ms < 5.0,
            fmt("within +-2: %.0f%% (>= 95), exact: %.0f%% (>= 80), mean %.3f ms, max %.3f ms per stack (< 5)", within, exact,
                total_ms / 100.0, worst_ms)};
}

Verdict blur_metric() {
    Rng rng(1005);
    int decreasing = 0;
    double worst_sym = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        // Two-tone blocks no smaller than twice the largest sigma.
        ImageF32 blocks = block_texture(rng, 80, 80, 1, 16, 32, 0, 255);
        for (auto& v : blocks.buffer()) v = v < 127.5f ? 20.0f : 235.0f;
        const ImageU8 tex = to_u8(blocks);
        double prev = std::numeric_limits<double>::infinity();
        bool ok = true;
        for (double sigma : {0.0, 1.0, 2.0, 4.0, 8.0}) {
            const ImageU8 img = sigma == 0.0 ? tex : to_u8(gaussian_blur(to_f32(tex), sigma));
            const double v = embm_score(img).value;
            ok = ok && v < prev;
            prev = v;
            for (int q = 1; q < 4; ++q) worst_sym = std::max(worst_sym, std::abs(embm_score(rotate90(img, q)).value - v));
            worst_sym = std::max(worst_sym, std::abs(embm_score(flip_horizontal(img)).value - v));
            worst_sym = std::max(worst_sym, std::abs(embm_score(rotate90(flip_horizontal(img), 1)).value - v));
        }
        decreasing += ok;
    }
    return {decreasing == 20 && worst_sym <= 1e-6,
            fmt("%.0f/20 ladders strictly decreasing; max rot/flip deviation %.2e (<= 1e-6)", decreasing, worst_sym)};
}

Verdict variance_formula() {
    Rng rng(1006);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + int(uniform_below(rng, 10));
        const int w = 8 + int(uniform_below(rng, 40)), h = 8 + int(uniform_below(rng, 40));
        const int ch = trial % 2 ? 3 : 1;
        ZStack s;
        for (int i = 0; i < n; ++i) s.levels.push_back(random_u8(rng, w, h, ch));
        std::vector<ImageU8> filtered;
        for (const auto& l : s.levels) filtered.push_back(naive_median(l, 3));
        const auto got = variance_of_difference(s, 3);
        const auto want = two_pass_variance(filtered);
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1e-300, std::abs(want[i])));
    }
    bool zeros = true;
    for (int trial = 0; trial < 10; ++trial) {
        ZStack s;
        const auto v = static_cast<std::uint8_t>(uniform_below(rng, 256));
        for (int i = 0; i < 11; ++i) s.levels.push_back(ImageU8(20, 20, 3, v));
        for (double x : variance_of_difference(s, 3)) zeros = zeros && x == 0.0;
    }
    return {worst <= 1e-9 && zeros, fmt("max relative deviation %.2e (<= 1e-9); constant stacks exact zero: ", worst) +
                                        (zeros ? "yes" : "no")};
}

Verdict augmentation() {
    Rng rng(1007);
    int preserved = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const ImageU8 img = random_u8(rng, 1 + int(uniform_below(rng, 16)), 1 + int(uniform_below(rng, 16)), 3);
        const Patch out = augment(Patch{"c", {}, img}, rng());
        auto a = img.buffer(), b = out.image.buffer();
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        preserved += a == b;
    }
    std::array<double, 4> turns{};
    std::array<double, 8> cells{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const AugmentDraw d = draw_augmentation(augmentation_seed(2024, "cell_" + std::to_string(i)));
        turns[std::size_t(d.quarter_turns)] += 1;
        cells[std::size_t(d.quarter_turns + 4 * d.flip)] += 1;
    }
    auto p_value = [&](const auto& counts) {
        const double expected = double(n) / double(counts.size());
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
        return boost::math::cdf(boost::math::complement(boost::math::chi_squared(double(counts.size() - 1)), chi2));
    };
    const double p_turns = p_value(turns);
    const double p_all = p_value(cells);

    std::ifstream in(std::string(CYTOPIPE_GOLDEN_DIR) + "/augment_golden.txt");
    ImageU8 coded(5, 3, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 5; ++x)
            for (int c = 0; c < 3; ++c) coded.at(x, y, c) = static_cast<std::uint8_t>((x * 31 + y * 17 + c * 7) % 256);
    int rows = 0, matched = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::uint64_t seed;
        int flip, q, w, h;
        std::string hex;
        ss >> seed >> flip >> q >> w >> h >> hex;
        const ImageU8 out = augment(Patch{"c", {}, coded}, seed).image;
        std::string got;
        for (std::uint8_t b : out.buffer()) {
            char buf[3];
            std::snprintf(buf, sizeof(buf), "%02x", b);
            got += buf;
        }
        ++rows;
        matched += got == hex && out.width() == w && out.height() == h;
    }
    const bool pass = preserved == 10000 && p_turns > 0.01 && p_all > 0.01 && rows > 0 && matched == rows;
    return {pass, fmt("multisets %.0f/10000; chi2 p(rotations)=%.3f p(8 draws)=%.3f (> 0.01); ", preserved, p_turns, p_all) +
                      fmt("golden %.0f/%.0f byte-identical", matched, rows)};
}

nlohmann::json bad_manifest_base() {
    return {{"slide_id", "s"}, {"patient_id", "p"}, {"diagnosis", "healthy"}, {"pixel_size_um", 0.25}, {"z_levels", 1},
            {"z_step_um", 0.4},
            {"tiles", nlohmann::json::array({{{"tile_id", "t"}, {"origin", {0, 0}}, {"width", 10}, {"height", 10},
                                              {"paths", {{"z0", "t.png"}}}}})}};
}

Verdict formats(const fs::path& scratch) {
    Rng rng(1008);
    const float extremes[] = {std::numeric_limits<float>::max(), std::numeric_limits<float>::lowest(),
                              std::numeric_limits<float>::min(), -std::numeric_limits<float>::min(),
                              std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::infinity(),
                              -std::numeric_limits<float>::infinity(), 0.0f, -0.0f};
    int exact = 0;
    for (int trial = 0; trial < 100; ++trial) {
        ImageF32 m(1 + int(uniform_below(rng, 64)), 1 + int(uniform_below(rng, 64)), 1);
        for (auto& v : m.buffer()) {
            v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()));
            if (std::isnan(v) || uniform_below(rng, 8) == 0) v = extremes[uniform_below(rng, 9)];
        }
        write_dmap(scratch / "m.dmap", m);
        const ImageF32 back = read_dmap(scratch / "m.dmap");
        exact += back.width() == m.width() && back.height() == m.height() &&
                 std::memcmp(back.data().data(), m.data().data(), m.size() * sizeof(float)) == 0;
    }

    std::vector<std::optional<ManifestErrorCode>> codes;
    auto code_of = [&](const std::function<void()>& f) -> std::optional<ManifestErrorCode> {
        try {
            f();
        } catch (const ManifestError& e) {
            return e.code();
        }
        return std::nullopt;
    };
    spit(scratch / "syntax.json", "{\"slide_id\": [");
    codes.push_back(code_of([&] { load_manifest(scratch / "syntax.json"); }));
    auto j = bad_manifest_base();
    j.erase("slide_id");
    codes.push_back(code_of([&] { parse_manifest(j, scratch, false); }));
    j = bad_manifest_base();
    j["tiles"].push_back(j["tiles"][0]);
    j["tiles"][1]["origin"] = {10, 0};
    codes.push_back(code_of([&] { parse_manifest(j, scratch, false); }));
    j = bad_manifest_base();
    j["z_levels"] = 11;
    codes.push_back(code_of([&] { parse_manifest(j, scratch, false); }));
    j = bad_manifest_base();
    codes.push_back(code_of([&] { parse_manifest(j, scratch, true); }));
    std::set<ManifestErrorCode> distinct;
    bool all_rejected = true;
    std::string names;
    for (const auto& c : codes) {
        all_rejected = all_rejected && c.has_value();
        if (c) {
            distinct.insert(*c);
            names += std::string(names.empty() ? "" : ",") + std::string(to_string(*c));
        }
    }
    return {exact == 100 && all_rejected && distinct.size() == 5,
            fmt("%.0f/100 maps bit-exact; %.0f/5 malformed manifests rejected with %.0f distinct errors (", exact,
                double(std::count_if(codes.begin(), codes.end(), [](const auto& c) { return c.has_value(); })),
                double(distinct.size())) +
                names + ")"};
}

Verdict aggregation() {
    std::vector<CellRecord> rows;
    std::map<std::string, Diagnosis> diagnosis;
    for (int s = 0; s < 22; ++s) {
        const bool cancer = s % 2 == 1;
        const std::string id = "slide" + std::to_string(s);
        diagnosis[id] = cancer ? Diagnosis::cancer : Diagnosis::healthy;
        const int malignant = cancer ? 50 + 4 * (s / 2) : 3 + 2 * (s / 2);  // 50..90 vs 3..23 of 100
        for (int c = 0; c < 100; ++c)
            rows.push_back({make_cell_id(id, std::size_t(c)), id, c, 0, 5, 0.05, c < malignant ? 0.8 : 0.2, s % 2});
    }
    const AggregateResult agg = aggregate_slides(rows, diagnosis);

    const Metrics m = metrics_from_confusion({35, 20, 65, 80});
    const bool arithmetic = std::abs(*m.accuracy - 57.5) <= 0.1 && std::abs(*m.precision - 63.6) <= 0.1 &&
                            std::abs(*m.recall - 35.0) <= 0.1 && std::abs(*m.f1 - 45.2) <= 0.1 &&
                            format_percent(m.accuracy) == "57.5" && format_percent(m.precision) == "63.6" &&
                            format_percent(m.recall) == "35.0" && format_percent(m.f1) == "45.2";
    const std::vector<std::pair<int, Confusion>> folds{{0, {35, 20, 65, 80}}, {1, {45, 10, 55, 90}}};
    const FoldReport fr = fold_report_from_confusions(folds);
    // Fold 1 accuracy 67.5: mean 62.5, sample std 7.07.
    const bool mean_std_ok = format_mean_std(fr.accuracy) == "62.5±7.1";
    return {agg.errors == 0 && agg.slides.size() == 22 && arithmetic && mean_std_ok,
            fmt("22 slides, t*=%.4f, %.0f slide errors; confusion (35,20,65,80) -> %.1f/%.1f/", agg.threshold,
                double(agg.errors), *m.accuracy, *m.precision) +
                fmt("%.1f/%.1f; fold accuracy ", *m.recall, *m.f1) + format_mean_std(fr.accuracy)};
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::string text = slurp(e.path());
        for (std::size_t at; (at = text.find(root.string())) != std::string::npos;) text.replace(at, root.string().size(), "@");
        files[fs::relative(e.path(), root).string()] = std::move(text);
    }
    return files;
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) std::fprintf(stderr, "cytopipe %s failed (%d): %s\n", args[0].c_str(), code, err.str().c_str());
    return code;
}

bool full_run(const fs::path& root) {
    const std::string syn = (root / "synthetic").string();
    const std::string slides = syn + "/slides.txt";
    const std::string det = (root / "detections.csv").string();
    const std::string focus = (root / "focus.csv").string();
    const std::string arch = (root / "archive").string();
    const std::string rec = (root / "records.csv").string();
    return cli({"make-synthetic", "--out", syn, "--cells", "200", "--tiles", "4", "--seed", "7"}) == 0 &&
           cli({"detect", "--slides", slides, "--out", det}) == 0 &&
           cli({"focus", "--slides", slides, "--detections", det, "--out", focus}) == 0 &&
           cli({"extract", "--slides", slides, "--detections", det, "--focus", focus, "--out", arch}) == 0 &&
           cli({"qc", "--archive", arch}) == 0 &&
           cli({"classify", "--slides", slides, "--archive", arch, "--adapter", "stub", "--folds", "2", "--out", rec}) == 0 &&
           cli({"--json", "aggregate", "--slides", slides, "--records", rec, "--out", (root / "slides.csv").string()}) == 0;
}

Verdict end_to_end(const fs::path& scratch) {
    const auto t0 = Clock::now();
    const bool ok_a = full_run(scratch / "run_a");
    const double first = seconds_since(t0);
    const bool ok_b = full_run(scratch / "run_b");
    const double total = seconds_since(t0);
    const auto a = tree(scratch / "run_a");
    const auto b = tree(scratch / "run_b");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) {
        const auto it = b.find(name);
        differing += it == b.end() || it->second != bytes;
    }
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    return {ok_a && ok_b && differing == 0 && a.size() > 0 && total < 300.0,
            fmt("%.0f files, %.0f differ; run 1 %.1f s, both runs %.1f s (< 300 s)", double(a.size()), double(differing),
                first, total)};
}

}  // namespace

int main() {
    TempDir scratch("acceptance");
    report(1, "GT synthesis", gt_synthesis);
    report(2, "Detection recovery", [&] { return detection_recovery(scratch.path()); });
    report(3, "Matching oracle", matching_oracle);
    report(4, "Focus selection", focus_selection);
    report(5, "Blur metric", blur_metric);
    report(6, "Variance formula", variance_formula);
    report(7, "Augmentation", augmentation);
    report(8, "Formats", [&] { return formats(scratch.path()); });
    report(9, "Aggregation", aggregation);
    report(10, "End-to-end determinism", [&] { return end_to_end(scratch.path()); });
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
