#include "cytopipe/detect.hpp"

#include <cmath>
#include <string>

#include "cytopipe/io.hpp"
#include "cytopipe/raster.hpp"
#include "point_grid.hpp"

namespace cytopipe {

std::vector<Detection> density_to_detections(const DensityMap& map, float threshold) {
    if (!(threshold > 0.0f) || !std::isfinite(threshold)) {
        throw InvalidParameter("detection threshold must be a finite value > 0");
    }
    std::vector<Detection> dets;
    for (const Component& c : connected_components(threshold_mask(map, threshold))) {
        Detection d;
        d.centroid_x = c.centroid_x;
        d.centroid_y = c.centroid_y;
        d.x = static_cast<int>(std::floor(c.centroid_x + 0.5));
        d.y = static_cast<int>(std::floor(c.centroid_y + 0.5));
        d.blob_pixel_count = c.pixel_count;
        dets.push_back(d);
    }
    return dets;
}

MatchReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    MatchReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = (r.precision + r.recall) == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

MatchReport match_detections(std::span<const Detection> dets, std::span<const Point> gts,
                             int patch_size) {
    if (patch_size < 2 || patch_size % 2 != 0) {
        throw InvalidParameter("patch size must be even and >= 2");
    }
    const int reach = patch_size / 2 - 1;
    std::vector<Point> det_points;
    det_points.reserve(dets.size());
    for (const Detection& d : dets) det_points.push_back({d.x, d.y});

    const detail::PointGrid gt_grid(gts);
    const detail::PointGrid det_grid(det_points);
    std::vector<std::size_t> nearest_det(gts.size(), detail::PointGrid::npos);
    std::vector<bool> nearest_det_known(gts.size(), false);

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t d = 0; d < det_points.size(); ++d) {
        const std::size_t g = gt_grid.nearest(det_points[d]);
        if (g == detail::PointGrid::npos) continue;
        const int dx = gts[g].x - det_points[d].x;
        const int dy = gts[g].y - det_points[d].y;
        if (std::abs(dx) > reach || std::abs(dy) > reach) continue;
        if (!nearest_det_known[g]) {
            nearest_det[g] = det_grid.nearest(gts[g]);
            nearest_det_known[g] = true;
        }
        if (nearest_det[g] == d) pairs.emplace_back(d, g);
    }
    MatchReport r = report_from_counts(pairs.size(), dets.size() - pairs.size(),
                                       gts.size() - pairs.size());
    r.pairs = std::move(pairs);
    return r;
}

std::vector<float> default_threshold_grid() {
    std::vector<float> grid;
    for (int i = 0; i < 10; ++i) grid.push_back(static_cast<float>((51 + 2 * i) / 100.0));
    return grid;
}

std::vector<SweepRow> threshold_sweep(std::span<const MapWithTruth> maps,
                                      std::span<const float> thresholds, int patch_size) {
    if (maps.empty()) throw InvalidParameter("threshold sweep needs at least one map");
    if (thresholds.empty()) throw InvalidParameter("threshold sweep needs at least one threshold");
    std::vector<SweepRow> rows;
    for (float t : thresholds) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const MapWithTruth& m : maps) {
            const auto dets = density_to_detections(m.map, t);
            const MatchReport r = match_detections(dets, m.truth.points, patch_size);
            tp += r.tp;
            fp += r.fp;
            fn += r.fn;
        }
        const MatchReport total = report_from_counts(tp, fp, fn);
        rows.push_back({t, total.precision, total.recall, total.f1});
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
    CsvWriter out(path, {"T", "precision", "recall", "f1"});
    for (const SweepRow& r : rows) {
        out.row({format_fixed(r.threshold, 2), format_fixed(r.precision, 6),
                 format_fixed(r.recall, 6), format_fixed(r.f1, 6)});
    }
    out.close();
}

}  // namespace cytopipe
