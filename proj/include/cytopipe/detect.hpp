#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cytopipe/groundtruth.hpp"

namespace cytopipe {

inline constexpr float kDefaultThreshold = 0.59f;
inline constexpr int kDefaultPatchSize = 80;

struct Detection {
    int x = 0;  // rounded centroid, map space
    int y = 0;
    double centroid_x = 0.0;  // unrounded centroid
    double centroid_y = 0.0;
    std::size_t blob_pixel_count = 0;
};

struct MatchReport {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double f1 = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (detection, gt)
};

/// Binarise at value >= threshold, 8-connected blobs, centroid per blob
/// (rounded half-up).
std::vector<Detection> density_to_detections(const DensityMap& map, float threshold);

/// A detection is a true positive when its nearest ground-truth point lies
/// inside the detection's patch window (|dx|, |dy| <= patch_size/2 - 1) and no
/// other detection is strictly nearer that point (ties go to the lower
/// detection index). Nearest ground truth ties go to the lower gt index.
MatchReport match_detections(std::span<const Detection> dets, std::span<const Point> gts,
                             int patch_size = kDefaultPatchSize);

/// P/R/F1 from counts: 0/0 precision or recall is 1.0; P+R = 0 gives F1 = 0.
MatchReport report_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);

struct SweepRow {
    float threshold = 0.0f;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct MapWithTruth {
    DensityMap map;
    PointAnnotation truth;
};

/// 0.51, 0.53, ..., 0.69.
std::vector<float> default_threshold_grid();

/// Counts are pooled over all maps for each threshold.
std::vector<SweepRow> threshold_sweep(std::span<const MapWithTruth> maps,
                                      std::span<const float> thresholds,
                                      int patch_size = kDefaultPatchSize);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace cytopipe
