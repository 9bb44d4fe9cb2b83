#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "cytopipe/image.hpp"

namespace cytopipe {

struct Point {
    int x = 0;
    int y = 0;
    bool operator==(const Point&) const = default;
};

/// One centrally located pixel per nucleus, inside a width x height frame.
struct PointAnnotation {
    int width = 0;
    int height = 0;
    std::vector<Point> points;
};

/// Single-channel f32 map; blobs mark nuclei.
using DensityMap = ImageF32;

inline constexpr int kDefaultGtRadius = 15;
inline constexpr double kDefaultGtSigma = 1.0;

/// Rasterised point mask. Throws InvalidAnnotation for points outside the frame.
BinaryMask annotation_mask(const PointAnnotation& ann);

/// Disk-dilated annotation as a {0, 1} float map (the target before smoothing).
DensityMap dilated_target(const PointAnnotation& ann, int radius = kDefaultGtRadius);

/// dilate_disk(radius) -> {0,1} -> gaussian_blur(sigma), at the annotation's resolution.
DensityMap make_fuzzy_gt(const PointAnnotation& ann, int radius = kDefaultGtRadius,
                         double sigma = kDefaultGtSigma);

/// Area-resizes an image and its target together. Sizes must agree.
template <typename T>
std::pair<Image<T>, DensityMap> resize_gt_pair(const Image<T>& img, const DensityMap& gt,
                                               int out_width, int out_height);

/// Full training-target recipe: dilate at source resolution, resize both with
/// area weighting, then smooth the resized target.
template <typename T>
std::pair<Image<T>, DensityMap> prepare_training_pair(const Image<T>& img,
                                                      const PointAnnotation& ann, int radius,
                                                      double sigma, int out_width,
                                                      int out_height);

/// CSV with header `x,y`, one integer point per line.
std::vector<Point> read_points_csv(const std::filesystem::path& path);
void write_points_csv(const std::filesystem::path& path, const std::vector<Point>& points);

}  // namespace cytopipe
