#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cytopipe/image.hpp"

namespace cytopipe {

inline constexpr double kDefaultContrastThreshold = 8.0;
inline constexpr double kEmbmScale = 1.0 / 16.0;
inline constexpr int kEmbmMinSide = 8;

enum class ScanAxis { row, column };

/// One edge point on a scan line: a local maximum of |forward difference|
/// inside a strictly monotone run. Contrast and width come from the run ends.
struct EdgeSample {
    int x = 0;
    int y = 0;
    ScanAxis axis = ScanAxis::row;
    double contrast = 0.0;  // luminance, 0-255 scale
    int width = 1;          // pixels between the flanking extrema
};

struct BlurScore {
    double value = 0.0;  // higher = sharper; 0 when there are no salient edges
    std::size_t salient_edge_count = 0;
};

/// Every edge point along rows and columns of a single-channel luminance image.
std::vector<EdgeSample> scan_edges(const ImageF32& luminance);

/// Just-noticeable-blur width for an edge of the given contrast.
inline double jnb_width(double contrast) { return contrast <= 50.0 ? 5.0 : 3.0; }

/// Edge-model sharpness: mean over salient edges (contrast >= c_T) of
/// min(1, w_JNB / width), scaled by 1/16.
template <typename T>
BlurScore embm_score(const Image<T>& patch, double contrast_threshold = kDefaultContrastThreshold);

/// Index of the highest-scoring candidate; ties resolve to the lower index.
template <typename T>
std::size_t pick_sharpest(std::span<const Image<T>> candidates,
                          double contrast_threshold = kDefaultContrastThreshold);

}  // namespace cytopipe
