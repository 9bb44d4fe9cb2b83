#pragma once

#include <cstddef>
#include <vector>

#include "cytopipe/image.hpp"

namespace cytopipe {

// All filters replicate edge pixels at the image border.

/// Per-channel m x m median. m must be odd and >= 1.
template <typename T>
Image<T> median_filter(const Image<T>& img, int m);

/// Union of disks {dx^2 + dy^2 <= r^2} centred on each set pixel, clipped to the frame.
BinaryMask dilate_disk(const BinaryMask& mask, int radius);

/// Normalised 1-D Gaussian taps, truncated at ceil(3 sigma). Length 2*ceil(3 sigma)+1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian filtering per channel.
ImageF32 gaussian_blur(const ImageF32& img, double sigma);

/// Area-weighted resampling; exact box averaging for integer scale factors.
/// u8 results are rounded half-up.
template <typename T>
Image<T> resize_area(const Image<T>& img, int out_width, int out_height);

/// (value - mean) / std for every sample.
ImageF32 normalize(const ImageF32& img, float mean, float std_dev);

struct Component {
    std::size_t pixel_count = 0;
    double centroid_x = 0.0;
    double centroid_y = 0.0;
};

/// 8-connected components, ordered by their first pixel in raster order.
std::vector<Component> connected_components(const BinaryMask& mask);

/// Pixels of channel 0 with value >= threshold.
BinaryMask threshold_mask(const ImageF32& img, float threshold);

ImageF32 to_f32(const ImageU8& img);
/// Round half-up and clamp to [0, 255].
ImageU8 to_u8(const ImageF32& img);

/// ITU-601 luma (0.299 R + 0.587 G + 0.114 B); single-channel input is copied.
template <typename T>
ImageF32 to_luminance(const Image<T>& img);

}  // namespace cytopipe
