#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cytopipe/focus.hpp"
#include "cytopipe/groundtruth.hpp"
#include "cytopipe/manifest.hpp"
#include "cytopipe/rng.hpp"

namespace cytopipe {

/// Rejection-sampled points at least min_separation apart and at least
/// margin from the frame edges, optionally restricted by `accept`. Throws
/// InvalidParameter when n cannot be placed.
std::vector<Point> plant_points(Rng& rng, int width, int height, std::size_t n,
                                double min_separation, int margin,
                                const std::function<bool(Point)>& accept = {});

/// Piecewise-constant texture: rectangular blocks with sides in
/// [min_block, max_block] and values uniform in [lo, hi], per channel.
ImageF32 block_texture(Rng& rng, int width, int height, int channels, int min_block,
                       int max_block, double lo, double hi);

/// Texture rendered sharp at sharp_level and blurred with
/// sigma = sigma_step * |i - sharp_level| at level i.
ZStack blur_ladder_stack(const ImageF32& texture, int n_levels, int sharp_level,
                         double sigma_step = 0.8);

/// Fuzzy target for the nuclei of one tile: disks of radius r dilated at tile
/// resolution, area-resized to the map size, blurred, plus clipped Gaussian
/// noise. Points are global; neighbours outside the tile contribute their
/// overlapping parts.
DensityMap synthetic_density_map(const TileSpec& tile, std::span<const Point> nuclei,
                                 int map_width, int map_height, int radius, double sigma,
                                 double noise_sigma, std::uint64_t noise_seed);

struct SyntheticParams {
    std::uint64_t seed = 7;
    int slides = 2;             // alternating healthy / cancer, one patient each
    std::size_t cells = 200;    // planted nuclei per slide
    int tiles = 4;              // per slide, near-square grid
    int tile_width = 2048;
    int tile_height = 1024;
    int overlap = 64;           // shared pixels between neighbouring tiles
    int z_levels = 11;
    int map_width = 1024;
    int map_height = 512;
    double noise_sigma = 0.05;
    double min_separation = 64.0;
    int margin = 48;
    double sigma_step = 0.8;    // per-level defocus blur
    double malignant_rate_cancer = 0.7;
    double malignant_rate_healthy = 0.1;
};

struct SyntheticNucleus {
    Point position;  // global
    int sharp_level = 0;
    bool malignant = false;
};

struct SyntheticSlide {
    SlideManifest manifest;
    std::filesystem::path manifest_path;
    std::vector<SyntheticNucleus> nuclei;
};

struct SyntheticDataset {
    std::vector<SyntheticSlide> slides;
    std::filesystem::path dmap_dir;  // <dmap_dir>/<slide_id>/<tile_id>.dmap
};

/// Writes under out_dir:
///   <slide_id>/manifest.json, <slide_id>/tiles/<tile_id>_z<key>.png
///   dmaps/<slide_id>/<tile_id>.dmap
///   truth/<slide_id>/nuclei.csv            (x,y,sharp_level,malignant; global)
///   truth/<slide_id>/points.csv            (x,y; global)
///   truth/<slide_id>/<tile_id>_points.csv  (x,y; map space)
///   slides.txt                             (one manifest path per line)
SyntheticDataset make_synthetic(const std::filesystem::path& out_dir, const SyntheticParams& params);

}  // namespace cytopipe
