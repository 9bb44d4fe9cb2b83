#include "cytopipe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cytopipe/io.hpp"
#include "cytopipe/raster.hpp"

namespace cytopipe {

namespace fs = std::filesystem;

std::vector<Point> plant_points(Rng& rng, int width, int height, std::size_t n,
                                double min_separation, int margin,
                                const std::function<bool(Point)>& accept) {
    if (width - 2 * margin < 1 || height - 2 * margin < 1) {
        throw InvalidParameter("frame too small for the requested margin");
    }
    std::vector<Point> points;
    points.reserve(n);
    const double d2 = min_separation * min_separation;
    const std::size_t max_attempts = 2000 * std::max<std::size_t>(n, 1);
    for (std::size_t attempt = 0; points.size() < n; ++attempt) {
        if (attempt >= max_attempts) {
            throw InvalidParameter("cannot place " + std::to_string(n) + " points " +
                                   std::to_string(min_separation) + " px apart in " +
                                   std::to_string(width) + "x" + std::to_string(height));
        }
        const Point p{margin + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(width - 2 * margin))),
                      margin + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(height - 2 * margin)))};
        if (accept && !accept(p)) continue;
        const bool clear = std::none_of(points.begin(), points.end(), [&](const Point& q) {
            const double dx = p.x - q.x, dy = p.y - q.y;
            return dx * dx + dy * dy < d2;
        });
        if (clear) points.push_back(p);
    }
    return points;
}

ImageF32 block_texture(Rng& rng, int width, int height, int channels, int min_block,
                       int max_block, double lo, double hi) {
    if (min_block < 1 || max_block < min_block) throw InvalidParameter("bad block size range");
    ImageF32 tex(width, height, channels);
    const auto span = static_cast<std::uint64_t>(max_block - min_block + 1);
    for (int y0 = 0; y0 < height;) {
        const int bh = min_block + static_cast<int>(uniform_below(rng, span));
        for (int x0 = 0; x0 < width;) {
            const int bw = min_block + static_cast<int>(uniform_below(rng, span));
            for (int c = 0; c < channels; ++c) {
                const auto v = static_cast<float>(uniform(rng, lo, hi));
                for (int y = y0; y < std::min(height, y0 + bh); ++y) {
                    for (int x = x0; x < std::min(width, x0 + bw); ++x) tex.at(x, y, c) = v;
                }
            }
            x0 += bw;
        }
        y0 += bh;
    }
    return tex;
}

ZStack blur_ladder_stack(const ImageF32& texture, int n_levels, int sharp_level,
                         double sigma_step) {
    if (n_levels < 1) throw InvalidParameter("need at least one level");
    ZStack stack;
    for (int i = 0; i < n_levels; ++i) {
        const double sigma = sigma_step * std::abs(i - sharp_level);
        stack.levels.push_back(to_u8(sigma > 0.0 ? gaussian_blur(texture, sigma) : texture));
    }
    return stack;
}

DensityMap synthetic_density_map(const TileSpec& tile, std::span<const Point> nuclei,
                                 int map_width, int map_height, int radius, double sigma,
                                 double noise_sigma, std::uint64_t noise_seed) {
    const int pad = radius;
    BinaryMask canvas(tile.width + 2 * pad, tile.height + 2 * pad);
    for (const Point& p : nuclei) {
        const int cx = p.x - tile.origin_x + pad;
        const int cy = p.y - tile.origin_y + pad;
        if (canvas.contains(cx, cy)) canvas.set(cx, cy);
    }
    const BinaryMask dilated = dilate_disk(canvas, radius);
    ImageF32 target(tile.width, tile.height, 1);
    for (int y = 0; y < tile.height; ++y) {
        for (int x = 0; x < tile.width; ++x) {
            target.at(x, y) = dilated.test(x + pad, y + pad) ? 1.0f : 0.0f;
        }
    }
    DensityMap map = gaussian_blur(resize_area(target, map_width, map_height), sigma);
    if (noise_sigma > 0.0) {
        Rng rng(noise_seed);
        for (float& v : map.data()) {
            v = std::max(0.0f, v + static_cast<float>(noise_sigma * standard_normal(rng)));
        }
    }
    return map;
}

namespace {

constexpr float kBackground = 128.0f;
constexpr float kTint[3] = {0.9f, 0.8f, 1.0f};

struct Glyph {
    int radius = 0;
    ImageF32 excess;  // single channel, nucleus minus background, zero outside the disk
};

Glyph make_glyph(Rng& rng, bool malignant) {
    Glyph g;
    g.radius = 16 + static_cast<int>(uniform_below(rng, 7));
    const int side = 2 * g.radius + 1;
    const double mean = malignant ? 200.0 : 60.0;
    ImageF32 tex = block_texture(rng, side, side, 1, 3, 6, mean - 45.0, mean + 45.0);
    g.excess = ImageF32(side, side, 1);
    const int r2 = g.radius * g.radius;
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            const int dx = x - g.radius, dy = y - g.radius;
            if (dx * dx + dy * dy <= r2) g.excess.at(x, y) = tex.at(x, y) - kBackground;
        }
    }
    return g;
}

/// Glyph padded by `margin` and blurred with sigma (0 = sharp).
ImageF32 defocused(const Glyph& g, double sigma, int margin) {
    const int side = g.excess.width() + 2 * margin;
    ImageF32 padded(side, side, 1);
    for (int y = 0; y < g.excess.height(); ++y) {
        for (int x = 0; x < g.excess.width(); ++x) padded.at(x + margin, y + margin) = g.excess.at(x, y);
    }
    return sigma > 0.0 ? gaussian_blur(padded, sigma) : padded;
}

std::string tile_name(int row, int col) {
    return "r" + std::to_string(row) + "c" + std::to_string(col);
}

std::string two_digit(const char* prefix, int v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02d", prefix, v);
    return buf;
}

bool covered(const SlideManifest& m, int x, int y) {
    return std::any_of(m.tiles.begin(), m.tiles.end(),
                       [&](const TileSpec& t) { return t.contains(x, y); });
}

}  // namespace

SyntheticDataset make_synthetic(const fs::path& out_dir, const SyntheticParams& p) {
    if (p.slides < 1 || p.tiles < 1 || p.z_levels < 1) {
        throw InvalidParameter("slides, tiles and z-levels must be >= 1");
    }
    if (p.overlap < 0 || p.overlap >= std::min(p.tile_width, p.tile_height)) {
        throw InvalidParameter("overlap must be in [0, tile size)");
    }
    SyntheticDataset ds;
    ds.dmap_dir = out_dir / "dmaps";
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p.tiles))));
    const int min_key = -(p.z_levels / 2);
    std::string slide_list;

    for (int s = 0; s < p.slides; ++s) {
        SyntheticSlide slide;
        SlideManifest& m = slide.manifest;
        m.slide_id = two_digit("slide", s + 1);
        m.patient_id = two_digit("P", s + 1);
        m.diagnosis = s % 2 == 0 ? Diagnosis::healthy : Diagnosis::cancer;
        m.pixel_size_um = 0.25;
        m.z_levels = p.z_levels;
        m.z_step_um = 0.4;
        m.min_z_key = min_key;
        m.overlapping_tiles = p.overlap > 0;
        const fs::path slide_dir = out_dir / m.slide_id;
        for (int t = 0; t < p.tiles; ++t) {
            TileSpec tile;
            const int row = t / cols, col = t % cols;
            tile.tile_id = tile_name(row, col);
            tile.origin_x = col * (p.tile_width - p.overlap);
            tile.origin_y = row * (p.tile_height - p.overlap);
            tile.width = p.tile_width;
            tile.height = p.tile_height;
            for (int level = 0; level < p.z_levels; ++level) {
                tile.paths.push_back(slide_dir / "tiles" /
                                     (tile.tile_id + "_" + m.z_key(level) + ".png"));
            }
            m.tiles.push_back(std::move(tile));
        }
        const int width = m.width();
        const int height = m.height();

        Rng rng(derive_seed(p.seed, m.slide_id));
        const int mg = p.margin;
        const std::vector<Point> points = plant_points(
            rng, width, height, p.cells, p.min_separation, mg, [&](Point q) {
                return covered(m, q.x - mg, q.y - mg) && covered(m, q.x + mg, q.y - mg) &&
                       covered(m, q.x - mg, q.y + mg) && covered(m, q.x + mg, q.y + mg);
            });
        const double rate = m.diagnosis == Diagnosis::cancer ? p.malignant_rate_cancer
                                                             : p.malignant_rate_healthy;
        std::vector<Glyph> glyphs;
        for (const Point& q : points) {
            SyntheticNucleus n;
            n.position = q;
            n.sharp_level = p.z_levels >= 3
                                ? 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(p.z_levels - 2)))
                                : 0;
            n.malignant = uniform01(rng) < rate;
            glyphs.push_back(make_glyph(rng, n.malignant));
            slide.nuclei.push_back(n);
        }

        // Tiles, one level at a time.
        for (int level = 0; level < p.z_levels; ++level) {
            ImageF32 canvas(width, height, 3, kBackground);
            for (std::size_t i = 0; i < points.size(); ++i) {
                const double sigma = p.sigma_step * std::abs(level - slide.nuclei[i].sharp_level);
                const int margin = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) + 1 : 0;
                const ImageF32 g = defocused(glyphs[i], sigma, margin);
                const int x0 = points[i].x - glyphs[i].radius - margin;
                const int y0 = points[i].y - glyphs[i].radius - margin;
                for (int y = 0; y < g.height(); ++y) {
                    for (int x = 0; x < g.width(); ++x) {
                        if (!canvas.contains(x0 + x, y0 + y)) continue;
                        const float e = g.at(x, y);
                        for (int c = 0; c < 3; ++c) canvas.at(x0 + x, y0 + y, c) += e * kTint[c];
                    }
                }
            }
            for (const TileSpec& tile : m.tiles) {
                ImageU8 img(tile.width, tile.height, 3);
                for (int y = 0; y < tile.height; ++y) {
                    for (int x = 0; x < tile.width; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            const float v = canvas.at(tile.origin_x + x, tile.origin_y + y, c);
                            img.at(x, y, c) = static_cast<std::uint8_t>(
                                std::clamp(std::floor(v + 0.5f), 0.0f, 255.0f));
                        }
                    }
                }
                write_png(tile.paths[static_cast<std::size_t>(level)], img);
            }
        }

        // Density maps and truth.
        const fs::path truth_dir = out_dir / "truth" / m.slide_id;
        fs::create_directories(truth_dir);
        for (const TileSpec& tile : m.tiles) {
            const std::uint64_t noise_seed = derive_seed(p.seed, m.slide_id + "/" + tile.tile_id);
            write_dmap(ds.dmap_dir / m.slide_id / (tile.tile_id + ".dmap"),
                       synthetic_density_map(tile, points, p.map_width, p.map_height,
                                             kDefaultGtRadius, kDefaultGtSigma, p.noise_sigma,
                                             noise_seed));
            const double sx = static_cast<double>(tile.width) / p.map_width;
            const double sy = static_cast<double>(tile.height) / p.map_height;
            std::vector<Point> local;
            for (const Point& q : points) {
                if (!tile.contains(q.x, q.y)) continue;
                local.push_back({std::clamp(static_cast<int>(std::floor((q.x - tile.origin_x) / sx + 0.5)), 0, p.map_width - 1),
                                 std::clamp(static_cast<int>(std::floor((q.y - tile.origin_y) / sy + 0.5)), 0, p.map_height - 1)});
            }
            write_points_csv(truth_dir / (tile.tile_id + "_points.csv"), local);
        }
        {
            CsvWriter w(truth_dir / "nuclei.csv", {"x", "y", "sharp_level", "malignant"});
            for (const SyntheticNucleus& n : slide.nuclei) {
                w.row({std::to_string(n.position.x), std::to_string(n.position.y),
                       std::to_string(n.sharp_level), n.malignant ? "1" : "0"});
            }
            w.close();
        }
        write_points_csv(truth_dir / "points.csv", points);
        slide.manifest_path = slide_dir / "manifest.json";
        save_manifest(m, slide.manifest_path);
        slide_list += slide.manifest_path.string() + "\n";
        ds.slides.push_back(std::move(slide));
    }
    write_text_atomic(out_dir / "slides.txt", slide_list);
    return ds;
}

}  // namespace cytopipe
