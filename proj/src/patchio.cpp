#include "cytopipe/patchio.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "cytopipe/io.hpp"
#include "cytopipe/rng.hpp"

namespace cytopipe {

namespace fs = std::filesystem;

ImageU8 crop_centered(const ImageU8& img, int center_x, int center_y, int size) {
    if (size < 2 || size % 2 != 0) throw InvalidParameter("patch size must be even and >= 2");
    const int x0 = center_x - size / 2;
    const int y0 = center_y - size / 2;
    const int ch = img.channels();
    ImageU8 out(size, size, ch);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < ch; ++c) out.at(x, y, c) = img.clamped(x0 + x, y0 + y, c);
        }
    }
    return out;
}

Patch extract_patch(const ImageU8& img, int center_x, int center_y, int size, std::string cell_id,
                    PatchSource source) {
    if (!img.contains(center_x, center_y)) {
        throw InvalidParameter("patch centre (" + std::to_string(center_x) + "," +
                               std::to_string(center_y) + ") outside image");
    }
    return {std::move(cell_id), std::move(source), crop_centered(img, center_x, center_y, size)};
}

AugmentDraw draw_augmentation(std::uint64_t seed) {
    Rng rng(seed);
    AugmentDraw d;
    d.flip = (rng() >> 63) != 0;
    d.quarter_turns = static_cast<int>(rng() >> 62);
    return d;
}

ImageU8 flip_horizontal(const ImageU8& img) {
    ImageU8 out(img.width(), img.height(), img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < img.channels(); ++c) {
                out.at(img.width() - 1 - x, y, c) = img.at(x, y, c);
            }
        }
    }
    return out;
}

ImageU8 rotate90(const ImageU8& img, int quarter_turns) {
    const int turns = ((quarter_turns % 4) + 4) % 4;
    if (turns == 0) return img;
    const int w = img.width();
    const int h = img.height();
    const bool swap = turns % 2 == 1;
    ImageU8 out(swap ? h : w, swap ? w : h, img.channels());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int ox = x, oy = y;
            switch (turns) {
                case 1: ox = y; oy = w - 1 - x; break;
                case 2: ox = w - 1 - x; oy = h - 1 - y; break;
                case 3: ox = h - 1 - y; oy = x; break;
            }
            for (int c = 0; c < img.channels(); ++c) out.at(ox, oy, c) = img.at(x, y, c);
        }
    }
    return out;
}

ImageU8 apply_augmentation(const ImageU8& img, AugmentDraw draw) {
    return rotate90(draw.flip ? flip_horizontal(img) : img, draw.quarter_turns);
}

ImageU8 invert_augmentation(const ImageU8& img, AugmentDraw draw) {
    ImageU8 unrotated = rotate90(img, 4 - draw.quarter_turns);
    return draw.flip ? flip_horizontal(unrotated) : unrotated;
}

Patch augment(const Patch& patch, std::uint64_t seed) {
    Patch out = patch;
    out.image = apply_augmentation(patch.image, draw_augmentation(seed));
    return out;
}

std::uint64_t augmentation_seed(std::uint64_t run_seed, std::string_view cell_id) {
    return derive_seed(run_seed, cell_id);
}

std::size_t defocus_level(std::size_t best, int offset, std::size_t n_levels) {
    if (n_levels == 0) throw InvalidParameter("empty z-stack");
    const std::ptrdiff_t level = static_cast<std::ptrdiff_t>(best) + offset;
    return static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(level, 0, static_cast<std::ptrdiff_t>(n_levels) - 1));
}

ImageU8 defocus_offset(const ZStack& stack, std::size_t best, int offset) {
    return stack.levels.at(defocus_level(best, offset, stack.levels.size()));
}

QcResult qc_filter(std::vector<Patch> patches, double min_score, double contrast_threshold) {
    QcResult result;
    for (Patch& p : patches) {
        const double score = embm_score(p.image, contrast_threshold).value;
        if (score >= min_score) {
            result.kept.push_back(std::move(p));
        } else {
            result.rejected.push_back({p.cell_id, score});
        }
    }
    return result;
}

fs::path archive_patch_path(const fs::path& root, std::string_view slide_id,
                            std::string_view cell_id, int level) {
    return root / std::string(slide_id) /
           (std::string(cell_id) + "_z" + std::to_string(level) + ".png");
}

std::vector<ArchiveEntry> read_archive_index(const fs::path& path) {
    const CsvTable t = read_csv(path, {"cell_id", "slide_id", "x", "y", "z", "embm_score"});
    std::vector<ArchiveEntry> rows;
    rows.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        rows.push_back({f[0], f[1], parse_int(f[2], path, r), parse_int(f[3], path, r),
                        parse_int(f[4], path, r), parse_double(f[5], path, r)});
    }
    return rows;
}

void write_archive_index(const fs::path& path, std::span<const ArchiveEntry> rows) {
    CsvWriter out(path, {"cell_id", "slide_id", "x", "y", "z", "embm_score"});
    for (const ArchiveEntry& e : rows) {
        out.row({e.cell_id, e.slide_id, std::to_string(e.x), std::to_string(e.y),
                 std::to_string(e.z), format_fixed(e.embm_score, 6)});
    }
    out.close();
}

ArchiveInfo read_archive_info(const fs::path& root) {
    std::ifstream in(root / "archive.json");
    if (!in) throw FormatError("missing " + (root / "archive.json").string());
    try {
        const auto j = nlohmann::json::parse(in);
        ArchiveInfo info;
        info.z_levels = j.at("z_levels").get<int>();
        info.patch_size = j.at("patch_size").get<int>();
        info.all_levels = j.value("all_levels", false);
        return info;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError((root / "archive.json").string() + ": " + e.what());
    }
}

void write_archive_info(const fs::path& root, const ArchiveInfo& info) {
    const nlohmann::ordered_json j = {
        {"z_levels", info.z_levels}, {"patch_size", info.patch_size}, {"all_levels", info.all_levels}};
    write_text_atomic(root / "archive.json", j.dump(2) + "\n");
}

std::vector<Patch> load_archive_patches(const fs::path& root,
                                        std::span<const ArchiveEntry> entries) {
    std::vector<Patch> patches;
    patches.reserve(entries.size());
    for (const ArchiveEntry& e : entries) {
        patches.push_back({e.cell_id, {e.slide_id, e.x, e.y, e.z},
                           read_png(archive_patch_path(root, e.slide_id, e.cell_id, e.z))});
    }
    return patches;
}

}  // namespace cytopipe
