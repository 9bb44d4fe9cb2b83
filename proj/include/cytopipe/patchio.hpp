#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cytopipe/blur.hpp"
#include "cytopipe/focus.hpp"
#include "cytopipe/image.hpp"

namespace cytopipe {

inline constexpr double kDefaultQcMinScore = 0.03;

struct PatchSource {
    std::string slide_id;
    int x = 0;  // global centre
    int y = 0;
    int z_level = 0;
};

struct Patch {
    std::string cell_id;
    PatchSource source;
    ImageU8 image;
};

/// size x size crop covering [c - size/2, c + size/2 - 1] per axis; pixels
/// outside the frame replicate the nearest edge. `size` must be even.
ImageU8 crop_centered(const ImageU8& img, int center_x, int center_y, int size);

/// crop_centered wrapped as a Patch. The centre must lie inside the frame.
Patch extract_patch(const ImageU8& img, int center_x, int center_y, int size,
                    std::string cell_id = {}, PatchSource source = {});

struct AugmentDraw {
    bool flip = false;      // horizontal reflection, applied first
    int quarter_turns = 0;  // counter-clockwise 90 degree turns, 0..3
    bool operator==(const AugmentDraw&) const = default;
};

/// flip ~ Bernoulli(0.5), quarter_turns ~ Uniform{0..3} from a seeded mt19937_64.
AugmentDraw draw_augmentation(std::uint64_t seed);

ImageU8 flip_horizontal(const ImageU8& img);
/// Counter-clockwise quarter turns.
ImageU8 rotate90(const ImageU8& img, int quarter_turns);

ImageU8 apply_augmentation(const ImageU8& img, AugmentDraw draw);
ImageU8 invert_augmentation(const ImageU8& img, AugmentDraw draw);

/// Interpolation-free augmentation: a pixel permutation.
Patch augment(const Patch& patch, std::uint64_t seed);

/// Seed for one cell's augmentation under a run seed.
std::uint64_t augmentation_seed(std::uint64_t run_seed, std::string_view cell_id);

/// Level best + n clamped to [0, N-1].
std::size_t defocus_level(std::size_t best, int offset, std::size_t n_levels);
ImageU8 defocus_offset(const ZStack& stack, std::size_t best, int offset);

struct QcRejection {
    std::string cell_id;
    double score = 0.0;
};

struct QcResult {
    std::vector<Patch> kept;
    std::vector<QcRejection> rejected;
};

/// Keeps patches whose blur score is >= min_score, preserving order.
QcResult qc_filter(std::vector<Patch> patches, double min_score = kDefaultQcMinScore,
                   double contrast_threshold = kDefaultContrastThreshold);

// ---------------------------------------------------------------------------
// Patch archive: <root>/<slide_id>/<cell_id>_z<level>.png plus index.csv
// (`cell_id,slide_id,x,y,z,embm_score`) and archive.json metadata.
// ---------------------------------------------------------------------------

struct ArchiveEntry {
    std::string cell_id;
    std::string slide_id;
    int x = 0;
    int y = 0;
    int z = 0;
    double embm_score = 0.0;
};

struct ArchiveInfo {
    int z_levels = 1;
    int patch_size = 80;
    bool all_levels = false;  // every level of every cell is stored
};

std::filesystem::path archive_patch_path(const std::filesystem::path& root,
                                         std::string_view slide_id, std::string_view cell_id,
                                         int level);

std::vector<ArchiveEntry> read_archive_index(const std::filesystem::path& path);
void write_archive_index(const std::filesystem::path& path, std::span<const ArchiveEntry> rows);

ArchiveInfo read_archive_info(const std::filesystem::path& root);
void write_archive_info(const std::filesystem::path& root, const ArchiveInfo& info);

/// Loads the archived patch at each entry's z level.
std::vector<Patch> load_archive_patches(const std::filesystem::path& root,
                                        std::span<const ArchiveEntry> entries);

}  // namespace cytopipe
