#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cytopipe/error.hpp"

namespace cytopipe {

enum class Diagnosis { unknown, healthy, cancer };

std::string_view to_string(Diagnosis d);
Diagnosis parse_diagnosis(std::string_view text);

struct TileSpec {
    std::string tile_id;
    int origin_x = 0;
    int origin_y = 0;
    int width = 0;
    int height = 0;
    std::vector<std::filesystem::path> paths;  // by 0-based level, resolved

    bool contains(int x, int y) const {
        return x >= origin_x && y >= origin_y && x < origin_x + width && y < origin_y + height;
    }
    /// Distance from (x, y) to the nearest tile edge, for points inside.
    int depth(int x, int y) const;
};

/// A multi-z slide described as pre-registered tiles.
///
/// z keys in the JSON are signed level offsets ("z-5" ... "z5", z0 central);
/// levels are addressed internally and in every output file by the 0-based
/// index key - min_z_key.
struct SlideManifest {
    std::string slide_id;
    std::string patient_id;
    Diagnosis diagnosis = Diagnosis::unknown;
    double pixel_size_um = 0.0;
    int z_levels = 1;
    double z_step_um = 0.4;
    int min_z_key = 0;
    bool overlapping_tiles = false;
    std::vector<TileSpec> tiles;

    int central_level() const { return -min_z_key; }
    /// Bounding box of all tiles, anchored at (0, 0).
    int width() const;
    int height() const;
    const TileSpec* find_tile(std::string_view tile_id) const;
    std::string z_key(int level) const { return "z" + std::to_string(level + min_z_key); }
};

enum class ManifestErrorCode {
    syntax,             // not JSON
    missing_field,      // required field absent or mistyped
    bad_value,          // field present but out of range
    duplicate_tile,
    inconsistent_z,     // z keys disagree with z_levels or between tiles
    missing_tile_file,
    overlapping_tiles,  // overlap without "overlapping_tiles": true
};

std::string_view to_string(ManifestErrorCode code);

class ManifestError : public ValidationError {
public:
    ManifestError(ManifestErrorCode code, const std::string& message)
        : ValidationError(std::string(to_string(code)) + ": " + message), code_(code) {}
    ManifestErrorCode code() const { return code_; }

private:
    ManifestErrorCode code_;
};

/// Relative tile paths resolve against base_dir. With check_files, every
/// referenced tile file must exist.
SlideManifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir,
                             bool check_files = true);
SlideManifest load_manifest(const std::filesystem::path& path, bool check_files = true);

/// Paths are written relative to the manifest's directory when possible.
nlohmann::ordered_json manifest_to_json(const SlideManifest& m,
                                        const std::filesystem::path& base_dir);
void save_manifest(const SlideManifest& m, const std::filesystem::path& path);

}  // namespace cytopipe
