#include "cytopipe/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include "cytopipe/io.hpp"

namespace cytopipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::healthy: return "healthy";
        case Diagnosis::cancer: return "cancer";
        case Diagnosis::unknown: break;
    }
    return "unknown";
}

Diagnosis parse_diagnosis(std::string_view text) {
    if (text == "healthy") return Diagnosis::healthy;
    if (text == "cancer") return Diagnosis::cancer;
    if (text == "unknown") return Diagnosis::unknown;
    throw ManifestError(ManifestErrorCode::bad_value,
                        "diagnosis must be healthy|cancer|unknown, got '" + std::string(text) + "'");
}

std::string_view to_string(ManifestErrorCode code) {
    switch (code) {
        case ManifestErrorCode::syntax: return "syntax";
        case ManifestErrorCode::missing_field: return "missing_field";
        case ManifestErrorCode::bad_value: return "bad_value";
        case ManifestErrorCode::duplicate_tile: return "duplicate_tile";
        case ManifestErrorCode::inconsistent_z: return "inconsistent_z";
        case ManifestErrorCode::missing_tile_file: return "missing_tile_file";
        case ManifestErrorCode::overlapping_tiles: return "overlapping_tiles";
    }
    return "unknown";
}

int TileSpec::depth(int x, int y) const {
    return std::min({x - origin_x, y - origin_y, origin_x + width - 1 - x,
                     origin_y + height - 1 - y});
}

int SlideManifest::width() const {
    int w = 0;
    for (const TileSpec& t : tiles) w = std::max(w, t.origin_x + t.width);
    return w;
}

int SlideManifest::height() const {
    int h = 0;
    for (const TileSpec& t : tiles) h = std::max(h, t.origin_y + t.height);
    return h;
}

const TileSpec* SlideManifest::find_tile(std::string_view tile_id) const {
    for (const TileSpec& t : tiles) {
        if (t.tile_id == tile_id) return &t;
    }
    return nullptr;
}

namespace {

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) {
        throw ManifestError(ManifestErrorCode::missing_field,
                            where + ": missing required field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ManifestError(ManifestErrorCode::missing_field,
                            where + ": field '" + key + "' has the wrong type");
    }
}

int parse_z_key(const std::string& key) {
    int v = 0;
    if (key.size() < 2 || key[0] != 'z') return INT32_MIN;
    const char* first = key.data() + 1;
    const char* last = key.data() + key.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) return INT32_MIN;
    return v;
}

bool overlaps(const TileSpec& a, const TileSpec& b) {
    return a.origin_x < b.origin_x + b.width && b.origin_x < a.origin_x + a.width &&
           a.origin_y < b.origin_y + b.height && b.origin_y < a.origin_y + a.height;
}

}  // namespace

SlideManifest parse_manifest(const json& j, const fs::path& base_dir, bool check_files) {
    SlideManifest m;
    const std::string where = "manifest";
    if (!j.is_object()) throw ManifestError(ManifestErrorCode::syntax, "top level must be an object");
    m.slide_id = required<std::string>(j, "slide_id", where);
    m.patient_id = required<std::string>(j, "patient_id", where);
    m.pixel_size_um = required<double>(j, "pixel_size_um", where);
    m.z_levels = required<int>(j, "z_levels", where);
    m.z_step_um = required<double>(j, "z_step_um", where);
    m.diagnosis = j.contains("diagnosis")
                      ? parse_diagnosis(required<std::string>(j, "diagnosis", where))
                      : Diagnosis::unknown;
    m.overlapping_tiles = j.value("overlapping_tiles", false);
    for (const std::string* id : {&m.slide_id, &m.patient_id}) {
        if (id->empty() || id->find_first_of(",\n\r/\\") != std::string::npos) {
            throw ManifestError(ManifestErrorCode::bad_value,
                                "ids must be non-empty without ',', '/', '\\' or line breaks");
        }
    }
    if (!(m.pixel_size_um > 0.0)) {
        throw ManifestError(ManifestErrorCode::bad_value, "pixel_size_um must be > 0");
    }
    if (m.z_levels < 1) throw ManifestError(ManifestErrorCode::bad_value, "z_levels must be >= 1");
    if (!(m.z_step_um > 0.0)) throw ManifestError(ManifestErrorCode::bad_value, "z_step_um must be > 0");

    const json tiles = required<json>(j, "tiles", where);
    if (!tiles.is_array() || tiles.empty()) {
        throw ManifestError(ManifestErrorCode::missing_field, "tiles must be a non-empty array");
    }

    std::set<std::string> ids;
    std::set<int> first_keys;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const json& tj = tiles[i];
        const std::string tw = "tiles[" + std::to_string(i) + "]";
        TileSpec t;
        t.tile_id = required<std::string>(tj, "tile_id", tw);
        if (t.tile_id.empty() || t.tile_id.find_first_of(",\n\r/\\") != std::string::npos) {
            throw ManifestError(ManifestErrorCode::bad_value, tw + ": invalid tile_id");
        }
        if (!ids.insert(t.tile_id).second) {
            throw ManifestError(ManifestErrorCode::duplicate_tile,
                                "tile_id '" + t.tile_id + "' appears more than once");
        }
        const auto origin = required<std::vector<int>>(tj, "origin", tw);
        if (origin.size() != 2) {
            throw ManifestError(ManifestErrorCode::bad_value, tw + ": origin must be [x, y]");
        }
        t.origin_x = origin[0];
        t.origin_y = origin[1];
        t.width = required<int>(tj, "width", tw);
        t.height = required<int>(tj, "height", tw);
        if (t.origin_x < 0 || t.origin_y < 0 || t.width < 1 || t.height < 1) {
            throw ManifestError(ManifestErrorCode::bad_value,
                                tw + ": origin must be >= 0 and size >= 1");
        }
        const json paths = required<json>(tj, "paths", tw);
        if (!paths.is_object()) {
            throw ManifestError(ManifestErrorCode::missing_field, tw + ": paths must be an object");
        }
        std::set<int> keys;
        for (const auto& [key, value] : paths.items()) {
            const int z = parse_z_key(key);
            if (z == INT32_MIN || !value.is_string()) {
                throw ManifestError(ManifestErrorCode::inconsistent_z,
                                    tw + ": bad z key or path '" + key + "'");
            }
            keys.insert(z);
        }
        if (keys.empty() || static_cast<int>(keys.size()) != m.z_levels || !keys.contains(0) ||
            *keys.rbegin() - *keys.begin() + 1 != m.z_levels) {
            throw ManifestError(ManifestErrorCode::inconsistent_z,
                                tw + ": z keys must be a contiguous range containing z0 with " +
                                    std::to_string(m.z_levels) + " entries");
        }
        if (i == 0) {
            first_keys = keys;
            m.min_z_key = *keys.begin();
        } else if (keys != first_keys) {
            throw ManifestError(ManifestErrorCode::inconsistent_z,
                                tw + ": z keys differ from the first tile");
        }
        for (int z = m.min_z_key; z < m.min_z_key + m.z_levels; ++z) {
            fs::path p = paths.at("z" + std::to_string(z)).get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            if (check_files && !fs::exists(p)) {
                throw ManifestError(ManifestErrorCode::missing_tile_file,
                                    tw + ": tile file not found: " + p.string());
            }
            t.paths.push_back(std::move(p));
        }
        m.tiles.push_back(std::move(t));
    }

    if (!m.overlapping_tiles) {
        std::vector<const TileSpec*> by_x;
        for (const TileSpec& t : m.tiles) by_x.push_back(&t);
        std::sort(by_x.begin(), by_x.end(),
                  [](const TileSpec* a, const TileSpec* b) { return a->origin_x < b->origin_x; });
        for (std::size_t a = 0; a < by_x.size(); ++a) {
            for (std::size_t b = a + 1; b < by_x.size(); ++b) {
                if (by_x[b]->origin_x >= by_x[a]->origin_x + by_x[a]->width) break;
                if (overlaps(*by_x[a], *by_x[b])) {
                    throw ManifestError(ManifestErrorCode::overlapping_tiles,
                                        "tiles '" + by_x[a]->tile_id + "' and '" +
                                            by_x[b]->tile_id +
                                            "' overlap; set \"overlapping_tiles\": true");
                }
            }
        }
    }
    return m;
}

SlideManifest load_manifest(const fs::path& path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw ManifestError(ManifestErrorCode::syntax, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ManifestError(ManifestErrorCode::syntax, path.string() + ": " + e.what());
    }
    return parse_manifest(j, path.parent_path(), check_files);
}

nlohmann::ordered_json manifest_to_json(const SlideManifest& m, const fs::path& base_dir) {
    nlohmann::ordered_json j;
    j["slide_id"] = m.slide_id;
    j["patient_id"] = m.patient_id;
    j["diagnosis"] = std::string(to_string(m.diagnosis));
    j["pixel_size_um"] = m.pixel_size_um;
    j["z_levels"] = m.z_levels;
    j["z_step_um"] = m.z_step_um;
    if (m.overlapping_tiles) j["overlapping_tiles"] = true;
    j["tiles"] = nlohmann::ordered_json::array();
    for (const TileSpec& t : m.tiles) {
        nlohmann::ordered_json tj;
        tj["tile_id"] = t.tile_id;
        tj["origin"] = {t.origin_x, t.origin_y};
        tj["width"] = t.width;
        tj["height"] = t.height;
        nlohmann::ordered_json paths;
        for (int level = 0; level < static_cast<int>(t.paths.size()); ++level) {
            const fs::path rel = base_dir.empty() ? t.paths[level]
                                                  : t.paths[level].lexically_relative(base_dir);
            paths[m.z_key(level)] = (rel.empty() ? t.paths[level] : rel).generic_string();
        }
        tj["paths"] = std::move(paths);
        j["tiles"].push_back(std::move(tj));
    }
    return j;
}

void save_manifest(const SlideManifest& m, const fs::path& path) {
    write_text_atomic(path, manifest_to_json(m, path.parent_path()).dump(2) + "\n");
}

}  // namespace cytopipe
