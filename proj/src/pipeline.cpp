#include "cytopipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "cytopipe/io.hpp"
#include "parallel.hpp"

namespace cytopipe {

namespace fs = std::filesystem;

MapScale map_scale(const TileSpec& tile, int map_width, int map_height) {
    if (map_width < 1 || map_height < 1) throw InvalidParameter("map dimensions must be >= 1");
    return {static_cast<double>(tile.width) / map_width,
            static_cast<double>(tile.height) / map_height};
}

Point tile_to_global(Point origin, double local_x, double local_y, MapScale scale,
                     int slide_width, int slide_height) {
    const Point g{origin.x + static_cast<int>(std::floor(local_x * scale.sx + 0.5)),
                  origin.y + static_cast<int>(std::floor(local_y * scale.sy + 0.5))};
    if (g.x < 0 || g.y < 0 || g.x >= slide_width || g.y >= slide_height) {
        throw InvalidParameter("mapped point (" + std::to_string(g.x) + "," + std::to_string(g.y) +
                               ") outside slide " + std::to_string(slide_width) + "x" +
                               std::to_string(slide_height));
    }
    return g;
}

std::pair<double, double> global_to_tile(Point origin, Point global, MapScale scale) {
    return {(global.x - origin.x) / scale.sx, (global.y - origin.y) / scale.sy};
}

namespace {

std::int64_t cell_key(std::int64_t cx, std::int64_t cy) { return (cx << 32) ^ (cy & 0xffffffff); }

bool detection_less(const GlobalDetection& a, const GlobalDetection& b) {
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.tile_id < b.tile_id;
}

}  // namespace

std::vector<std::size_t> dedup_across_tiles(std::span<const GlobalDetection> dets,
                                            std::span<const std::size_t> tile_rank,
                                            double radius) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].blob_pixel_count != dets[b].blob_pixel_count) {
            return dets[a].blob_pixel_count > dets[b].blob_pixel_count;
        }
        return tile_rank[a] < tile_rank[b];
    });
    const double cell = std::max(1.0, std::ceil(radius));
    const double r2 = radius * radius;
    std::unordered_map<std::int64_t, std::vector<std::size_t>> grid;
    std::vector<char> keep(dets.size(), 0);
    for (std::size_t i : order) {
        const auto cx = static_cast<std::int64_t>(std::floor(dets[i].x / cell));
        const auto cy = static_cast<std::int64_t>(std::floor(dets[i].y / cell));
        bool duplicate = false;
        for (std::int64_t gy = cy - 1; gy <= cy + 1 && !duplicate; ++gy) {
            for (std::int64_t gx = cx - 1; gx <= cx + 1 && !duplicate; ++gx) {
                const auto it = grid.find(cell_key(gx, gy));
                if (it == grid.end()) continue;
                for (std::size_t j : it->second) {
                    if (tile_rank[j] == tile_rank[i]) continue;
                    const double dx = dets[i].x - dets[j].x;
                    const double dy = dets[i].y - dets[j].y;
                    if (dx * dx + dy * dy <= r2) {
                        duplicate = true;
                        break;
                    }
                }
            }
        }
        if (!duplicate) {
            keep[i] = 1;
            grid[cell_key(cx, cy)].push_back(i);
        }
    }
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (keep[i]) kept.push_back(i);
    }
    return kept;
}

DetectionRun run_detection(const SlideManifest& slide, DensityAdapter& adapter,
                           const DetectionParams& params) {
    const std::size_t n_tiles = slide.tiles.size();
    std::vector<std::vector<GlobalDetection>> per_tile(n_tiles);
    std::vector<std::optional<std::string>> failure(n_tiles);
    const int slide_w = slide.width();
    const int slide_h = slide.height();

    detail::parallel_for(n_tiles, params.parallelism, [&](std::size_t t) {
        const TileSpec& tile = slide.tiles[t];
        const int mw = params.map_width > 0 ? params.map_width : tile.width;
        const int mh = params.map_height > 0 ? params.map_height : tile.height;
        DensityMap map;
        try {
            map = adapter.density_for(slide, tile);
        } catch (const ValidationError& e) {
            failure[t] = e.what();
            return;
        } catch (const RuntimeFailure& e) {
            failure[t] = e.what();
            return;
        }
        if (map.width() != mw || map.height() != mh || map.channels() != 1) {
            failure[t] = "density map is " + std::to_string(map.width()) + "x" +
                         std::to_string(map.height()) + "x" + std::to_string(map.channels()) +
                         ", expected " + std::to_string(mw) + "x" + std::to_string(mh) + "x1";
            return;
        }
        const MapScale scale = map_scale(tile, mw, mh);
        for (const Detection& d : density_to_detections(map, params.threshold)) {
            const Point g = tile_to_global({tile.origin_x, tile.origin_y}, d.centroid_x,
                                           d.centroid_y, scale, slide_w, slide_h);
            per_tile[t].push_back({slide.slide_id, tile.tile_id, g.x, g.y, d.blob_pixel_count});
        }
    });

    DetectionRun run;
    std::vector<GlobalDetection> owned;
    std::vector<std::size_t> rank;
    for (std::size_t t = 0; t < n_tiles; ++t) {
        if (failure[t]) {
            run.failures.push_back({slide.slide_id, slide.tiles[t].tile_id, *failure[t]});
            continue;
        }
        run.raw_count += per_tile[t].size();
        for (GlobalDetection& d : per_tile[t]) {
            if (slide.overlapping_tiles) {
                std::size_t owner = t;
                int best = slide.tiles[t].depth(d.x, d.y);
                for (std::size_t o = 0; o < n_tiles; ++o) {
                    if (o == t || failure[o] || !slide.tiles[o].contains(d.x, d.y)) continue;
                    const int depth = slide.tiles[o].depth(d.x, d.y);
                    if (depth > best || (depth == best && o < owner)) {
                        best = depth;
                        owner = o;
                    }
                }
                if (owner != t) {
                    ++run.not_owned;
                    continue;
                }
            }
            owned.push_back(std::move(d));
            rank.push_back(t);
        }
    }
    const std::vector<std::size_t> kept = dedup_across_tiles(owned, rank, params.dedup_radius);
    run.duplicates_removed = owned.size() - kept.size();
    run.detections.reserve(kept.size());
    for (std::size_t i : kept) run.detections.push_back(std::move(owned[i]));
    std::sort(run.detections.begin(), run.detections.end(), detection_less);
    return run;
}

void write_detections_csv(const fs::path& path, std::span<const GlobalDetection> dets) {
    CsvWriter out(path, {"slide_id", "tile_id", "x", "y"});
    for (const GlobalDetection& d : dets) {
        out.row({d.slide_id, d.tile_id, std::to_string(d.x), std::to_string(d.y)});
    }
    out.close();
}

std::vector<GlobalDetection> read_detections_csv(const fs::path& path) {
    const CsvTable t = read_csv(path, {"slide_id", "tile_id", "x", "y"});
    std::vector<GlobalDetection> dets;
    dets.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        dets.push_back({f[0], f[1], parse_int(f[2], path, r), parse_int(f[3], path, r), 0});
    }
    return dets;
}

std::string make_cell_id(std::string_view slide_id, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%06zu", index);
    return std::string(slide_id) + buf;
}

std::vector<Cell> cells_from_detections(std::span<const GlobalDetection> dets) {
    std::unordered_map<std::string, std::size_t> counter;
    std::vector<Cell> cells;
    cells.reserve(dets.size());
    for (const GlobalDetection& d : dets) {
        const std::size_t index = counter[d.slide_id]++;
        cells.push_back({make_cell_id(d.slide_id, index), d.slide_id, d.x, d.y});
    }
    return cells;
}

// ---------------------------------------------------------------------------
// SlideReader
// ---------------------------------------------------------------------------

SlideReader::SlideReader(const SlideManifest& slide, std::size_t cache_tiles)
    : slide_(slide),
      capacity_(cache_tiles > 0 ? cache_tiles
                                : std::min<std::size_t>(slide.tiles.size(), 4) *
                                      static_cast<std::size_t>(slide.z_levels)) {}

std::shared_ptr<const ImageU8> SlideReader::tile_image(std::size_t tile, int level) {
    const std::size_t key = tile * static_cast<std::size_t>(slide_.z_levels) +
                            static_cast<std::size_t>(level);
    std::lock_guard lock(mutex_);
    if (const auto it = index_.find(key); it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        return it->second->second;
    }
    if (unreadable_.contains(key)) return nullptr;
    const TileSpec& spec = slide_.tiles[tile];
    std::shared_ptr<const ImageU8> img;
    try {
        img = std::make_shared<const ImageU8>(read_png(spec.paths.at(static_cast<std::size_t>(level))));
    } catch (const ValidationError&) {
        unreadable_[key] = true;
        return nullptr;
    }
    if (img->width() != spec.width || img->height() != spec.height) {
        throw FormatError("tile '" + spec.tile_id + "' level " + std::to_string(level) + " is " +
                          std::to_string(img->width()) + "x" + std::to_string(img->height()) +
                          ", manifest says " + std::to_string(spec.width) + "x" +
                          std::to_string(spec.height));
    }
    if (channels_ == 0) channels_ = img->channels();
    if (img->channels() != channels_) {
        throw FormatError("tile '" + spec.tile_id + "' has a different channel count");
    }
    lru_.emplace_front(key, img);
    index_[key] = lru_.begin();
    while (lru_.size() > capacity_) {
        index_.erase(lru_.back().first);
        lru_.pop_back();
    }
    return img;
}

ImageU8 SlideReader::crop(int level, int center_x, int center_y, int size, bool* incomplete) {
    if (size < 2 || size % 2 != 0) throw InvalidParameter("patch size must be even and >= 2");
    if (level < 0 || level >= slide_.z_levels) throw InvalidParameter("level out of range");
    const int slide_w = slide_.width();
    const int slide_h = slide_.height();
    if (center_x < 0 || center_y < 0 || center_x >= slide_w || center_y >= slide_h) {
        throw InvalidParameter("cell centre outside slide");
    }
    const int x0 = center_x - size / 2;
    const int y0 = center_y - size / 2;

    // Centre tile first, then the others in manifest order.
    std::vector<std::size_t> candidates;
    std::size_t centre = slide_.tiles.size();
    for (std::size_t t = 0; t < slide_.tiles.size(); ++t) {
        if (slide_.tiles[t].contains(center_x, center_y)) {
            centre = t;
            break;
        }
    }
    if (centre == slide_.tiles.size()) {
        throw InvalidParameter("no tile covers (" + std::to_string(center_x) + "," +
                               std::to_string(center_y) + ")");
    }
    candidates.push_back(centre);
    for (std::size_t t = 0; t < slide_.tiles.size(); ++t) {
        const TileSpec& s = slide_.tiles[t];
        if (t != centre && s.origin_x < x0 + size && x0 < s.origin_x + s.width &&
            s.origin_y < y0 + size && y0 < s.origin_y + s.height) {
            candidates.push_back(t);
        }
    }
    std::vector<std::shared_ptr<const ImageU8>> images;
    for (std::size_t t : candidates) images.push_back(tile_image(t, level));
    if (!images[0]) {
        throw AdapterError("cannot read tile '" + slide_.tiles[centre].tile_id + "' level " +
                           std::to_string(level));
    }
    const int ch = images[0]->channels();
    const TileSpec& ct = slide_.tiles[centre];
    ImageU8 out(size, size, ch);
    for (int y = 0; y < size; ++y) {
        const int gy = std::clamp(y0 + y, 0, slide_h - 1);
        for (int x = 0; x < size; ++x) {
            const int gx = std::clamp(x0 + x, 0, slide_w - 1);
            const ImageU8* src = nullptr;
            int lx = 0, ly = 0;
            for (std::size_t c = 0; c < candidates.size(); ++c) {
                const TileSpec& s = slide_.tiles[candidates[c]];
                if (images[c] && s.contains(gx, gy)) {
                    src = images[c].get();
                    lx = gx - s.origin_x;
                    ly = gy - s.origin_y;
                    break;
                }
            }
            if (!src) {
                src = images[0].get();
                lx = std::clamp(gx - ct.origin_x, 0, ct.width - 1);
                ly = std::clamp(gy - ct.origin_y, 0, ct.height - 1);
                if (incomplete) *incomplete = true;
            }
            for (int c = 0; c < ch; ++c) out.at(x, y, c) = src->at(lx, ly, c);
        }
    }
    return out;
}

ZStack SlideReader::stack(const std::string& cell_id, int center_x, int center_y, int size,
                          bool* incomplete) {
    ZStack s;
    s.cell_id = cell_id;
    s.z_step_um = slide_.z_step_um;
    for (int level = 0; level < slide_.z_levels; ++level) {
        s.levels.push_back(crop(level, center_x, center_y, size, incomplete));
    }
    return s;
}

namespace {

/// Processing order grouped by the tile holding each cell, for cache locality.
std::vector<std::size_t> tile_major_order(const SlideManifest& slide, std::span<const Cell> cells) {
    std::vector<std::size_t> owner(cells.size(), slide.tiles.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t t = 0; t < slide.tiles.size(); ++t) {
            if (slide.tiles[t].contains(cells[i].x, cells[i].y)) {
                owner[i] = t;
                break;
            }
        }
    }
    std::vector<std::size_t> order(cells.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return owner[a] < owner[b]; });
    return order;
}

void check_cells_belong(const SlideManifest& slide, std::span<const Cell> cells) {
    for (const Cell& c : cells) {
        if (c.slide_id != slide.slide_id) {
            throw InvalidParameter("cell '" + c.cell_id + "' belongs to slide '" + c.slide_id +
                                   "', not '" + slide.slide_id + "'");
        }
    }
}

std::string stitch_warning(const Cell& c) {
    return "cell " + c.cell_id + ": window reaches a missing tile; edge replication used";
}

}  // namespace

FocusRun run_focus(SlideReader& reader, std::span<const Cell> cells, const FocusParams& params,
                   int patch_size, int parallelism) {
    const SlideManifest& slide = reader.manifest();
    check_cells_belong(slide, cells);
    FocusRun run;
    run.cells.resize(cells.size());
    std::vector<char> incomplete(cells.size(), 0);
    const std::vector<std::size_t> order = tile_major_order(slide, cells);
    detail::parallel_for(order.size(), parallelism, [&](std::size_t k) {
        const std::size_t i = order[k];
        const Cell& c = cells[i];
        bool partial = false;
        const ZStack stack = reader.stack(c.cell_id, c.x, c.y, patch_size, &partial);
        incomplete[i] = partial ? 1 : 0;
        FocusOutcome& out = run.cells[i];
        out.cell = c;
        if (stack.levels.size() < 2) {
            out.level = 0;
            out.pair_index = 0;
        } else {
            const FocusChoice choice = select_focus(stack, params);
            out.level = static_cast<int>(choice.selected_level);
            out.pair_index = choice.pair_index;
        }
        out.embm_score =
            embm_score(stack.levels[static_cast<std::size_t>(out.level)], params.contrast_threshold)
                .value;
    });
    if (slide.z_levels < 2 && !cells.empty()) {
        run.warnings.push_back("slide " + slide.slide_id +
                               " has a single z-level; focus selection skipped, level 0 used");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (incomplete[i]) run.warnings.push_back(stitch_warning(cells[i]));
    }
    return run;
}

ExtractRun run_extract(SlideReader& reader, std::span<const Cell> cells,
                       std::span<const FocusPrediction> focus, const fs::path& root,
                       const ExtractParams& params) {
    const SlideManifest& slide = reader.manifest();
    check_cells_belong(slide, cells);
    std::unordered_map<std::string, int> level_of;
    for (const FocusPrediction& p : focus) level_of[p.cell_id] = p.level;
    const auto n_levels = static_cast<std::size_t>(slide.z_levels);
    std::vector<int> chosen(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto it = level_of.find(cells[i].cell_id);
        if (it == level_of.end()) {
            throw InvalidParameter("no focus level for cell '" + cells[i].cell_id + "'");
        }
        if (it->second < 0 || it->second >= slide.z_levels) {
            throw InvalidParameter("focus level " + std::to_string(it->second) + " for cell '" +
                                   cells[i].cell_id + "' outside [0, " +
                                   std::to_string(slide.z_levels - 1) + "]");
        }
        chosen[i] = static_cast<int>(
            defocus_level(static_cast<std::size_t>(it->second), params.offset, n_levels));
    }

    ExtractRun run;
    run.entries.resize(cells.size());
    std::vector<char> incomplete(cells.size(), 0);
    const std::vector<std::size_t> order = tile_major_order(slide, cells);
    detail::parallel_for(order.size(), params.parallelism, [&](std::size_t k) {
        const std::size_t i = order[k];
        const Cell& c = cells[i];
        bool partial = false;
        double score = 0.0;
        for (int level = 0; level < slide.z_levels; ++level) {
            if (!params.all_levels && level != chosen[i]) continue;
            const ImageU8 patch = reader.crop(level, c.x, c.y, params.patch_size, &partial);
            write_png(archive_patch_path(root, c.slide_id, c.cell_id, level), patch);
            if (level == chosen[i]) score = embm_score(patch, params.contrast_threshold).value;
        }
        incomplete[i] = partial ? 1 : 0;
        run.entries[i] = {c.cell_id, c.slide_id, c.x, c.y, chosen[i], score};
    });
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (incomplete[i]) run.warnings.push_back(stitch_warning(cells[i]));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Records and classification
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kRecordHeader = {"cell_id", "slide_id",    "x",          "y",
                                                "z",       "embm_score", "class_score", "fold_id"};

}  // namespace

void write_records_csv(const fs::path& path, std::span<const CellRecord> rows) {
    CsvWriter out(path, kRecordHeader);
    for (const CellRecord& r : rows) {
        out.row({r.cell_id, r.slide_id, std::to_string(r.x), std::to_string(r.y),
                 std::to_string(r.z), format_fixed(r.embm_score, 6),
                 r.class_score ? format_double(*r.class_score) : std::string(),
                 r.fold_id ? std::to_string(*r.fold_id) : std::string()});
    }
    out.close();
}

std::vector<CellRecord> read_records_csv(const fs::path& path) {
    const CsvTable t = read_csv(path, kRecordHeader);
    std::vector<CellRecord> rows;
    rows.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& f = t.rows[r];
        CellRecord rec;
        rec.cell_id = f[0];
        rec.slide_id = f[1];
        rec.x = parse_int(f[2], path, r);
        rec.y = parse_int(f[3], path, r);
        rec.z = parse_int(f[4], path, r);
        rec.embm_score = parse_double(f[5], path, r);
        if (!f[6].empty()) {
            rec.class_score = parse_double(f[6], path, r);
            if (*rec.class_score < 0.0 || *rec.class_score > 1.0) {
                throw FormatError(path.string() + ": row " + std::to_string(r + 1) +
                                  ": class_score outside [0,1]");
            }
        }
        if (!f[7].empty()) rec.fold_id = parse_int(f[7], path, r);
        rows.push_back(std::move(rec));
    }
    return rows;
}

ClassifyRun classify_cells(std::span<const PatchRef> patches, ClassifierAdapter& adapter,
                           const ClassifyParams& params) {
    if (params.batch_size == 0) throw InvalidParameter("batch size must be >= 1");
    ClassifyRun run;
    run.scores.assign(patches.size(), std::nullopt);
    const std::size_t n_batches = (patches.size() + params.batch_size - 1) / params.batch_size;
    std::atomic<std::size_t> invocations{0};
    std::vector<std::optional<std::string>> failure(n_batches);

    detail::parallel_for(n_batches, params.parallelism, [&](std::size_t b) {
        const std::size_t lo = b * params.batch_size;
        const std::size_t hi = std::min(patches.size(), lo + params.batch_size);
        const auto batch = patches.subspan(lo, hi - lo);
        std::vector<std::optional<double>> scores;
        for (int attempt = 0; attempt < 2; ++attempt) {
            invocations.fetch_add(1);
            try {
                scores = adapter.score_batch(batch);
                failure[b].reset();
                break;
            } catch (const AdapterError& e) {
                failure[b] = e.what();
            }
        }
        if (failure[b]) return;
        if (scores.size() != batch.size()) {
            throw ProtocolError("classifier returned " + std::to_string(scores.size()) +
                                " scores for " + std::to_string(batch.size()) + " patches");
        }
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] && !(*scores[i] >= 0.0 && *scores[i] <= 1.0)) {
                throw ProtocolError("classifier score outside [0,1] for '" + batch[i].cell_id + "'");
            }
            run.scores[lo + i] = scores[i];
        }
    });

    run.invocations = invocations.load();
    for (std::size_t b = 0; b < n_batches; ++b) {
        if (!failure[b]) continue;
        ++run.failed_batches;
        run.warnings.push_back("batch " + std::to_string(b) + " failed twice, " +
                               "scores recorded as missing: " + *failure[b]);
    }
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (!run.scores[i] && !failure[i / params.batch_size]) {
            run.warnings.push_back("no score for cell " + patches[i].cell_id);
        }
    }
    return run;
}

}  // namespace cytopipe
