#pragma once

#include <cstddef>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cytopipe/adapters.hpp"
#include "cytopipe/detect.hpp"
#include "cytopipe/focus.hpp"
#include "cytopipe/manifest.hpp"
#include "cytopipe/patchio.hpp"

namespace cytopipe {

// ---------------------------------------------------------------------------
// Coordinates
// ---------------------------------------------------------------------------

/// Map-to-tile scale factors: tile_width / map_width, tile_height / map_height.
struct MapScale {
    double sx = 1.0;
    double sy = 1.0;
};

MapScale map_scale(const TileSpec& tile, int map_width, int map_height);

/// global = origin + round(local * scale). Throws InvalidParameter when the
/// result falls outside [0, slide_width) x [0, slide_height).
Point tile_to_global(Point origin, double local_x, double local_y, MapScale scale,
                     int slide_width, int slide_height);

/// Inverse of tile_to_global up to rounding: (global - origin) / scale.
std::pair<double, double> global_to_tile(Point origin, Point global, MapScale scale);

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

struct GlobalDetection {
    std::string slide_id;
    std::string tile_id;
    int x = 0;  // global slide pixels
    int y = 0;
    std::size_t blob_pixel_count = 0;
};

struct DetectionParams {
    float threshold = kDefaultThreshold;
    int map_width = 1024;  // declared adapter output size; 0 = the tile's own size
    int map_height = 512;
    double dedup_radius = 8.0;
    int parallelism = 0;  // 0 = hardware concurrency
};

struct TileFailure {
    std::string slide_id;
    std::string tile_id;
    std::string message;
};

struct DetectionRun {
    std::vector<GlobalDetection> detections;  // sorted by (y, x)
    std::vector<TileFailure> failures;
    std::size_t raw_count = 0;           // before ownership and dedup
    std::size_t not_owned = 0;           // dropped in favour of a deeper overlapping tile
    std::size_t duplicates_removed = 0;  // merged by the cross-tile radius rule
};

DetectionRun run_detection(const SlideManifest& slide, DensityAdapter& adapter,
                           const DetectionParams& params = {});

/// Keeps, for cross-tile pairs closer than radius, the detection with the
/// larger blob (ties: earlier tile in the manifest, then earlier input).
/// Returns the kept indices in input order.
std::vector<std::size_t> dedup_across_tiles(std::span<const GlobalDetection> dets,
                                            std::span<const std::size_t> tile_rank,
                                            double radius);

void write_detections_csv(const std::filesystem::path& path,
                          std::span<const GlobalDetection> dets);
std::vector<GlobalDetection> read_detections_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Cells
// ---------------------------------------------------------------------------

/// "<slide_id>_<index, 6 digits>"; index counts a slide's detections in order.
std::string make_cell_id(std::string_view slide_id, std::size_t index);

struct Cell {
    std::string cell_id;
    std::string slide_id;
    int x = 0;
    int y = 0;
};

std::vector<Cell> cells_from_detections(std::span<const GlobalDetection> dets);

/// Stitched access to a slide's tiles at any level, with an LRU tile cache.
class SlideReader {
public:
    explicit SlideReader(const SlideManifest& slide, std::size_t cache_tiles = 0);

    /// size x size crop centred on (x, y) per the [c - size/2, c + size/2 - 1]
    /// window. Pixels beyond the slide repeat the slide edge; pixels inside the
    /// slide that no readable tile covers repeat the centre tile's edge and
    /// set *incomplete.
    ImageU8 crop(int level, int center_x, int center_y, int size, bool* incomplete = nullptr);
    ZStack stack(const std::string& cell_id, int center_x, int center_y, int size,
                 bool* incomplete = nullptr);

    const SlideManifest& manifest() const { return slide_; }

private:
    std::shared_ptr<const ImageU8> tile_image(std::size_t tile, int level);
    int channels();

    const SlideManifest& slide_;
    std::size_t capacity_;
    std::mutex mutex_;
    std::list<std::pair<std::size_t, std::shared_ptr<const ImageU8>>> lru_;
    std::unordered_map<std::size_t,
                       std::list<std::pair<std::size_t, std::shared_ptr<const ImageU8>>>::iterator>
        index_;
    std::unordered_map<std::size_t, bool> unreadable_;
    int channels_ = 0;
};

// ---------------------------------------------------------------------------
// Focus selection and patch extraction
// ---------------------------------------------------------------------------

struct FocusOutcome {
    Cell cell;
    int level = 0;
    std::size_t pair_index = 0;
    double embm_score = 0.0;  // of the selected, unfiltered level
};

struct FocusRun {
    std::vector<FocusOutcome> cells;  // input order
    std::vector<std::string> warnings;
};

FocusRun run_focus(SlideReader& reader, std::span<const Cell> cells, const FocusParams& params,
                   int patch_size = kDefaultPatchSize, int parallelism = 0);

struct ExtractParams {
    int patch_size = kDefaultPatchSize;
    int offset = 0;           // defocus offset from the selected level
    bool all_levels = false;  // also store every level (annotation archives)
    double contrast_threshold = kDefaultContrastThreshold;
    int parallelism = 0;
};

struct ExtractRun {
    std::vector<ArchiveEntry> entries;
    std::vector<std::string> warnings;
};

/// Writes <root>/<slide_id>/<cell_id>_z<level>.png for cells of this slide.
/// Index rows are returned, not written.
ExtractRun run_extract(SlideReader& reader, std::span<const Cell> cells,
                       std::span<const FocusPrediction> focus, const std::filesystem::path& root,
                       const ExtractParams& params);

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

struct CellRecord {
    std::string cell_id;
    std::string slide_id;
    int x = 0;
    int y = 0;
    int z = 0;
    double embm_score = 0.0;
    std::optional<double> class_score;
    std::optional<int> fold_id;
};

void write_records_csv(const std::filesystem::path& path, std::span<const CellRecord> rows);
std::vector<CellRecord> read_records_csv(const std::filesystem::path& path);

struct ClassifyParams {
    std::size_t batch_size = 256;
    int parallelism = 1;
};

struct ClassifyRun {
    std::vector<std::optional<double>> scores;  // aligned with the input
    std::size_t invocations = 0;                // adapter calls including retries
    std::size_t failed_batches = 0;             // failed twice; recorded as missing
    std::vector<std::string> warnings;
};

/// Batches are retried once on AdapterError; ProtocolError aborts the run.
ClassifyRun classify_cells(std::span<const PatchRef> patches, ClassifierAdapter& adapter,
                           const ClassifyParams& params = {});

}  // namespace cytopipe
