#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cytopipe/groundtruth.hpp"
#include "cytopipe/manifest.hpp"

namespace cytopipe {

// ---------------------------------------------------------------------------
// Subprocess plumbing
// ---------------------------------------------------------------------------

/// Whitespace-separated words; double quotes group a word.
std::vector<std::string> split_command(std::string_view command);

/// Runs argv[0] (PATH lookup) with the child's stdout redirected to stderr.
/// Throws AdapterError on spawn failure, timeout (child is killed) or nonzero exit.
void run_command(const std::vector<std::string>& argv, std::chrono::milliseconds timeout);

/// Unique scratch file paths for adapter exchange; removed with the object.
class ScratchDir {
public:
    ScratchDir();
    ~ScratchDir();
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    std::filesystem::path next(std::string_view suffix);

private:
    std::filesystem::path dir_;
    std::atomic<std::uint64_t> counter_{0};
};

// ---------------------------------------------------------------------------
// Density-map adapters: one map per tile, at the central focus level.
// ---------------------------------------------------------------------------

class DensityAdapter {
public:
    virtual ~DensityAdapter() = default;
    /// Throws AdapterError / FormatError when no valid map can be produced.
    virtual DensityMap density_for(const SlideManifest& slide, const TileSpec& tile) = 0;
};

/// Reads <dir>/<slide_id>/<tile_id>.dmap.
class PrecomputedDensityAdapter final : public DensityAdapter {
public:
    explicit PrecomputedDensityAdapter(std::filesystem::path dir) : dir_(std::move(dir)) {}
    DensityMap density_for(const SlideManifest& slide, const TileSpec& tile) override;
    static std::filesystem::path map_path(const std::filesystem::path& dir,
                                          std::string_view slide_id, std::string_view tile_id);

private:
    std::filesystem::path dir_;
};

/// Invokes `<cmd> <tile z0 image> <output.dmap>`.
class CommandDensityAdapter final : public DensityAdapter {
public:
    CommandDensityAdapter(std::string command, std::chrono::milliseconds timeout)
        : argv_(split_command(command)), timeout_(timeout) {}
    DensityMap density_for(const SlideManifest& slide, const TileSpec& tile) override;

private:
    std::vector<std::string> argv_;
    std::chrono::milliseconds timeout_;
    ScratchDir scratch_;
};

// ---------------------------------------------------------------------------
// Classifier adapters: malignancy score in [0, 1] per patch.
// ---------------------------------------------------------------------------

struct PatchRef {
    std::string cell_id;
    std::filesystem::path path;
};

class ClassifierAdapter {
public:
    virtual ~ClassifierAdapter() = default;
    /// One entry per input, in order; nullopt = no score available for that
    /// cell. Throws AdapterError when the batch fails as a whole and
    /// ProtocolError when the output breaks the contract.
    virtual std::vector<std::optional<double>> score_batch(std::span<const PatchRef> batch) = 0;
};

/// Scores from a `cell_id,score` CSV.
class PrecomputedClassifierAdapter final : public ClassifierAdapter {
public:
    explicit PrecomputedClassifierAdapter(const std::filesystem::path& scores_csv);
    std::vector<std::optional<double>> score_batch(std::span<const PatchRef> batch) override;

private:
    std::unordered_map<std::string, double> scores_;
};

/// Invokes `<cmd> <batch.csv> <scores.csv>`; batch.csv is `cell_id,path`,
/// the adapter writes `cell_id,score` for every listed cell.
class CommandClassifierAdapter final : public ClassifierAdapter {
public:
    CommandClassifierAdapter(std::string command, std::chrono::milliseconds timeout)
        : argv_(split_command(command)), timeout_(timeout) {}
    std::vector<std::optional<double>> score_batch(std::span<const PatchRef> batch) override;

private:
    std::vector<std::string> argv_;
    std::chrono::milliseconds timeout_;
    ScratchDir scratch_;
};

/// Deterministic stand-in: mean pixel value / 255.
class MeanIntensityClassifier final : public ClassifierAdapter {
public:
    std::vector<std::optional<double>> score_batch(std::span<const PatchRef> batch) override;
};

/// Validates and orders a `cell_id,score` table against the batch.
std::vector<std::optional<double>> parse_score_table(const std::filesystem::path& path,
                                                     std::span<const PatchRef> batch);

}  // namespace cytopipe
