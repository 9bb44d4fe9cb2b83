#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cytopipe {

/// Append-only `cell_id,annotator_id,level` file. Each label is one write()
/// of a complete line; a partial trailing line left by a crash is cut off
/// when the store is opened. Later rows override earlier ones.
class LabelStore {
public:
    explicit LabelStore(std::filesystem::path path);
    ~LabelStore();
    LabelStore(const LabelStore&) = delete;
    LabelStore& operator=(const LabelStore&) = delete;

    std::optional<int> get(const std::string& cell_id, const std::string& annotator) const;
    void append(const std::string& cell_id, const std::string& annotator, int level);
    std::size_t count_for(const std::string& annotator) const;
    std::map<std::string, std::size_t> counts() const;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    mutable std::mutex mutex_;
    std::map<std::pair<std::string, std::string>, int> labels_;
};

struct AnnotateConfig {
    std::filesystem::path archive;     // extract --all-levels output
    std::filesystem::path labels;      // label CSV, created if absent
    std::filesystem::path static_dir;  // UI assets served at /; empty = built-in page
    std::string host = "127.0.0.1";
    int port = 8080;                   // 0 = any free port
    std::uint64_t seed = 0;            // per-annotator task shuffle
};

struct AnnotationTask {
    std::string cell_id;
    std::string slide_id;
};

/// HTTP API:
///   GET  /api/tasks/next?annotator=<id>  200 {cell_id, slide_id, levels:[urls], progress} | 204
///   POST /api/labels[?overwrite=1]       {cell_id, annotator_id, level} -> 204 | 400 | 404 | 409
///   GET  /api/progress[?annotator=<id>]  counts
///   GET  /patches/<slide_id>/<cell_id>_z<level>.png
///   GET  /                               static UI
class AnnotationServer {
public:
    explicit AnnotationServer(AnnotateConfig config);
    ~AnnotationServer();
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds the socket; returns the bound port. Throws RuntimeFailure.
    int bind();
    /// Serves until stop(); call bind() first.
    void serve();
    void stop();

    int z_levels() const { return z_levels_; }
    const std::vector<AnnotationTask>& tasks() const { return tasks_; }
    /// Task order for one annotator (a seeded permutation of tasks()).
    std::vector<std::size_t> order_for(const std::string& annotator) const;

private:
    struct Impl;
    AnnotateConfig config_;
    int z_levels_ = 0;
    std::vector<AnnotationTask> tasks_;
    std::map<std::string, std::size_t> task_index_;
    std::unique_ptr<LabelStore> store_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cytopipe
