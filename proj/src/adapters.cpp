#include "cytopipe/adapters.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "cytopipe/io.hpp"

extern char** environ;

namespace cytopipe {

namespace fs = std::filesystem;

std::vector<std::string> split_command(std::string_view command) {
    std::vector<std::string> words;
    std::string cur;
    bool in_word = false;
    bool quoted = false;
    for (char c : command) {
        if (c == '"') {
            quoted = !quoted;
            in_word = true;
        } else if (!quoted && (c == ' ' || c == '\t')) {
            if (in_word) words.push_back(std::move(cur));
            cur.clear();
            in_word = false;
        } else {
            cur += c;
            in_word = true;
        }
    }
    if (quoted) throw InvalidParameter("unbalanced quote in command: " + std::string(command));
    if (in_word) words.push_back(std::move(cur));
    if (words.empty()) throw InvalidParameter("empty adapter command");
    return words;
}

void run_command(const std::vector<std::string>& argv, std::chrono::milliseconds timeout) {
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, STDERR_FILENO, STDOUT_FILENO);
    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
        throw AdapterError("cannot start '" + argv[0] + "': " + std::strerror(rc));
    }

    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto pause = std::chrono::microseconds(200);
    int status = 0;
    while (true) {
        const pid_t done = waitpid(pid, &status, WNOHANG);
        if (done == pid) break;
        if (done < 0 && errno != EINTR) {
            throw AdapterError("waitpid failed for '" + argv[0] + "'");
        }
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            throw AdapterError("'" + argv[0] + "' timed out after " +
                               std::to_string(timeout.count()) + " ms");
        }
        std::this_thread::sleep_for(pause);
        pause = std::min(pause * 2, std::chrono::microseconds(20000));
    }
    if (WIFSIGNALED(status)) {
        throw AdapterError("'" + argv[0] + "' killed by signal " + std::to_string(WTERMSIG(status)));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw AdapterError("'" + argv[0] + "' exited with status " +
                           std::to_string(WEXITSTATUS(status)));
    }
}

ScratchDir::ScratchDir() {
    dir_ = fs::temp_directory_path() /
           ("cytopipe-" + std::to_string(getpid()) + "-" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(dir_);
}

ScratchDir::~ScratchDir() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
}

fs::path ScratchDir::next(std::string_view suffix) {
    return dir_ / ("x" + std::to_string(counter_.fetch_add(1)) + std::string(suffix));
}

fs::path PrecomputedDensityAdapter::map_path(const fs::path& dir, std::string_view slide_id,
                                             std::string_view tile_id) {
    return dir / std::string(slide_id) / (std::string(tile_id) + ".dmap");
}

DensityMap PrecomputedDensityAdapter::density_for(const SlideManifest& slide,
                                                  const TileSpec& tile) {
    const fs::path p = map_path(dir_, slide.slide_id, tile.tile_id);
    if (!fs::exists(p)) throw AdapterError("precomputed density map missing: " + p.string());
    return read_dmap(p);
}

DensityMap CommandDensityAdapter::density_for(const SlideManifest& slide, const TileSpec& tile) {
    const fs::path out = scratch_.next(".dmap");
    std::vector<std::string> argv = argv_;
    argv.push_back(tile.paths.at(static_cast<std::size_t>(slide.central_level())).string());
    argv.push_back(out.string());
    run_command(argv, timeout_);
    if (!fs::exists(out)) throw AdapterError("density adapter wrote no output for " + tile.tile_id);
    DensityMap map;
    try {
        map = read_dmap(out);
    } catch (const FormatError& e) {
        fs::remove(out);
        throw ProtocolError(std::string("density adapter output invalid: ") + e.what());
    }
    fs::remove(out);
    return map;
}

std::vector<std::optional<double>> parse_score_table(const fs::path& path,
                                                     std::span<const PatchRef> batch) {
    CsvTable table;
    try {
        table = read_csv(path, {"cell_id", "score"});
    } catch (const FormatError& e) {
        throw ProtocolError(std::string("classifier output: ") + e.what());
    }
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < batch.size(); ++i) position.emplace(batch[i].cell_id, i);
    std::vector<std::optional<double>> scores(batch.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto it = position.find(row[0]);
        if (it == position.end()) {
            throw ProtocolError("classifier returned a score for unknown cell '" + row[0] + "'");
        }
        if (scores[it->second]) {
            throw ProtocolError("classifier returned cell '" + row[0] + "' twice");
        }
        double v = 0.0;
        try {
            v = parse_double(row[1], path, r);
        } catch (const FormatError& e) {
            throw ProtocolError(e.what());
        }
        if (v < 0.0 || v > 1.0) {
            throw ProtocolError("classifier score outside [0,1] for '" + row[0] + "'");
        }
        scores[it->second] = v;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!scores[i]) throw ProtocolError("classifier omitted cell '" + batch[i].cell_id + "'");
    }
    return scores;
}

PrecomputedClassifierAdapter::PrecomputedClassifierAdapter(const fs::path& scores_csv) {
    const CsvTable t = read_csv(scores_csv, {"cell_id", "score"});
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double v = parse_double(t.rows[r][1], scores_csv, r);
        if (v < 0.0 || v > 1.0) throw FormatError("score outside [0,1] in " + scores_csv.string());
        scores_[t.rows[r][0]] = v;
    }
}

std::vector<std::optional<double>> PrecomputedClassifierAdapter::score_batch(
    std::span<const PatchRef> batch) {
    std::vector<std::optional<double>> out;
    out.reserve(batch.size());
    for (const PatchRef& p : batch) {
        const auto it = scores_.find(p.cell_id);
        out.push_back(it == scores_.end() ? std::nullopt : std::optional<double>(it->second));
    }
    return out;
}

std::vector<std::optional<double>> CommandClassifierAdapter::score_batch(
    std::span<const PatchRef> batch) {
    const fs::path in = scratch_.next(".csv");
    const fs::path out = scratch_.next(".csv");
    {
        CsvWriter w(in, {"cell_id", "path"});
        for (const PatchRef& p : batch) w.row({p.cell_id, fs::absolute(p.path).string()});
        w.close();
    }
    std::vector<std::string> argv = argv_;
    argv.push_back(in.string());
    argv.push_back(out.string());
    try {
        run_command(argv, timeout_);
    } catch (...) {
        fs::remove(in);
        throw;
    }
    fs::remove(in);
    if (!fs::exists(out)) throw AdapterError("classifier adapter wrote no output");
    auto scores = parse_score_table(out, batch);
    fs::remove(out);
    return scores;
}

std::vector<std::optional<double>> MeanIntensityClassifier::score_batch(
    std::span<const PatchRef> batch) {
    std::vector<std::optional<double>> out;
    out.reserve(batch.size());
    for (const PatchRef& p : batch) {
        const ImageU8 img = read_png(p.path);
        std::uint64_t sum = 0;
        for (std::uint8_t v : img.data()) sum += v;
        out.push_back(static_cast<double>(sum) / static_cast<double>(img.size()) / 255.0);
    }
    return out;
}

}  // namespace cytopipe
