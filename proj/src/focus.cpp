#include "cytopipe/focus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "cytopipe/io.hpp"
#include "cytopipe/raster.hpp"

namespace cytopipe {

std::vector<double> variance_of_difference(const ZStack& stack, int median_window) {
    const auto& levels = stack.levels;
    if (levels.size() < 2) {
        throw InvalidParameter("focus selection needs at least 2 levels, got " +
                               std::to_string(levels.size()));
    }
    for (const ImageU8& level : levels) {
        if (!level.same_shape(levels.front())) {
            throw InvalidParameter("z-stack levels differ in shape (cell " + stack.cell_id + ")");
        }
    }
    std::vector<ImageU8> filtered;
    filtered.reserve(levels.size());
    for (const ImageU8& level : levels) filtered.push_back(median_filter(level, median_window));

    std::vector<double> variances;
    variances.reserve(levels.size() - 1);
    for (std::size_t i = 0; i + 1 < filtered.size(); ++i) {
        const auto a = filtered[i].data();
        const auto b = filtered[i + 1].data();
        // Welford's running mean / M2 over the signed difference samples.
        double mean = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = static_cast<double>(b[j]) - static_cast<double>(a[j]);
            const double delta = d - mean;
            mean += delta / static_cast<double>(j + 1);
            m2 += delta * (d - mean);
        }
        variances.push_back(m2 / static_cast<double>(a.size()));
    }
    return variances;
}

std::vector<std::size_t> candidate_levels(std::size_t pair_index, std::size_t n_levels,
                                          int neighborhood) {
    if (neighborhood < 0) throw InvalidParameter("focus neighborhood k must be >= 0");
    if (n_levels < 2 || pair_index + 1 >= n_levels) {
        throw InvalidParameter("pair index out of range for stack");
    }
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(pair_index) - neighborhood;
    const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(pair_index) + 1 + neighborhood;
    std::vector<std::size_t> out;
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, lo);
         i <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n_levels) - 1, hi); ++i) {
        out.push_back(static_cast<std::size_t>(i));
    }
    return out;
}

FocusChoice select_focus(const ZStack& stack, const FocusParams& params) {
    FocusChoice choice;
    choice.variances = variance_of_difference(stack, params.median_window);
    choice.pair_index = static_cast<std::size_t>(
        std::max_element(choice.variances.begin(), choice.variances.end()) -
        choice.variances.begin());
    const auto candidates =
        candidate_levels(choice.pair_index, stack.levels.size(), params.neighborhood);
    std::vector<ImageU8> crops;
    crops.reserve(candidates.size());
    for (std::size_t level : candidates) crops.push_back(stack.levels[level]);
    const std::size_t best =
        pick_sharpest(std::span<const ImageU8>(crops), params.contrast_threshold);
    choice.selected_level = candidates[best];
    return choice;
}

double median_label(std::span<const int> labels) {
    if (labels.empty()) throw InvalidParameter("median of an empty label list");
    std::vector<int> sorted(labels.begin(), labels.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    if (sorted.size() % 2 == 1) return sorted[mid];
    return (static_cast<double>(sorted[mid - 1]) + sorted[mid]) / 2.0;
}

namespace {

std::vector<int> levels_of(const ExpertLabelSet& set) {
    std::vector<int> out;
    out.reserve(set.labels.size());
    for (const ExpertLabel& l : set.labels) out.push_back(l.level);
    return out;
}

}  // namespace

double focus_accuracy(std::span<const FocusPrediction> predictions,
                      std::span<const ExpertLabelSet> truth, double window) {
    if (predictions.empty()) throw InvalidParameter("no focus predictions to evaluate");
    std::unordered_map<std::string, double> gt;
    for (const ExpertLabelSet& set : truth) gt[set.cell_id] = median_label(levels_of(set));
    std::size_t hits = 0;
    for (const FocusPrediction& p : predictions) {
        const auto it = gt.find(p.cell_id);
        if (it == gt.end()) {
            throw InvalidParameter("prediction for unknown cell '" + p.cell_id + "'");
        }
        if (std::abs(p.level - it->second) <= window) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double leave_one_out_human(std::span<const ExpertLabelSet> truth, double window) {
    if (truth.empty()) throw InvalidParameter("no expert labels");
    std::set<std::string> annotators;
    for (const ExpertLabelSet& set : truth) {
        if (set.labels.size() < 2) {
            throw InvalidParameter("cell '" + set.cell_id +
                                   "' needs >= 2 annotators for leave-one-out");
        }
        for (const ExpertLabel& l : set.labels) annotators.insert(l.annotator_id);
    }
    double total = 0.0;
    std::size_t scored_annotators = 0;
    for (const std::string& a : annotators) {
        std::size_t hits = 0;
        std::size_t seen = 0;
        for (const ExpertLabelSet& set : truth) {
            std::vector<int> others;
            int own = 0;
            bool labeled = false;
            for (const ExpertLabel& l : set.labels) {
                if (l.annotator_id == a) {
                    own = l.level;
                    labeled = true;
                } else {
                    others.push_back(l.level);
                }
            }
            if (!labeled || others.empty()) continue;
            ++seen;
            if (std::abs(own - median_label(others)) <= window) ++hits;
        }
        if (seen == 0) continue;
        total += static_cast<double>(hits) / static_cast<double>(seen);
        ++scored_annotators;
    }
    return total / static_cast<double>(scored_annotators);
}

std::vector<ExpertLabelSet> read_expert_labels_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path, {"cell_id", "annotator_id", "level"});
    // cell -> (annotator -> level), preserving first-seen cell order
    std::vector<ExpertLabelSet> sets;
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const int level = parse_int(row[2], path, r);
        auto [it, inserted] = index.try_emplace(row[0], sets.size());
        if (inserted) sets.push_back({row[0], {}});
        auto& labels = sets[it->second].labels;
        auto existing = std::find_if(labels.begin(), labels.end(),
                                     [&](const ExpertLabel& l) { return l.annotator_id == row[1]; });
        if (existing != labels.end()) {
            existing->level = level;
        } else {
            labels.push_back({row[1], level});
        }
    }
    return sets;
}

std::vector<FocusPrediction> read_focus_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path, {"cell_id", "level"});
    std::vector<FocusPrediction> out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        out.push_back({table.rows[r][0], parse_int(table.rows[r][1], path, r)});
    }
    return out;
}

void write_focus_csv(const std::filesystem::path& path, std::span<const FocusPrediction> rows) {
    CsvWriter out(path, {"cell_id", "level"});
    for (const FocusPrediction& p : rows) out.row({p.cell_id, std::to_string(p.level)});
    out.close();
}

}  // namespace cytopipe
