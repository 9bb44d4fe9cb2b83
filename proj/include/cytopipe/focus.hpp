#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cytopipe/blur.hpp"
#include "cytopipe/image.hpp"

namespace cytopipe {

/// N co-registered crops of one nucleus at equidistant focus levels, ordered
/// from the lowest to the highest z.
struct ZStack {
    std::string cell_id;
    double z_step_um = 0.4;
    std::vector<ImageU8> levels;
};

struct FocusParams {
    int median_window = 3;
    int neighborhood = 0;  // k: the blur metric chooses among 2(k+1) levels
    double contrast_threshold = kDefaultContrastThreshold;
};

struct FocusChoice {
    std::size_t pair_index = 0;      // argmax of variances (first max)
    std::size_t selected_level = 0;  // level chosen by the blur metric
    std::vector<double> variances;   // N-1 entries
};

/// Population variance of each consecutive difference P[i+1] - P[i] after a
/// per-channel median filter; channels are pooled into one sample set.
std::vector<double> variance_of_difference(const ZStack& stack, int median_window);

/// Levels {l-k, ..., l+1+k} clipped to [0, n_levels-1].
std::vector<std::size_t> candidate_levels(std::size_t pair_index, std::size_t n_levels,
                                          int neighborhood);

/// Largest-variance pair, then the sharpest of the candidate levels on the
/// unfiltered crops.
FocusChoice select_focus(const ZStack& stack, const FocusParams& params = {});

// ---------------------------------------------------------------------------
// Evaluation against expert labels
// ---------------------------------------------------------------------------

struct ExpertLabel {
    std::string annotator_id;
    int level = 0;
};

struct ExpertLabelSet {
    std::string cell_id;
    std::vector<ExpertLabel> labels;
};

struct FocusPrediction {
    std::string cell_id;
    int level = 0;
};

/// Middle value; an even count gives the mean of the two middle values.
double median_label(std::span<const int> labels);

/// Fraction of predictions within `window` levels of the median expert label.
double focus_accuracy(std::span<const FocusPrediction> predictions,
                      std::span<const ExpertLabelSet> truth, double window = 2.0);

/// Each annotator scored against the median of the others, averaged over annotators.
double leave_one_out_human(std::span<const ExpertLabelSet> truth, double window = 2.0);

/// `cell_id,annotator_id,level`; a repeated (cell, annotator) keeps the last row.
std::vector<ExpertLabelSet> read_expert_labels_csv(const std::filesystem::path& path);

/// `cell_id,level`
std::vector<FocusPrediction> read_focus_csv(const std::filesystem::path& path);
void write_focus_csv(const std::filesystem::path& path, std::span<const FocusPrediction> rows);

}  // namespace cytopipe
