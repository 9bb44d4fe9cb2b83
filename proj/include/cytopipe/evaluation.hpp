#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cytopipe/manifest.hpp"
#include "cytopipe/pipeline.hpp"

namespace cytopipe {

// ---------------------------------------------------------------------------
// Patient-level folds
// ---------------------------------------------------------------------------

struct FoldAssignment {
    int n_folds = 0;
    std::map<std::string, int> patient_fold;  // patient_id -> fold
    std::map<std::string, int> slide_fold;    // slide_id -> fold

    int fold_of_slide(const std::string& slide_id) const;
};

/// Deterministic for a given seed. Patients are shuffled within each
/// diagnosis and dealt round-robin with one counter running across classes.
/// Throws InvalidParameter when n_folds < 2 or n_folds exceeds the patient
/// count, and ValidationError when one patient has conflicting diagnoses.
FoldAssignment split_folds(std::span<const SlideManifest> slides, int n_folds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Cell-level metrics (positive class = cancer)
// ---------------------------------------------------------------------------

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
};

/// Percentages; nullopt where the denominator is zero.
struct Metrics {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

Metrics metrics_from_confusion(const Confusion& c);

struct MeanStd {
    std::optional<double> mean;
    std::optional<double> std;  // sample std; 0 for a single value
    std::size_t n = 0;          // folds where the metric is defined
};

MeanStd mean_std(std::span<const std::optional<double>> values);

/// "81.6±0.7" (one decimal), or "n/a" when undefined.
std::string format_mean_std(const MeanStd& m);
std::string format_percent(const std::optional<double>& v);

struct FoldResult {
    int fold = 0;
    Confusion confusion;
    Metrics metrics;
};

struct FoldReport {
    std::vector<FoldResult> folds;  // ascending fold id
    MeanStd accuracy;
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
    std::size_t skipped = 0;  // records without score, fold or known diagnosis
};

/// score >= threshold predicts cancer. diagnosis maps slide_id to label.
FoldReport fold_metrics(std::span<const CellRecord> records,
                        const std::map<std::string, Diagnosis>& diagnosis,
                        double threshold = 0.5);

FoldReport fold_report_from_confusions(std::span<const std::pair<int, Confusion>> folds);

// ---------------------------------------------------------------------------
// Slide-level aggregation
// ---------------------------------------------------------------------------

struct SlideFraction {
    std::string slide_id;
    Diagnosis diagnosis = Diagnosis::unknown;
    std::size_t n_cells = 0;
    std::size_t n_malignant = 0;
    double fraction = 0.0;
    bool predicted_cancer = false;
};

struct AggregateResult {
    std::vector<SlideFraction> slides;  // sorted by slide_id
    double threshold = 0.5;             // slide is cancer iff fraction > threshold
    double accuracy = 0.0;              // over slides with a known diagnosis
    std::size_t errors = 0;
    std::vector<std::string> warnings;
};

/// Fractions of cells with score >= cell_threshold per slide, and the
/// separating threshold maximising slide accuracy. Candidates are midpoints
/// between consecutive distinct values of {0, fractions, 1}, plus 1 itself;
/// ties go to the widest gap, then the lower threshold.
AggregateResult aggregate_slides(std::span<const CellRecord> records,
                                 const std::map<std::string, Diagnosis>& diagnosis,
                                 double cell_threshold = 0.5);

AggregateResult aggregate_fractions(std::vector<SlideFraction> slides);

}  // namespace cytopipe
