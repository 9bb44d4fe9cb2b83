#include "cytopipe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "cytopipe/rng.hpp"

namespace cytopipe {

int FoldAssignment::fold_of_slide(const std::string& slide_id) const {
    const auto it = slide_fold.find(slide_id);
    if (it == slide_fold.end()) throw InvalidParameter("slide '" + slide_id + "' has no fold");
    return it->second;
}

FoldAssignment split_folds(std::span<const SlideManifest> slides, int n_folds, std::uint64_t seed) {
    std::map<std::string, Diagnosis> patients;
    for (const SlideManifest& s : slides) {
        auto [it, inserted] = patients.emplace(s.patient_id, s.diagnosis);
        if (inserted || it->second == s.diagnosis) continue;
        if (it->second == Diagnosis::unknown) {
            it->second = s.diagnosis;
        } else if (s.diagnosis != Diagnosis::unknown) {
            throw ValidationError("patient '" + s.patient_id + "' has conflicting diagnoses");
        }
    }
    if (n_folds < 2) throw InvalidParameter("need at least 2 folds");
    if (static_cast<std::size_t>(n_folds) > patients.size()) {
        throw InvalidParameter(std::to_string(n_folds) + " folds requested but only " +
                               std::to_string(patients.size()) + " patients");
    }

    FoldAssignment out;
    out.n_folds = n_folds;
    Rng rng(derive_seed(seed, "folds"));
    std::size_t counter = 0;
    for (Diagnosis cls : {Diagnosis::healthy, Diagnosis::cancer, Diagnosis::unknown}) {
        std::vector<std::string> group;
        for (const auto& [pid, d] : patients) {
            if (d == cls) group.push_back(pid);
        }
        for (std::size_t i = group.size(); i > 1; --i) {
            std::swap(group[i - 1], group[uniform_below(rng, i)]);
        }
        for (const std::string& pid : group) {
            out.patient_fold[pid] = static_cast<int>(counter++ % static_cast<std::size_t>(n_folds));
        }
    }
    for (const SlideManifest& s : slides) out.slide_fold[s.slide_id] = out.patient_fold[s.patient_id];
    return out;
}

Metrics metrics_from_confusion(const Confusion& c) {
    auto pct = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    Metrics m;
    m.accuracy = pct(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
    m.precision = pct(c.tp, c.tp + c.fp);
    m.recall = pct(c.tp, c.tp + c.fn);
    m.f1 = pct(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    return m;
}

MeanStd mean_std(std::span<const std::optional<double>> values) {
    MeanStd out;
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) continue;
        sum += *v;
        ++out.n;
    }
    if (out.n == 0) return out;
    const double mean = sum / static_cast<double>(out.n);
    double ss = 0.0;
    for (const auto& v : values) {
        if (v) ss += (*v - mean) * (*v - mean);
    }
    out.mean = mean;
    out.std = out.n > 1 ? std::sqrt(ss / static_cast<double>(out.n - 1)) : 0.0;
    return out;
}

std::string format_percent(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", *v);
    return buf;
}

std::string format_mean_std(const MeanStd& m) {
    if (!m.mean) return "n/a";
    return format_percent(m.mean) + "±" + format_percent(m.std);
}

FoldReport fold_report_from_confusions(std::span<const std::pair<int, Confusion>> folds) {
    FoldReport report;
    std::vector<std::optional<double>> acc, prec, rec, f1;
    for (const auto& [fold, c] : folds) {
        const Metrics m = metrics_from_confusion(c);
        report.folds.push_back({fold, c, m});
        acc.push_back(m.accuracy);
        prec.push_back(m.precision);
        rec.push_back(m.recall);
        f1.push_back(m.f1);
    }
    report.accuracy = mean_std(acc);
    report.precision = mean_std(prec);
    report.recall = mean_std(rec);
    report.f1 = mean_std(f1);
    return report;
}

FoldReport fold_metrics(std::span<const CellRecord> records,
                        const std::map<std::string, Diagnosis>& diagnosis, double threshold) {
    std::map<int, Confusion> by_fold;
    std::size_t skipped = 0;
    for (const CellRecord& r : records) {
        const auto it = diagnosis.find(r.slide_id);
        if (!r.class_score || !r.fold_id || it == diagnosis.end() ||
            it->second == Diagnosis::unknown) {
            ++skipped;
            continue;
        }
        Confusion& c = by_fold[*r.fold_id];
        const bool predicted = *r.class_score >= threshold;
        const bool actual = it->second == Diagnosis::cancer;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    const std::vector<std::pair<int, Confusion>> folds(by_fold.begin(), by_fold.end());
    FoldReport report = fold_report_from_confusions(folds);
    report.skipped = skipped;
    return report;
}

AggregateResult aggregate_fractions(std::vector<SlideFraction> slides) {
    AggregateResult out;
    std::sort(slides.begin(), slides.end(),
              [](const SlideFraction& a, const SlideFraction& b) { return a.slide_id < b.slide_id; });

    std::set<double> values = {0.0, 1.0};
    std::size_t labeled = 0;
    for (const SlideFraction& s : slides) {
        if (s.diagnosis == Diagnosis::unknown) continue;
        values.insert(s.fraction);
        ++labeled;
    }
    const std::vector<double> sorted(values.begin(), values.end());
    auto correct_at = [&](double t) {
        std::size_t ok = 0;
        for (const SlideFraction& s : slides) {
            if (s.diagnosis == Diagnosis::unknown) continue;
            if ((s.fraction > t) == (s.diagnosis == Diagnosis::cancer)) ++ok;
        }
        return ok;
    };
    double best_t = 0.5;
    double best_gap = -1.0;
    std::size_t best_ok = 0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const double t = 0.5 * (sorted[i] + sorted[i + 1]);
        const double gap = sorted[i + 1] - sorted[i];
        const std::size_t ok = correct_at(t);
        if (best_gap < 0.0 || ok > best_ok || (ok == best_ok && gap > best_gap)) {
            best_t = t;
            best_gap = gap;
            best_ok = ok;
        }
    }
    // t = 1 calls every slide healthy, which a midpoint misses when a fraction is 1.
    if (correct_at(1.0) > best_ok) {
        best_t = 1.0;
        best_ok = correct_at(1.0);
    }
    out.threshold = best_t;
    out.accuracy = labeled > 0 ? static_cast<double>(best_ok) / static_cast<double>(labeled) : 0.0;
    out.errors = labeled - best_ok;
    if (labeled == 0) out.warnings.push_back("no slide has a known diagnosis");
    for (SlideFraction& s : slides) s.predicted_cancer = s.fraction > best_t;
    out.slides = std::move(slides);
    return out;
}

AggregateResult aggregate_slides(std::span<const CellRecord> records,
                                 const std::map<std::string, Diagnosis>& diagnosis,
                                 double cell_threshold) {
    std::map<std::string, SlideFraction> by_slide;
    std::size_t unscored = 0;
    for (const auto& [slide_id, d] : diagnosis) by_slide[slide_id] = {slide_id, d, 0, 0, 0.0, false};
    for (const CellRecord& r : records) {
        SlideFraction& s = by_slide[r.slide_id];
        if (s.slide_id.empty()) s.slide_id = r.slide_id;
        if (!r.class_score) {
            ++unscored;
            continue;
        }
        ++s.n_cells;
        if (*r.class_score >= cell_threshold) ++s.n_malignant;
    }
    std::vector<SlideFraction> slides;
    std::vector<std::string> warnings;
    for (auto& [id, s] : by_slide) {
        if (s.n_cells == 0) {
            warnings.push_back("slide " + id + " has no scored cells; excluded");
            continue;
        }
        s.fraction = static_cast<double>(s.n_malignant) / static_cast<double>(s.n_cells);
        slides.push_back(s);
    }
    if (unscored > 0) {
        warnings.push_back(std::to_string(unscored) + " cells without a class score ignored");
    }
    AggregateResult out = aggregate_fractions(std::move(slides));
    warnings.insert(warnings.end(), out.warnings.begin(), out.warnings.end());
    out.warnings = std::move(warnings);
    return out;
}

}  // namespace cytopipe
