#include "cytopipe/blur.hpp"

#include <cmath>
#include <string>

#include "cytopipe/raster.hpp"

namespace cytopipe {

namespace {

// Walks one scan line of n samples (L[i * stride]) and emits edge samples.
template <typename Emit>
void scan_line(const float* line, int n, int stride, Emit&& emit) {
    if (n < 2) return;
    std::vector<double> g(static_cast<std::size_t>(n - 1));
    for (int i = 0; i + 1 < n; ++i) {
        g[i] = static_cast<double>(line[(i + 1) * stride]) - static_cast<double>(line[i * stride]);
    }
    const int m = n - 1;
    int i = 0;
    while (i < m) {
        if (g[i] == 0.0) {
            ++i;
            continue;
        }
        const bool rising = g[i] > 0.0;
        const int p = i;
        int q = i;
        while (q + 1 < m && g[q + 1] != 0.0 && (g[q + 1] > 0.0) == rising) ++q;
        const double contrast =
            std::abs(static_cast<double>(line[(q + 1) * stride]) - line[p * stride]);
        const int width = q + 1 - p;
        // Plateau-aware local maxima of |g| inside the run [p, q].
        int j = p;
        while (j <= q) {
            int k = j;
            while (k + 1 <= q && g[k + 1] == g[j]) ++k;
            const double mag = std::abs(g[j]);
            const bool above_left = j == p || mag > std::abs(g[j - 1]);
            const bool above_right = k == q || mag > std::abs(g[k + 1]);
            if (above_left && above_right) emit((j + k) / 2, contrast, width);
            j = k + 1;
        }
        i = q + 1;
    }
}

}  // namespace

std::vector<EdgeSample> scan_edges(const ImageF32& lum) {
    if (lum.channels() != 1) throw InvalidParameter("scan_edges expects a luminance image");
    std::vector<EdgeSample> edges;
    const int w = lum.width();
    const int h = lum.height();
    const float* base = lum.data().data();
    for (int y = 0; y < h; ++y) {
        scan_line(base + static_cast<std::size_t>(y) * w, w, 1, [&](int pos, double c, int width) {
            edges.push_back({pos, y, ScanAxis::row, c, width});
        });
    }
    for (int x = 0; x < w; ++x) {
        scan_line(base + x, h, w, [&](int pos, double c, int width) {
            edges.push_back({x, pos, ScanAxis::column, c, width});
        });
    }
    return edges;
}

template <typename T>
BlurScore embm_score(const Image<T>& patch, double contrast_threshold) {
    if (patch.width() < kEmbmMinSide || patch.height() < kEmbmMinSide) {
        throw InvalidParameter("blur metric needs a patch of at least 8x8, got " +
                               std::to_string(patch.width()) + "x" +
                               std::to_string(patch.height()));
    }
    if (!(contrast_threshold > 0.0)) throw InvalidParameter("contrast threshold must be > 0");
    BlurScore score;
    double sum = 0.0;
    for (const EdgeSample& e : scan_edges(to_luminance(patch))) {
        if (e.contrast < contrast_threshold) continue;
        sum += std::min(1.0, jnb_width(e.contrast) / e.width);
        ++score.salient_edge_count;
    }
    if (score.salient_edge_count > 0) {
        score.value = kEmbmScale * sum / static_cast<double>(score.salient_edge_count);
    }
    return score;
}

template <typename T>
std::size_t pick_sharpest(std::span<const Image<T>> candidates, double contrast_threshold) {
    if (candidates.empty()) throw InvalidParameter("pick_sharpest needs at least one candidate");
    std::size_t best = 0;
    double best_value = embm_score(candidates[0], contrast_threshold).value;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double v = embm_score(candidates[i], contrast_threshold).value;
        if (v > best_value) {
            best = i;
            best_value = v;
        }
    }
    return best;
}

template BlurScore embm_score(const ImageU8&, double);
template BlurScore embm_score(const ImageF32&, double);
template std::size_t pick_sharpest(std::span<const ImageU8>, double);
template std::size_t pick_sharpest(std::span<const ImageF32>, double);

}  // namespace cytopipe
