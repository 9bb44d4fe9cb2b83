#pragma once

// Uniform bucket grid over integer points for nearest-neighbour and radius
// queries. Private to the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "cytopipe/groundtruth.hpp"

namespace cytopipe::detail {

inline std::int64_t squared_distance(Point a, Point b) {
    const std::int64_t dx = static_cast<std::int64_t>(a.x) - b.x;
    const std::int64_t dy = static_cast<std::int64_t>(a.y) - b.y;
    return dx * dx + dy * dy;
}

class PointGrid {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    explicit PointGrid(std::span<const Point> points, int cell = 0) : points_(points) {
        if (points.empty()) return;
        int max_x = points[0].x, max_y = points[0].y;
        min_x_ = points[0].x;
        min_y_ = points[0].y;
        for (const Point& p : points) {
            min_x_ = std::min(min_x_, p.x);
            min_y_ = std::min(min_y_, p.y);
            max_x = std::max(max_x, p.x);
            max_y = std::max(max_y, p.y);
        }
        if (cell <= 0) {
            const double area = (static_cast<double>(max_x - min_x_) + 1.0) * (max_y - min_y_ + 1.0);
            cell = static_cast<int>(std::ceil(std::sqrt(area / static_cast<double>(points.size())) * 2.0));
        }
        cell_ = std::max(cell, 4);
        nx_ = (max_x - min_x_) / cell_ + 1;
        ny_ = (max_y - min_y_) / cell_ + 1;
        buckets_.resize(static_cast<std::size_t>(nx_) * ny_);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto [cx, cy] = cell_of(points[i]);
            buckets_[static_cast<std::size_t>(cy) * nx_ + cx].push_back(i);
        }
    }

    /// Index of the nearest point; equal distances resolve to the lower index.
    std::size_t nearest(Point q) const {
        if (points_.empty()) return npos;
        const auto [qx, qy] = cell_of(q);
        const int max_ring = std::max({std::abs(qx), std::abs(qx - (nx_ - 1)), std::abs(qy),
                                       std::abs(qy - (ny_ - 1))});
        std::size_t best = npos;
        std::int64_t best_d2 = 0;
        for (int k = 0; k <= max_ring; ++k) {
            if (best != npos) {
                const std::int64_t reach = static_cast<std::int64_t>(k - 1) * cell_;
                // every point in ring k is at distance >= (k-1)*cell
                if (k >= 1 && reach * reach > best_d2) break;
            }
            visit_ring(qx, qy, k, [&](std::size_t i) {
                const std::int64_t d2 = squared_distance(points_[i], q);
                if (best == npos || d2 < best_d2 || (d2 == best_d2 && i < best)) {
                    best = i;
                    best_d2 = d2;
                }
            });
        }
        return best;
    }

    /// Calls fn(index) for every point with squared distance <= r2.
    template <typename Fn>
    void for_each_within(Point q, std::int64_t r2, Fn&& fn) const {
        if (points_.empty()) return;
        const int r = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(r2))));
        const auto [x0, y0] = cell_of({q.x - r, q.y - r});
        const auto [x1, y1] = cell_of({q.x + r, q.y + r});
        for (int cy = std::max(0, y0); cy <= std::min(ny_ - 1, y1); ++cy) {
            for (int cx = std::max(0, x0); cx <= std::min(nx_ - 1, x1); ++cx) {
                for (std::size_t i : buckets_[static_cast<std::size_t>(cy) * nx_ + cx]) {
                    if (squared_distance(points_[i], q) <= r2) fn(i);
                }
            }
        }
    }

private:
    std::pair<int, int> cell_of(Point p) const {
        const auto fdiv = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
        return {fdiv(p.x - min_x_, cell_), fdiv(p.y - min_y_, cell_)};
    }

    template <typename Fn>
    void visit_ring(int qx, int qy, int k, Fn&& fn) const {
        auto visit = [&](int cx, int cy) {
            if (cx < 0 || cy < 0 || cx >= nx_ || cy >= ny_) return;
            for (std::size_t i : buckets_[static_cast<std::size_t>(cy) * nx_ + cx]) fn(i);
        };
        if (k == 0) {
            visit(qx, qy);
            return;
        }
        for (int dx = -k; dx <= k; ++dx) {
            visit(qx + dx, qy - k);
            visit(qx + dx, qy + k);
        }
        for (int dy = -k + 1; dy <= k - 1; ++dy) {
            visit(qx - k, qy + dy);
            visit(qx + k, qy + dy);
        }
    }

    std::span<const Point> points_;
    int cell_ = 1;
    int min_x_ = 0;
    int min_y_ = 0;
    int nx_ = 0;
    int ny_ = 0;
    std::vector<std::vector<std::size_t>> buckets_;
};

}  // namespace cytopipe::detail
