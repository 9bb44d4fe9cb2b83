#include "cytopipe/groundtruth.hpp"

#include <string>

#include "cytopipe/io.hpp"
#include "cytopipe/raster.hpp"

namespace cytopipe {

BinaryMask annotation_mask(const PointAnnotation& ann) {
    if (ann.width < 1 || ann.height < 1) {
        throw InvalidAnnotation("annotation frame must be >= 1x1");
    }
    BinaryMask mask(ann.width, ann.height);
    for (const Point& p : ann.points) {
        if (!mask.contains(p.x, p.y)) {
            throw InvalidAnnotation("point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                    ") outside " + std::to_string(ann.width) + "x" +
                                    std::to_string(ann.height) + " frame");
        }
        mask.set(p.x, p.y);
    }
    return mask;
}

DensityMap dilated_target(const PointAnnotation& ann, int radius) {
    const BinaryMask dilated = dilate_disk(annotation_mask(ann), radius);
    DensityMap out(ann.width, ann.height, 1);
    auto bits = dilated.bits();
    auto data = out.data();
    for (std::size_t i = 0; i < bits.size(); ++i) data[i] = bits[i] ? 1.0f : 0.0f;
    return out;
}

DensityMap make_fuzzy_gt(const PointAnnotation& ann, int radius, double sigma) {
    return gaussian_blur(dilated_target(ann, radius), sigma);
}

template <typename T>
std::pair<Image<T>, DensityMap> resize_gt_pair(const Image<T>& img, const DensityMap& gt,
                                               int out_width, int out_height) {
    if (img.width() != gt.width() || img.height() != gt.height()) {
        throw InvalidParameter("image and ground truth dimensions differ: " +
                               std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                               " vs " + std::to_string(gt.width()) + "x" +
                               std::to_string(gt.height()));
    }
    return {resize_area(img, out_width, out_height), resize_area(gt, out_width, out_height)};
}

template <typename T>
std::pair<Image<T>, DensityMap> prepare_training_pair(const Image<T>& img,
                                                      const PointAnnotation& ann, int radius,
                                                      double sigma, int out_width,
                                                      int out_height) {
    auto [small_img, small_gt] =
        resize_gt_pair(img, dilated_target(ann, radius), out_width, out_height);
    return {std::move(small_img), gaussian_blur(small_gt, sigma)};
}

std::vector<Point> read_points_csv(const std::filesystem::path& path) {
    const CsvTable table = read_csv(path, {"x", "y"});
    std::vector<Point> points;
    points.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        points.push_back({parse_int(table.rows[i][0], path, i), parse_int(table.rows[i][1], path, i)});
    }
    return points;
}

void write_points_csv(const std::filesystem::path& path, const std::vector<Point>& points) {
    CsvWriter out(path, {"x", "y"});
    for (const Point& p : points) out.row({std::to_string(p.x), std::to_string(p.y)});
    out.close();
}

template std::pair<ImageU8, DensityMap> resize_gt_pair(const ImageU8&, const DensityMap&, int, int);
template std::pair<ImageF32, DensityMap> resize_gt_pair(const ImageF32&, const DensityMap&, int,
                                                        int);
template std::pair<ImageU8, DensityMap> prepare_training_pair(const ImageU8&,
                                                              const PointAnnotation&, int, double,
                                                              int, int);
template std::pair<ImageF32, DensityMap> prepare_training_pair(const ImageF32&,
                                                               const PointAnnotation&, int,
                                                               double, int, int);

}  // namespace cytopipe
