#include "cytopipe/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cytopipe {

namespace {

template <typename T>
inline void sort2(T& a, T& b) {
    const T lo = std::min(a, b);
    b = std::max(a, b);
    a = lo;
}

// 19-exchange median-of-9 network.
template <typename T>
inline T median9(T p[9]) {
    sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
    sort2(p[0], p[1]); sort2(p[3], p[4]); sort2(p[6], p[7]);
    sort2(p[1], p[2]); sort2(p[4], p[5]); sort2(p[7], p[8]);
    sort2(p[0], p[3]); sort2(p[5], p[8]); sort2(p[4], p[7]);
    sort2(p[3], p[6]); sort2(p[1], p[4]); sort2(p[2], p[5]);
    sort2(p[4], p[7]); sort2(p[4], p[2]); sort2(p[6], p[4]);
    sort2(p[4], p[2]);
    return p[4];
}

// Replicate-padded copy of one channel: (w + 2r) x (h + 2r).
template <typename T>
std::vector<T> padded_channel(const Image<T>& img, int c, int r) {
    const int pw = img.width() + 2 * r;
    const int ph = img.height() + 2 * r;
    std::vector<T> out(static_cast<std::size_t>(pw) * ph);
    for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
            out[static_cast<std::size_t>(y) * pw + x] = img.clamped(x - r, y - r, c);
        }
    }
    return out;
}

// (first source index, weights) per output index along one axis.
struct AxisWeights {
    std::vector<int> first;
    std::vector<std::vector<double>> weights;
};

AxisWeights area_weights(int in, int out) {
    AxisWeights aw;
    aw.first.resize(static_cast<std::size_t>(out));
    aw.weights.resize(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double lo = o * scale;
        const double hi = (o + 1) * scale;
        const int i0 = static_cast<int>(std::floor(lo));
        const int i1 = std::min(in - 1, static_cast<int>(std::ceil(hi)) - 1);
        aw.first[o] = i0;
        auto& w = aw.weights[o];
        for (int i = i0; i <= i1; ++i) {
            const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
            w.push_back(std::max(0.0, overlap) / scale);
        }
    }
    return aw;
}

template <typename T>
T store(double v) {
    if constexpr (std::is_same_v<T, std::uint8_t>) {
        return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    } else {
        return static_cast<T>(v);
    }
}

}  // namespace

template <typename T>
Image<T> median_filter(const Image<T>& img, int m) {
    if (m < 1 || m % 2 == 0) {
        throw InvalidParameter("median window must be odd and >= 1, got " + std::to_string(m));
    }
    if (m == 1) return img;
    const int r = m / 2;
    const int w = img.width();
    const int h = img.height();
    const int pw = w + 2 * r;
    Image<T> out(w, h, img.channels());
    std::vector<T> window(static_cast<std::size_t>(m) * m);
    const std::size_t mid = window.size() / 2;
    for (int c = 0; c < img.channels(); ++c) {
        const std::vector<T> pad = padded_channel(img, c, r);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                std::size_t n = 0;
                for (int dy = 0; dy < m; ++dy) {
                    const T* row = pad.data() + static_cast<std::size_t>(y + dy) * pw + x;
                    for (int dx = 0; dx < m; ++dx) window[n++] = row[dx];
                }
                T value;
                if (m == 3) {
                    value = median9(window.data());
                } else {
                    std::nth_element(window.begin(), window.begin() + mid, window.end());
                    value = window[mid];
                }
                out.at(x, y, c) = value;
            }
        }
    }
    return out;
}

BinaryMask dilate_disk(const BinaryMask& mask, int radius) {
    if (radius < 0) throw InvalidParameter("dilation radius must be >= 0");
    if (radius == 0) return mask;
    const int w = mask.width();
    const int h = mask.height();
    // half_width[dy + r] = largest dx with dx^2 + dy^2 <= r^2
    std::vector<int> half_width(static_cast<std::size_t>(2 * radius + 1));
    for (int dy = -radius; dy <= radius; ++dy) {
        int dx = 0;
        while ((dx + 1) * (dx + 1) + dy * dy <= radius * radius) ++dx;
        half_width[static_cast<std::size_t>(dy + radius)] = dx;
    }
    BinaryMask out(w, h);
    auto bits = out.bits();
    for (int y = 0; y < h; ++y) {
        int x = 0;
        while (x < w) {
            if (!mask.test(x, y)) {
                ++x;
                continue;
            }
            const int run_start = x;
            while (x < w && mask.test(x, y)) ++x;
            const int run_end = x - 1;
            // A disk swept along a horizontal run covers a span per row.
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                const int hw = half_width[static_cast<std::size_t>(dy + radius)];
                const int x0 = std::max(0, run_start - hw);
                const int x1 = std::min(w - 1, run_end + hw);
                std::fill(bits.begin() + static_cast<std::ptrdiff_t>(yy) * w + x0,
                          bits.begin() + static_cast<std::ptrdiff_t>(yy) * w + x1 + 1, 1);
            }
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw InvalidParameter("gaussian sigma must be > 0");
    }
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

ImageF32 gaussian_blur(const ImageF32& img, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    const int w = img.width();
    const int h = img.height();
    const int ch = img.channels();
    std::vector<double> tmp(img.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    acc += k[static_cast<std::size_t>(i + r)] * img.clamped(x + i, y, c);
                }
                tmp[img.index(x, y, c)] = acc;
            }
        }
    }
    ImageF32 out(w, h, ch);
    const std::size_t stride = static_cast<std::size_t>(w) * ch;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                const std::size_t col = static_cast<std::size_t>(x) * ch + c;
                for (int i = -r; i <= r; ++i) {
                    const int yy = std::clamp(y + i, 0, h - 1);
                    acc += k[static_cast<std::size_t>(i + r)] * tmp[yy * stride + col];
                }
                out.at(x, y, c) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

template <typename T>
Image<T> resize_area(const Image<T>& img, int out_width, int out_height) {
    if (out_width < 1 || out_height < 1) {
        throw InvalidParameter("resize target must be >= 1x1");
    }
    if (out_width == img.width() && out_height == img.height()) return img;
    const int ch = img.channels();
    const AxisWeights wx = area_weights(img.width(), out_width);
    const AxisWeights wy = area_weights(img.height(), out_height);
    // Horizontal pass into doubles, then vertical.
    std::vector<double> tmp(static_cast<std::size_t>(out_width) * img.height() * ch);
    for (int y = 0; y < img.height(); ++y) {
        for (int ox = 0; ox < out_width; ++ox) {
            const auto& ws = wx.weights[ox];
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < ws.size(); ++i) {
                    acc += ws[i] * img.at(wx.first[ox] + static_cast<int>(i), y, c);
                }
                tmp[(static_cast<std::size_t>(y) * out_width + ox) * ch + c] = acc;
            }
        }
    }
    Image<T> out(out_width, out_height, ch);
    for (int oy = 0; oy < out_height; ++oy) {
        const auto& ws = wy.weights[oy];
        for (int ox = 0; ox < out_width; ++ox) {
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < ws.size(); ++i) {
                    const std::size_t y = static_cast<std::size_t>(wy.first[oy]) + i;
                    acc += ws[i] * tmp[(y * out_width + ox) * ch + c];
                }
                out.at(ox, oy, c) = store<T>(acc);
            }
        }
    }
    return out;
}

ImageF32 normalize(const ImageF32& img, float mean, float std_dev) {
    if (!(std_dev > 0.0f)) throw InvalidParameter("normalize: std must be > 0");
    ImageF32 out = img;
    for (float& v : out.data()) v = (v - mean) / std_dev;
    return out;
}

std::vector<Component> connected_components(const BinaryMask& mask) {
    std::vector<Component> comps;
    const int w = mask.width();
    const int h = mask.height();
    if (w == 0 || h == 0) return comps;
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(w) * h, 0);
    std::vector<int> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
            if (seen[i0] || !mask.test(x0, y0)) continue;
            Component comp;
            double sx = 0.0;
            double sy = 0.0;
            seen[i0] = 1;
            stack.assign(1, static_cast<int>(i0));
            while (!stack.empty()) {
                const int idx = stack.back();
                stack.pop_back();
                const int x = idx % w;
                const int y = idx / w;
                ++comp.pixel_count;
                sx += x;
                sy += y;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx;
                        const int ny = y + dy;
                        if (!mask.contains(nx, ny)) continue;
                        const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (seen[ni] || !mask.test(nx, ny)) continue;
                        seen[ni] = 1;
                        stack.push_back(static_cast<int>(ni));
                    }
                }
            }
            comp.centroid_x = sx / static_cast<double>(comp.pixel_count);
            comp.centroid_y = sy / static_cast<double>(comp.pixel_count);
            comps.push_back(comp);
        }
    }
    return comps;
}

BinaryMask threshold_mask(const ImageF32& img, float threshold) {
    BinaryMask mask(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img.at(x, y, 0) >= threshold) mask.set(x, y);
        }
    }
    return mask;
}

ImageF32 to_f32(const ImageU8& img) {
    std::vector<float> data(img.data().begin(), img.data().end());
    return ImageF32(img.width(), img.height(), img.channels(), std::move(data));
}

ImageU8 to_u8(const ImageF32& img) {
    std::vector<std::uint8_t> data(img.size());
    std::transform(img.data().begin(), img.data().end(), data.begin(),
                   [](float v) { return store<std::uint8_t>(v); });
    return ImageU8(img.width(), img.height(), img.channels(), std::move(data));
}

template <typename T>
ImageF32 to_luminance(const Image<T>& img) {
    ImageF32 out(img.width(), img.height(), 1);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            if (img.channels() == 1) {
                out.at(x, y) = static_cast<float>(img.at(x, y, 0));
            } else {
                out.at(x, y) = static_cast<float>(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                                                  0.114 * img.at(x, y, 2));
            }
        }
    }
    return out;
}

template ImageU8 median_filter(const ImageU8&, int);
template ImageF32 median_filter(const ImageF32&, int);
template ImageU8 resize_area(const ImageU8&, int, int);
template ImageF32 resize_area(const ImageF32&, int, int);
template ImageF32 to_luminance(const ImageU8&);
template ImageF32 to_luminance(const ImageF32&);

}  // namespace cytopipe
