#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cytopipe/error.hpp"

namespace cytopipe {

/// Row-major, channel-interleaved 2-D image. A default-constructed image is
/// empty; every constructed image has width, height >= 1 and 1 or 3 channels.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;

    Image(int width, int height, int channels, T fill = T{})
        : width_(width), height_(height), channels_(channels) {
        check_dims();
        data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    Image(int width, int height, int channels, std::vector<T> data)
        : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
        check_dims();
        if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
            throw InvalidParameter("image data length does not match width*height*channels");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return data_.empty(); }

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
    const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

    // Edge-replicated read.
    const T& clamped(int x, int y, int c = 0) const {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), c);
    }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& buffer() { return data_; }
    const std::vector<T>& buffer() const { return data_; }

    bool same_shape(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
    }

    bool operator==(const Image&) const = default;

private:
    void check_dims() const {
        if (width_ < 1 || height_ < 1) {
            throw InvalidParameter("image dimensions must be >= 1, got " + std::to_string(width_) +
                                   "x" + std::to_string(height_));
        }
        if (channels_ != 1 && channels_ != 3) {
            throw InvalidParameter("image must have 1 or 3 channels, got " +
                                   std::to_string(channels_));
        }
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using ImageU8 = Image<std::uint8_t>;
using ImageF32 = Image<float>;

/// One byte per pixel, nonzero = set.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(int width, int height) : width_(width), height_(height) {
        if (width < 1 || height < 1) throw InvalidParameter("mask dimensions must be >= 1");
        bits_.assign(static_cast<std::size_t>(width) * height, 0);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

    bool test(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool value = true) {
        bits_[static_cast<std::size_t>(y) * width_ + x] = value ? 1 : 0;
    }

    std::size_t count() const {
        return static_cast<std::size_t>(std::count_if(bits_.begin(), bits_.end(),
                                                      [](std::uint8_t b) { return b != 0; }));
    }

    std::span<const std::uint8_t> bits() const { return bits_; }
    std::span<std::uint8_t> bits() { return bits_; }

    bool operator==(const BinaryMask&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

}  // namespace cytopipe
