#include "xpod/image.hpp"

#include <cmath>
#include <string>

#include "xpod/error.hpp"

namespace xpod {

namespace {

void check_dims(int width, int height) {
    if (width <= 0 || height <= 0) {
        throw ValidationError("image dimensions must be positive, got " + std::to_string(width) +
                              "x" + std::to_string(height));
    }
}

}  // namespace

ImageGrid::ImageGrid(int width, int height, double pitch_mm, double fill)
    : width_(width), height_(height), pitch_(pitch_mm) {
    check_dims(width, height);
    if (!(pitch_mm > 0.0) || !std::isfinite(pitch_mm)) {
        throw ValidationError("pixel pitch must be positive and finite");
    }
    if (!std::isfinite(fill)) throw ValidationError("non-finite fill value");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

ImageGrid::ImageGrid(int width, int height, double pitch_mm, std::vector<double> data)
    : width_(width), height_(height), pitch_(pitch_mm), data_(std::move(data)) {
    check_dims(width, height);
    if (!(pitch_mm > 0.0) || !std::isfinite(pitch_mm)) {
        throw ValidationError("pixel pitch must be positive and finite");
    }
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ValidationError("image data length " + std::to_string(data_.size()) +
                              " does not match " + std::to_string(width) + "x" +
                              std::to_string(height));
    }
    validate();
}

void ImageGrid::set(int x, int y, double v) {
    if (!std::isfinite(v)) throw ValidationError("non-finite pixel value");
    data_[index(x, y)] = v;
}

void ImageGrid::validate() const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw ValidationError("non-finite pixel value at index " + std::to_string(i));
        }
    }
}

double ImageGrid::mean() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s / static_cast<double>(data_.size());
}

std::size_t ImageGrid::index(int x, int y) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) {
        throw ValidationError("pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                              ") out of bounds");
    }
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
}

BinaryMask::BinaryMask(int width, int height, bool fill) : width_(width), height_(height) {
    check_dims(width, height);
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
                 fill ? 1 : 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ValidationError("mask data length does not match dimensions");
    }
    for (auto& v : data_) v = v ? 1 : 0;
}

std::size_t BinaryMask::count() const noexcept {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
}

ImageGrid BinaryMask::to_grid(double pitch_mm) const {
    std::vector<double> d(data_.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = data_[i] ? 1.0 : 0.0;
    return ImageGrid(width_, height_, pitch_mm, std::move(d));
}

std::size_t BinaryMask::index(int x, int y) const {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) {
        throw ValidationError("mask pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                              ") out of bounds");
    }
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
}

}  // namespace xpod
