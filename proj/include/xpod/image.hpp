#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace xpod {

/// Row-major 2D raster of doubles with a physical pixel pitch.
///
/// Carries every per-pixel quantity in the pipeline: flatfields, expected
/// intensities, noisy acquisitions, log-corrected images, quotient and
/// contrast maps. Values are guaranteed finite.
class ImageGrid {
public:
    ImageGrid(int width, int height, double pitch_mm, double fill = 0.0);
    ImageGrid(int width, int height, double pitch_mm, std::vector<double> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double pitch() const noexcept { return pitch_; }
    std::size_t size() const noexcept { return data_.size(); }

    double at(int x, int y) const { return data_[index(x, y)]; }
    void set(int x, int y, double v);
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<const double> values() const noexcept { return data_; }

    /// Mutable access for bulk fills; callers must keep values finite.
    /// Use validate() afterwards if the source is untrusted.
    std::span<double> mutable_values() noexcept { return data_; }
    void validate() const;

    bool same_shape(const ImageGrid& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    double mean() const;

    friend bool operator==(const ImageGrid&, const ImageGrid&) = default;

private:
    std::size_t index(int x, int y) const;

    int width_;
    int height_;
    double pitch_;
    std::vector<double> data_;
};

/// Row-major boolean raster. Stored as bytes so spans are cheap.
class BinaryMask {
public:
    BinaryMask(int width, int height, bool fill = false);
    BinaryMask(int width, int height, std::vector<std::uint8_t> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }

    bool at(int x, int y) const { return data_[index(x, y)] != 0; }
    void set(int x, int y, bool v) { data_[index(x, y)] = v ? 1 : 0; }
    bool operator[](std::size_t i) const noexcept { return data_[i] != 0; }
    void set(std::size_t i, bool v) noexcept { data_[i] = v ? 1 : 0; }

    std::span<const std::uint8_t> values() const noexcept { return data_; }

    std::size_t count() const noexcept;
    bool empty_set() const noexcept { return count() == 0; }

    bool same_shape(const ImageGrid& g) const noexcept {
        return width_ == g.width() && height_ == g.height();
    }
    bool same_shape(const BinaryMask& m) const noexcept {
        return width_ == m.width_ && height_ == m.height_;
    }

    ImageGrid to_grid(double pitch_mm) const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t index(int x, int y) const;

    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

/// Pixel coordinates. Pixel (x, y) has its center at (x, y) in pixel units.
struct Pixel {
    int x = 0;
    int y = 0;
};

}  // namespace xpod
