#pragma once

#include <optional>

#include <json.hpp>

#include "xpod/image.hpp"

namespace xpod {

/// A detector parameter that is either one scalar for the whole panel or a
/// per-pixel map.
class PixelParam {
public:
    PixelParam(double scalar = 0.0) : scalar_(scalar) {}  // NOLINT(implicit)
    explicit PixelParam(ImageGrid map);

    bool is_map() const noexcept { return map_.has_value(); }
    double scalar() const noexcept { return scalar_; }
    const std::optional<ImageGrid>& map() const noexcept { return map_; }

    double at(std::size_t i) const { return map_ ? (*map_)[i] : scalar_; }

    /// Throws unless a per-pixel map matches the given dimensions.
    void check_shape(int width, int height, const char* what) const;

private:
    double scalar_;
    std::optional<ImageGrid> map_;
};

/// Noise, gain and blur parameters of a physical detector.
///
/// Measured signal model: y = g * Poisson(I / g) + Normal(dark_offset, sqrt(dark_var)),
/// so mean(y) = I + dark_offset and var(y) = g * I + dark_var. The gain g is
/// the reciprocal of the photon conversion factor lambda. A gain of exactly 0
/// disables shot noise (degenerate noiseless detector).
struct DetectorCalibration {
    PixelParam gain = 1.0;
    PixelParam dark_offset = 0.0;
    PixelParam dark_var = 0.0;
    double psf_sigma = 0.0;  // px

    void validate() const;
    void check_shape(int width, int height) const;
};

/// Scalar fields only; maps are persisted as separate images by the caller.
nlohmann::json calibration_scalars_to_json(const DetectorCalibration& c);
DetectorCalibration calibration_from_json(const nlohmann::json& j);

}  // namespace xpod
