#include "xpod/detector.hpp"

#include <cmath>
#include <string>

#include "xpod/error.hpp"

namespace xpod {

using nlohmann::json;

PixelParam::PixelParam(ImageGrid map) : scalar_(map.mean()), map_(std::move(map)) {}

void PixelParam::check_shape(int width, int height, const char* what) const {
    if (map_ && (map_->width() != width || map_->height() != height)) {
        throw ValidationError(std::string("per-pixel ") + what + " map is " +
                              std::to_string(map_->width()) + "x" +
                              std::to_string(map_->height()) + ", detector is " +
                              std::to_string(width) + "x" + std::to_string(height));
    }
}

namespace {

template <class Pred>
void check_all(const PixelParam& p, Pred ok, const char* message) {
    if (p.is_map()) {
        for (double v : p.map()->values()) {
            if (!ok(v)) throw ValidationError(message);
        }
    } else if (!ok(p.scalar())) {
        throw ValidationError(message);
    }
}

}  // namespace

void DetectorCalibration::validate() const {
    check_all(gain, [](double v) { return v >= 0.0 && std::isfinite(v); },
              "detector gain must be >= 0");
    check_all(dark_var, [](double v) { return v >= 0.0 && std::isfinite(v); },
              "darkfield variance must be >= 0");
    check_all(dark_offset, [](double v) { return std::isfinite(v); },
              "darkfield offset must be finite");
    if (!(psf_sigma >= 0.0) || !std::isfinite(psf_sigma)) {
        throw ValidationError("psf_sigma must be >= 0");
    }
}

void DetectorCalibration::check_shape(int width, int height) const {
    gain.check_shape(width, height, "gain");
    dark_offset.check_shape(width, height, "dark offset");
    dark_var.check_shape(width, height, "dark variance");
}

json calibration_scalars_to_json(const DetectorCalibration& c) {
    return {{"gain", c.gain.scalar()},
            {"dark_offset", c.dark_offset.scalar()},
            {"dark_var", c.dark_var.scalar()},
            {"psf_sigma", c.psf_sigma}};
}

DetectorCalibration calibration_from_json(const json& j) {
    DetectorCalibration c;
    try {
        c.gain = j.at("gain").get<double>();
        c.dark_offset = j.at("dark_offset").get<double>();
        c.dark_var = j.at("dark_var").get<double>();
        c.psf_sigma = j.value("psf_sigma", 0.0);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed calibration: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace xpod
