#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "xpod/detector.hpp"
#include "xpod/image.hpp"

namespace xpod::calib {

/// Repeated acquisitions at one tube setting and exposure.
struct FlatfieldSeries {
    std::vector<ImageGrid> frames;
    double exposure_ms = 0.0;
    std::string tube_label;
    std::string level_id;
};

/// Streaming per-pixel mean and unbiased variance (Welford), so long series
/// never need to be held in memory.
class MomentAccumulator {
public:
    void add(const ImageGrid& frame);
    std::size_t count() const noexcept { return n_; }
    ImageGrid mean() const;
    /// n - 1 denominator; requires at least two frames.
    ImageGrid variance() const;

private:
    std::size_t n_ = 0;
    int width_ = 0;
    int height_ = 0;
    double pitch_ = 1.0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

struct SeriesMoments {
    ImageGrid mean;
    ImageGrid var;
    std::size_t frames = 0;
    double exposure_ms = 0.0;
    std::string tube_label;
    std::string level_id;
};

SeriesMoments series_moments(const FlatfieldSeries& series);
SeriesMoments moments_from(const MomentAccumulator& acc, double exposure_ms = 0.0,
                           std::string tube_label = {}, std::string level_id = {});

/// Darkfield (no flux) plus at least three illuminated levels.
struct CalibrationDataset {
    FlatfieldSeries darkfield;
    std::vector<FlatfieldSeries> levels;
};

struct CalibrationMoments {
    SeriesMoments dark;
    std::vector<SeriesMoments> levels;
};

/// Per-pixel result of the mean-variance regression.
struct NoiseFit {
    /// Per-pixel maps. Invalid pixels carry the scalar summary values so the
    /// maps stay usable for generation.
    DetectorCalibration per_pixel;
    BinaryMask valid;
    ImageGrid slope;      // raw fitted gain, including invalid pixels
    ImageGrid intercept;  // fitted variance at zero signal
    std::size_t n_valid = 0;
    std::size_t n_negative_gain = 0;
    std::size_t n_intercept_mismatch = 0;
    std::size_t n_degenerate = 0;
    /// Largest |intercept - dark_var| / dark_var over valid pixels.
    double max_intercept_discrepancy = 0.0;

    /// Median over valid pixels; throws if no pixel is valid.
    DetectorCalibration scalar_summary() const;
};

/// d_e and sigma_e^2 from darkfield moments; gain per pixel from ordinary
/// least squares of var(y) on mean(y) - d_e across levels. A pixel is invalid
/// when its slope is <= 0, its regression is degenerate, or its intercept
/// disagrees with the darkfield variance by more than 50% and by more than
/// three standard errors of the intercept.
NoiseFit fit_noise_params(const CalibrationMoments& moments);
NoiseFit fit_noise_params(const CalibrationDataset& dataset);

struct FluxPoint {
    double exposure_ms = 0.0;
    double mean_intensity = 0.0;  // raw, including darkfield offset
};

struct FluxFit {
    double k = 0.0;  // intensity per ms
    double residual_rms = 0.0;
    std::size_t n_points = 0;
};

/// Regression through the origin of (mean - d_e) on exposure time.
FluxFit fit_flux_coefficient(const std::vector<FluxPoint>& points, double dark_offset);

/// Kernel width of the detector blur from the spatial autocovariance of a
/// stationary noisy flatfield (or a flatfield minus its series mean).
/// Covariance at offsets up to `window` px is fitted, for r >= 1, by
/// A * exp(-r^2 / (4 sigma^2)), the autocovariance of white noise blurred by
/// a Gaussian of width sigma. Returns 0 when neighbour covariance is not
/// distinguishable from zero.
double estimate_psf_sigma(const ImageGrid& flat_noisy, int window = 4);

}  // namespace xpod::calib
