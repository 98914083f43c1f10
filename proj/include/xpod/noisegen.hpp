#pragma once

#include <optional>
#include <vector>

#include "xpod/detector.hpp"
#include "xpod/image.hpp"
#include "xpod/random.hpp"

namespace xpod::noise {

struct NoiseOptions {
    /// Poisson rates above this use the rounded Gaussian approximation.
    double poisson_gauss_threshold = RandomStream::kDefaultPoissonGaussThreshold;
};

/// Draws one acquisition y = g * Poisson(I / g) + Normal(d_e, sigma_e) per
/// pixel, in row-major order from a single stream. Expected intensity must be
/// non-negative. Output is not clamped: electronic noise can go below d_e.
ImageGrid sample_noisy(const ImageGrid& expected, const DetectorCalibration& calib, SeedSpec seed,
                       const NoiseOptions& options = {});

/// Normalized 1D Gaussian taps for offsets -r..r, r = ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with half-sample symmetric edge reflection
/// (edge pixel repeated). This boundary rule preserves the image sum exactly
/// up to rounding. sigma = 0 returns the input.
ImageGrid blur(const ImageGrid& image, double sigma);

/// Expected intensity at exposure t from one at t_ref: I * t / t_ref.
ImageGrid scale_exposure(const ImageGrid& reference, double t_ref_ms, double t_ms);

struct GenerationRequest {
    ImageGrid reference;  // high-quality raw acquisition y_ref (includes d_e)
    double ref_exposure_ms = 1000.0;
    double target_exposure_ms = 100.0;
    /// Calibrated k. Used only when GenerationOptions::normalize_to_flux is set.
    double flux_coefficient = 0.0;
    DetectorCalibration calib;
    SeedSpec seed;
    bool apply_blur = true;
};

struct GenerationOptions {
    /// Reference must satisfy mean(y - d_e) >= quality_factor * sqrt(g mean + sigma_e^2)
    /// over the object-free region.
    double quality_factor = 100.0;
    /// Throw on a low-quality reference; otherwise report it in the result.
    bool strict = true;
    /// Blur the expected intensity before sampling instead of the noisy image.
    bool blur_before_noise = false;
    /// Rescale so the reference's object-free level maps to k * t instead of
    /// scaling by t / t_ref.
    bool normalize_to_flux = false;
    /// Object-free region; by default the pixels within 10% of the bright
    /// (99th percentile) level.
    std::optional<BinaryMask> flat_region;
    NoiseOptions noise;
};

struct GeneratedImage {
    ImageGrid image;
    bool reference_quality_ok = true;
    double quality_ratio = 0.0;  // mean / (quality_factor * predicted sigma)
};

/// Generator pipeline: de-offset and clamp the reference at 0, scale to the
/// target exposure, draw Poisson-Gaussian noise, then blur with psf_sigma.
GeneratedImage generate_from_reference(const GenerationRequest& request,
                                       const GenerationOptions& options = {});

}  // namespace xpod::noise
