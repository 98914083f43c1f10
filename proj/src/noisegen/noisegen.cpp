#include "xpod/noisegen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "xpod/error.hpp"

namespace xpod::noise {

ImageGrid sample_noisy(const ImageGrid& expected, const DetectorCalibration& calib, SeedSpec seed,
                       const NoiseOptions& options) {
    calib.validate();
    calib.check_shape(expected.width(), expected.height());
    RandomStream rng(seed);
    ImageGrid out(expected.width(), expected.height(), expected.pitch());
    auto y = out.mutable_values();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double intensity = expected[i];
        if (intensity < 0.0) {
            throw ValidationError("negative expected intensity at index " + std::to_string(i));
        }
        const double g = calib.gain.at(i);
        const double shot =
            g > 0.0 ? g * rng.poisson(intensity / g, options.poisson_gauss_threshold) : intensity;
        const double sd = std::sqrt(calib.dark_var.at(i));
        const double z = rng.normal();
        y[i] = shot + calib.dark_offset.at(i) + sd * z;
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("blur sigma must be >= 0");
    if (sigma == 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

int reflect(int m, int n) {
    const int period = 2 * n;
    m %= period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

}  // namespace

ImageGrid blur(const ImageGrid& image, double sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1) return image;
    const int r = static_cast<int>(k.size() / 2);
    const int w = image.width();
    const int h = image.height();
    std::vector<double> tmp(image.size());
    for (int y = 0; y < h; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += k[d + r] * image[row + reflect(x + d, w)];
            tmp[row + x] = s;
        }
    }
    ImageGrid out(w, h, image.pitch());
    auto v = out.mutable_values();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) {
                s += k[d + r] * tmp[static_cast<std::size_t>(reflect(y + d, h)) * w + x];
            }
            v[static_cast<std::size_t>(y) * w + x] = s;
        }
    }
    return out;
}

ImageGrid scale_exposure(const ImageGrid& reference, double t_ref_ms, double t_ms) {
    if (!(t_ref_ms > 0.0) || !(t_ms > 0.0)) throw ValidationError("exposure times must be positive");
    const double f = t_ms / t_ref_ms;
    ImageGrid out = reference;
    for (double& v : out.mutable_values()) v *= f;
    return out;
}

namespace {

BinaryMask default_flat_region(const ImageGrid& deoffset) {
    std::vector<double> sorted(deoffset.values().begin(), deoffset.values().end());
    const auto idx = static_cast<std::size_t>(0.99 * static_cast<double>(sorted.size() - 1));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(idx),
                     sorted.end());
    const double level = sorted[idx];
    BinaryMask m(deoffset.width(), deoffset.height());
    for (std::size_t i = 0; i < deoffset.size(); ++i) m.set(i, deoffset[i] >= 0.9 * level);
    return m;
}

}  // namespace

GeneratedImage generate_from_reference(const GenerationRequest& req,
                                       const GenerationOptions& opt) {
    const auto& ref = req.reference;
    req.calib.validate();
    req.calib.check_shape(ref.width(), ref.height());
    if (!(req.ref_exposure_ms > 0.0) || !(req.target_exposure_ms > 0.0)) {
        throw ValidationError("exposure times must be positive");
    }

    ImageGrid intensity(ref.width(), ref.height(), ref.pitch());
    {
        auto v = intensity.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = std::max(0.0, ref[i] - req.calib.dark_offset.at(i));
        }
    }

    const BinaryMask region = opt.flat_region ? *opt.flat_region : default_flat_region(intensity);
    if (!region.same_shape(ref)) throw ValidationError("flat region mask has wrong shape");
    double sum = 0.0;
    double gain_sum = 0.0;
    double var_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < intensity.size(); ++i) {
        if (!region[i]) continue;
        sum += intensity[i];
        gain_sum += req.calib.gain.at(i);
        var_sum += req.calib.dark_var.at(i);
        ++n;
    }
    if (n == 0) throw ValidationError("object-free region of the reference is empty");
    const double mean = sum / static_cast<double>(n);
    const double predicted_sd =
        std::sqrt(gain_sum / static_cast<double>(n) * mean + var_sum / static_cast<double>(n));

    GeneratedImage result{ImageGrid(1, 1, 1.0), true, 0.0};
    result.quality_ratio =
        predicted_sd > 0.0 ? mean / (opt.quality_factor * predicted_sd)
                           : std::numeric_limits<double>::infinity();
    result.reference_quality_ok = result.quality_ratio >= 1.0;
    if (!result.reference_quality_ok && opt.strict) {
        std::ostringstream msg;
        msg << "reference is not high quality: object-free mean " << mean << " < "
            << opt.quality_factor << " x predicted sigma " << predicted_sd;
        throw ValidationError(msg.str());
    }

    ImageGrid expected = [&] {
        if (opt.normalize_to_flux) {
            if (!(req.flux_coefficient > 0.0)) {
                throw ValidationError("normalize_to_flux needs a positive flux coefficient");
            }
            if (!(mean > 0.0)) throw ValidationError("reference object-free level is zero");
            ImageGrid out = intensity;
            const double f = req.flux_coefficient * req.target_exposure_ms / mean;
            for (double& v : out.mutable_values()) v *= f;
            return out;
        }
        return scale_exposure(intensity, req.ref_exposure_ms, req.target_exposure_ms);
    }();

    const double sigma = req.apply_blur ? req.calib.psf_sigma : 0.0;
    if (opt.blur_before_noise) {
        result.image = sample_noisy(blur(expected, sigma), req.calib, req.seed, opt.noise);
    } else {
        result.image = blur(sample_noisy(expected, req.calib, req.seed, opt.noise), sigma);
    }
    return result;
}

}  // namespace xpod::noise
