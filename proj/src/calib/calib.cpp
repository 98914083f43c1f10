#include "xpod/calib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xpod/error.hpp"

namespace xpod::calib {

void MomentAccumulator::add(const ImageGrid& frame) {
    if (n_ == 0) {
        width_ = frame.width();
        height_ = frame.height();
        pitch_ = frame.pitch();
        mean_.assign(frame.size(), 0.0);
        m2_.assign(frame.size(), 0.0);
    } else if (frame.width() != width_ || frame.height() != height_) {
        throw ValidationError("frame " + std::to_string(n_) + " is " +
                              std::to_string(frame.width()) + "x" +
                              std::to_string(frame.height()) + ", series is " +
                              std::to_string(width_) + "x" + std::to_string(height_));
    }
    ++n_;
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < mean_.size(); ++i) {
        const double d = frame[i] - mean_[i];
        mean_[i] += d * inv_n;
        m2_[i] += d * (frame[i] - mean_[i]);
    }
}

ImageGrid MomentAccumulator::mean() const {
    if (n_ == 0) throw ValidationError("no frames accumulated");
    return ImageGrid(width_, height_, pitch_, mean_);
}

ImageGrid MomentAccumulator::variance() const {
    if (n_ < 2) throw ValidationError("variance needs at least two frames");
    std::vector<double> v(m2_.size());
    const double inv = 1.0 / static_cast<double>(n_ - 1);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, m2_[i] * inv);
    return ImageGrid(width_, height_, pitch_, std::move(v));
}

SeriesMoments moments_from(const MomentAccumulator& acc, double exposure_ms,
                           std::string tube_label, std::string level_id) {
    return {acc.mean(), acc.variance(), acc.count(), exposure_ms, std::move(tube_label),
            std::move(level_id)};
}

SeriesMoments series_moments(const FlatfieldSeries& series) {
    if (series.frames.size() < 2) throw ValidationError("a series needs at least two frames");
    MomentAccumulator acc;
    for (const auto& f : series.frames) acc.add(f);
    return moments_from(acc, series.exposure_ms, series.tube_label, series.level_id);
}

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of empty set");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace

NoiseFit fit_noise_params(const CalibrationMoments& m) {
    if (m.levels.size() < 3) {
        throw ValidationError("noise calibration needs at least 3 illuminated levels, got " +
                              std::to_string(m.levels.size()));
    }
    const int w = m.dark.mean.width();
    const int h = m.dark.mean.height();
    const double pitch = m.dark.mean.pitch();
    for (const auto& lv : m.levels) {
        if (!lv.mean.same_shape(m.dark.mean) || !lv.var.same_shape(m.dark.mean)) {
            throw ValidationError("level '" + lv.level_id + "' differs in shape from darkfield");
        }
    }
    const std::size_t n_px = m.dark.mean.size();
    const std::size_t n_lv = m.levels.size();

    NoiseFit fit{DetectorCalibration{}, BinaryMask(w, h), ImageGrid(w, h, pitch),
                 ImageGrid(w, h, pitch)};
    auto slope = fit.slope.mutable_values();
    auto icept = fit.intercept.mutable_values();

    std::vector<double> xs(n_lv);
    std::vector<double> ys(n_lv);
    for (std::size_t i = 0; i < n_px; ++i) {
        const double d_e = m.dark.mean[i];
        const double s2e = m.dark.var[i];
        double xbar = 0.0;
        double ybar = 0.0;
        for (std::size_t j = 0; j < n_lv; ++j) {
            xs[j] = m.levels[j].mean[i] - d_e;
            ys[j] = m.levels[j].var[i];
            xbar += xs[j];
            ybar += ys[j];
        }
        xbar /= static_cast<double>(n_lv);
        ybar /= static_cast<double>(n_lv);
        double sxx = 0.0;
        double sxy = 0.0;
        double xx = 0.0;
        for (std::size_t j = 0; j < n_lv; ++j) {
            sxx += (xs[j] - xbar) * (xs[j] - xbar);
            sxy += (xs[j] - xbar) * (ys[j] - ybar);
            xx += xs[j] * xs[j];
        }
        if (!(sxx > 1e-12 * std::max(xx, 1.0))) {
            ++fit.n_degenerate;
            continue;
        }
        const double b = sxy / sxx;
        const double a = ybar - b * xbar;
        slope[i] = b;
        icept[i] = a;
        if (!(b > 0.0)) {
            ++fit.n_negative_gain;
            continue;
        }
        double ssr = 0.0;
        for (std::size_t j = 0; j < n_lv; ++j) {
            const double r = ys[j] - (a + b * xs[j]);
            ssr += r * r;
        }
        const double s2 = ssr / static_cast<double>(n_lv - 2);
        const double se_a = std::sqrt(s2 * (1.0 / static_cast<double>(n_lv) + xbar * xbar / sxx));
        const double gap = std::fabs(a - s2e);
        if (gap > 0.5 * s2e && gap > 3.0 * se_a) {
            ++fit.n_intercept_mismatch;
            continue;
        }
        fit.valid.set(i, true);
        ++fit.n_valid;
        if (s2e > 0.0) {
            fit.max_intercept_discrepancy = std::max(fit.max_intercept_discrepancy, gap / s2e);
        }
    }
    if (fit.n_degenerate == n_px) {
        throw ValidationError(
            "noise regression is degenerate: level means do not vary (rank deficient)");
    }

    // Maps: fitted values where valid, scalar medians elsewhere.
    std::vector<double> g_valid;
    for (std::size_t i = 0; i < n_px; ++i) {
        if (fit.valid[i]) g_valid.push_back(slope[i]);
    }
    const double g_fill = g_valid.empty() ? 0.0 : median_of(g_valid);
    ImageGrid gain_map(w, h, pitch);
    auto gm = gain_map.mutable_values();
    for (std::size_t i = 0; i < n_px; ++i) gm[i] = fit.valid[i] ? slope[i] : g_fill;
    fit.per_pixel.gain = PixelParam(std::move(gain_map));
    fit.per_pixel.dark_offset = PixelParam(m.dark.mean);
    fit.per_pixel.dark_var = PixelParam(m.dark.var);
    return fit;
}

NoiseFit fit_noise_params(const CalibrationDataset& dataset) {
    if (dataset.darkfield.frames.empty()) throw ValidationError("calibration needs a darkfield series");
    CalibrationMoments m{series_moments(dataset.darkfield), {}};
    for (const auto& lv : dataset.levels) m.levels.push_back(series_moments(lv));
    return fit_noise_params(m);
}

DetectorCalibration NoiseFit::scalar_summary() const {
    if (n_valid == 0) throw ValidationError("no valid pixels in the noise calibration");
    std::vector<double> g;
    std::vector<double> d;
    std::vector<double> v;
    const auto& dm = *per_pixel.dark_offset.map();
    const auto& vm = *per_pixel.dark_var.map();
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (!valid[i]) continue;
        g.push_back(slope[i]);
        d.push_back(dm[i]);
        v.push_back(vm[i]);
    }
    DetectorCalibration c;
    c.gain = median_of(std::move(g));
    c.dark_offset = median_of(std::move(d));
    c.dark_var = median_of(std::move(v));
    c.psf_sigma = per_pixel.psf_sigma;
    return c;
}

FluxFit fit_flux_coefficient(const std::vector<FluxPoint>& points, double dark_offset) {
    if (points.size() < 2) throw ValidationError("flux fit needs at least two exposures");
    bool distinct = false;
    for (const auto& p : points) {
        if (!(p.exposure_ms > 0.0)) throw ValidationError("flux fit: exposures must be positive");
        distinct = distinct || p.exposure_ms != points.front().exposure_ms;
    }
    if (!distinct) throw ValidationError("flux fit needs at least two distinct exposures");
    double stt = 0.0;
    double sty = 0.0;
    for (const auto& p : points) {
        stt += p.exposure_ms * p.exposure_ms;
        sty += p.exposure_ms * (p.mean_intensity - dark_offset);
    }
    FluxFit fit;
    fit.k = sty / stt;
    fit.n_points = points.size();
    double ss = 0.0;
    for (const auto& p : points) {
        const double r = p.mean_intensity - dark_offset - fit.k * p.exposure_ms;
        ss += r * r;
    }
    fit.residual_rms = std::sqrt(ss / static_cast<double>(points.size()));
    if (!(fit.k > 0.0)) throw ValidationError("flux fit produced a non-positive coefficient");
    return fit;
}

double estimate_psf_sigma(const ImageGrid& img, int window) {
    if (window < 3) throw ValidationError("psf window must be >= 3 px");
    const int w = img.width();
    const int h = img.height();
    if (w <= 2 * window || h <= 2 * window) throw ValidationError("image too small for psf window");
    const double mu = img.mean();
    std::vector<double> z(img.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = img[i] - mu;

    auto cov = [&](int dx, int dy) {
        double s = 0.0;
        std::size_t n = 0;
        const int x0 = std::max(0, -dx);
        const int x1 = std::min(w, w - dx);
        for (int y = 0; y + dy < h; ++y) {
            const std::size_t row = static_cast<std::size_t>(y) * w;
            const std::size_t row2 = static_cast<std::size_t>(y + dy) * w;
            for (int x = x0; x < x1; ++x) s += z[row + x] * z[row2 + x + dx];
            n += static_cast<std::size_t>(x1 - x0);
        }
        return s / static_cast<double>(n);
    };

    const double c0 = cov(0, 0);
    if (!(c0 > 0.0)) throw ValidationError("psf estimate needs a non-constant image");
    struct Sample {
        double r2;
        double c;
    };
    std::vector<Sample> samples;
    for (int dy = 0; dy <= window; ++dy) {
        for (int dx = -window; dx <= window; ++dx) {
            if (dy == 0 && dx <= 0) continue;  // half plane, r >= 1
            samples.push_back({static_cast<double>(dx * dx + dy * dy), cov(dx, dy)});
        }
    }

    const double se = c0 / std::sqrt(static_cast<double>(img.size()));
    const double c1 = 0.5 * (cov(1, 0) + cov(0, 1));
    if (c1 < 3.0 * se) return 0.0;

    // For fixed sigma the best amplitude is linear; scan sigma then refine.
    auto sse_at = [&](double sigma, double* amp) {
        double cf = 0.0;
        double ff = 0.0;
        for (const auto& s : samples) {
            const double f = std::exp(-s.r2 / (4.0 * sigma * sigma));
            cf += s.c * f;
            ff += f * f;
        }
        const double a = cf / ff;
        double sse = 0.0;
        for (const auto& s : samples) {
            const double r = s.c - a * std::exp(-s.r2 / (4.0 * sigma * sigma));
            sse += r * r;
        }
        if (amp) *amp = a;
        return sse;
    };
    const double lo = 0.05;
    const double hi = 2.0 * window;
    const int steps = 400;
    double best = lo;
    double best_sse = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= steps; ++i) {
        const double s = lo * std::pow(hi / lo, static_cast<double>(i) / steps);
        const double e = sse_at(s, nullptr);
        if (e < best_sse) {
            best_sse = e;
            best = s;
        }
    }
    const double ratio = std::pow(hi / lo, 1.0 / steps);
    double a = std::max(lo, best / ratio);
    double b = std::min(hi, best * ratio);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100 && b - a > 1e-10; ++it) {
        const double m1 = b - phi * (b - a);
        const double m2 = a + phi * (b - a);
        if (sse_at(m1, nullptr) < sse_at(m2, nullptr)) {
            b = m2;
        } else {
            a = m1;
        }
    }
    const double sigma = 0.5 * (a + b);
    double amp = 0.0;
    sse_at(sigma, &amp);
    if (!(amp > 0.0) || !(sigma > 0.0)) {
        throw RuntimeFailure("psf fit produced a non-positive width or amplitude");
    }
    return sigma;
}

}  // namespace xpod::calib
