#include "xpod/forward.hpp"

#include <algorithm>
#include <cmath>

#include "xpod/error.hpp"

namespace xpod::forward {

double max_exposure(double pixel_mm, double belt_speed_mm_per_ms, double safety_factor) {
    if (!(pixel_mm > 0.0) || !(belt_speed_mm_per_ms > 0.0)) {
        throw ValidationError("pixel size and belt speed must be positive");
    }
    if (!(safety_factor > 0.0) || safety_factor > 1.0) {
        throw ValidationError("safety factor must lie in (0, 1]");
    }
    return safety_factor * pixel_mm / belt_speed_mm_per_ms;
}

ChannelSettings ChannelSettings::make(std::string label, double k, double t_ms,
                                      std::map<std::string, double> mu) {
    ChannelSettings c{std::move(label), k, t_ms, k * t_ms, std::move(mu)};
    c.validate();
    return c;
}

ChannelSettings ChannelSettings::for_materials(std::string label, double k, double t_ms,
                                               const std::vector<phantom::MaterialRef>& materials) {
    std::map<std::string, double> mu;
    for (const auto& m : materials) mu[m.name] = m.mu_for(label);
    return make(std::move(label), k, t_ms, std::move(mu));
}

ChannelSettings ChannelSettings::at_exposure(double t_ms) const {
    return make(label, flux_coefficient, t_ms, effective_mu);
}

double ChannelSettings::mu(const std::string& material) const {
    auto it = effective_mu.find(material);
    if (it == effective_mu.end()) {
        throw ValidationError("channel '" + label + "' has no attenuation for material '" +
                              material + "'");
    }
    return it->second;
}

void ChannelSettings::validate() const {
    if (!(flux_coefficient > 0.0) || !std::isfinite(flux_coefficient)) {
        throw ValidationError("channel '" + label + "': flux coefficient must be positive");
    }
    if (!(exposure_ms > 0.0) || !std::isfinite(exposure_ms)) {
        throw ValidationError("channel '" + label + "': exposure must be positive");
    }
    for (const auto& [name, mu] : effective_mu) {
        if (!(mu > 0.0)) {
            throw ValidationError("channel '" + label + "': mu for '" + name + "' must be > 0");
        }
    }
}

double flux_scale(const FluxSettings& from, const FluxSettings& to) {
    auto positive = [](const FluxSettings& s) {
        return s.tube_current > 0.0 && s.exposure_ms > 0.0 && s.pixel_mm > 0.0 &&
               s.distance_mm > 0.0;
    };
    if (!positive(from) || !positive(to)) throw ValidationError("flux settings must be positive");
    auto rel = [](const FluxSettings& s) {
        return s.tube_current * s.exposure_ms * s.pixel_mm * s.pixel_mm /
               (s.distance_mm * s.distance_mm);
    };
    return rel(to) / rel(from);
}

ImageGrid project(const phantom::PhantomSpec& phantom, const ChannelSettings& channel) {
    channel.validate();
    const double mu_m = channel.mu(phantom.main_material.name);
    const double mu_f = channel.mu(phantom.fo_material.name);
    const auto& lm = phantom.main_thickness;
    const auto& lf = phantom.fo_thickness;
    ImageGrid out(lm.width(), lm.height(), lm.pitch());
    auto v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = channel.i0 * std::exp(-mu_m * lm[i] - mu_f * lf[i]);
    }
    return out;
}

ImageGrid log_correct(const ImageGrid& intensity, double i0, std::optional<double> epsilon) {
    if (!(i0 > 0.0)) throw ValidationError("log correction needs i0 > 0");
    const double eps = epsilon.value_or(1e-6 * i0);
    if (!(eps > 0.0)) throw ValidationError("log correction floor must be > 0");
    ImageGrid out(intensity.width(), intensity.height(), intensity.pitch());
    auto v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = -std::log(std::max(intensity[i], eps) / i0);
    }
    return out;
}

QuotientImage quotient(const ImageGrid& m_a, const ImageGrid& m_b, double denom_floor) {
    if (!m_a.same_shape(m_b)) throw ValidationError("quotient: image shapes differ");
    if (!(denom_floor > 0.0)) throw ValidationError("quotient: denominator floor must be > 0");
    QuotientImage q{ImageGrid(m_a.width(), m_a.height(), m_a.pitch()),
                    BinaryMask(m_a.width(), m_a.height())};
    auto r = q.r.mutable_values();
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (m_b[i] >= denom_floor) {
            r[i] = m_a[i] / m_b[i];
            q.valid.set(i, true);
        }
    }
    return q;
}

void ContrastParams::validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be >= 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be > 0");
    if (!std::isfinite(r_f) || !std::isfinite(r_m)) throw ValidationError("non-finite quotient");
}

double delta_r(const ContrastParams& p) {
    p.validate();
    const double ab = p.alpha * p.beta;
    return ab * (p.r_f - p.r_m) / (ab + 1.0);
}

ImageGrid contrast_map(const phantom::PhantomSpec& phantom, const ChannelSettings& a,
                       const ChannelSettings& b) {
    const double mu_ma = a.mu(phantom.main_material.name);
    const double mu_fa = a.mu(phantom.fo_material.name);
    const double mu_mb = b.mu(phantom.main_material.name);
    const double mu_fb = b.mu(phantom.fo_material.name);
    ContrastParams p;
    p.beta = mu_fb / mu_mb;
    p.r_f = mu_fa / mu_fb;
    p.r_m = mu_ma / mu_mb;

    const auto& lm = phantom.main_thickness;
    const auto& lf = phantom.fo_thickness;
    ImageGrid out(lm.width(), lm.height(), lm.pitch());
    auto v = out.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(lm[i] > 0.0)) continue;
        p.alpha = lf[i] / lm[i];
        v[i] = delta_r(p);
    }
    return out;
}

double sample_contrast(const ImageGrid& dr_map, const BinaryMask& gt_mask, Aggregator agg) {
    if (!gt_mask.same_shape(dr_map)) throw ValidationError("contrast map and mask differ in shape");
    std::vector<double> vals;
    vals.reserve(gt_mask.count());
    for (std::size_t i = 0; i < dr_map.size(); ++i) {
        if (gt_mask[i]) vals.push_back(std::fabs(dr_map[i]));
    }
    if (vals.empty()) throw ValidationError("sample_contrast: ground-truth mask is empty");

    if (agg.kind == Aggregator::Kind::kMean) {
        double s = 0.0;
        for (double v : vals) s += v;
        return s / static_cast<double>(vals.size());
    }
    if (!(agg.q >= 0.0 && agg.q <= 100.0)) throw ValidationError("percentile must be in [0, 100]");
    std::sort(vals.begin(), vals.end());
    const double pos = agg.q / 100.0 * static_cast<double>(vals.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, vals.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return vals[lo] + w * (vals[hi] - vals[lo]);
}

double log_variance(double intensity, double gain, double dark_var) {
    if (!(intensity > 0.0)) throw ValidationError("variance propagation needs intensity > 0");
    return (gain * intensity + dark_var) / (intensity * intensity);
}

double log_variance(double intensity, const DetectorCalibration& calib, std::size_t pixel) {
    return log_variance(intensity, calib.gain.at(pixel), calib.dark_var.at(pixel));
}

double quotient_variance(double var_m_a, double var_m_b, double r, double m_b) {
    if (m_b == 0.0) throw ValidationError("quotient variance undefined for M_b = 0");
    return (var_m_a + r * r * var_m_b) / (m_b * m_b);
}

}  // namespace xpod::forward
