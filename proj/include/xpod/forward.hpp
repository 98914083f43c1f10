#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xpod/detector.hpp"
#include "xpod/image.hpp"
#include "xpod/phantom.hpp"

namespace xpod::forward {

/// Longest exposure a line detector can integrate before the belt moves one
/// pixel: safety_factor * pixel / speed. Units: mm, mm/ms -> ms.
double max_exposure(double pixel_mm, double belt_speed_mm_per_ms, double safety_factor = 1.0);

/// Source spectrum and detector response sampled on a common energy grid.
struct SpectrumModel {
    std::vector<double> energies_kev;
    std::vector<double> phi;
    std::vector<double> sensitivity;
    std::vector<double> gain;

    void validate() const;
};

/// CSV with header energy_keV,phi,sensitivity,gain.
SpectrumModel read_spectrum_csv(const std::filesystem::path& path);

/// Detector-weighted mean attenuation of a polychromatic beam:
///   mu = int(g D Phi mu(E) dE) / int(g D Phi dE)
/// by trapezoidal quadrature on the spectrum grid, with mu(E) linearly
/// interpolated from the curve. The curve must cover the spectrum grid.
double effective_mu(const SpectrumModel& spectrum,
                    const std::vector<phantom::AttenuationPoint>& curve);

/// One energy channel at one exposure. i0 = k * t is the flatfield intensity
/// above the darkfield offset.
struct ChannelSettings {
    std::string label;
    double flux_coefficient = 0.0;  // intensity per ms
    double exposure_ms = 0.0;
    double i0 = 0.0;
    std::map<std::string, double> effective_mu;  // material name -> 1/mm

    static ChannelSettings make(std::string label, double k, double t_ms,
                                std::map<std::string, double> mu);
    /// Takes each material's mu for this channel label.
    static ChannelSettings for_materials(std::string label, double k, double t_ms,
                                         const std::vector<phantom::MaterialRef>& materials);

    ChannelSettings at_exposure(double t_ms) const;
    double mu(const std::string& material) const;
    void validate() const;
};

/// Relative tube/geometry settings for proportional flux scaling,
/// I0 ~ current * t * pixel^2 / distance^2.
struct FluxSettings {
    double tube_current = 1.0;
    double exposure_ms = 1.0;
    double pixel_mm = 1.0;
    double distance_mm = 1.0;
};

/// Factor by which I0 changes going from `from` to `to`.
double flux_scale(const FluxSettings& from, const FluxSettings& to);

/// Noiseless expected intensity, I = i0 * exp(-mu_m L_m - mu_f L_f).
ImageGrid project(const phantom::PhantomSpec& phantom, const ChannelSettings& channel);

/// M = -log(max(I, epsilon) / i0). epsilon defaults to 1e-6 * i0.
ImageGrid log_correct(const ImageGrid& intensity, double i0,
                      std::optional<double> epsilon = std::nullopt);

inline constexpr double kDefaultDenomFloor = 0.05;

struct QuotientImage {
    ImageGrid r;       // 0 where invalid
    BinaryMask valid;  // M_b >= denom_floor
};

QuotientImage quotient(const ImageGrid& m_a, const ImageGrid& m_b,
                       double denom_floor = kDefaultDenomFloor);

struct ContrastParams {
    double alpha = 0.0;  // L_f / L_m
    double beta = 1.0;   // mu_f^b / mu_m^b
    double r_f = 1.0;    // mu_f^a / mu_f^b
    double r_m = 1.0;    // mu_m^a / mu_m^b

    void validate() const;
};

/// Quotient shift caused by a foreign object:
///   dR = alpha beta (R_f - R_m) / (alpha beta + 1)
double delta_r(const ContrastParams& p);

/// Per-pixel dR for a phantom and a channel pair (a over b); 0 where L_m = 0.
ImageGrid contrast_map(const phantom::PhantomSpec& phantom, const ChannelSettings& a,
                       const ChannelSettings& b);

/// Scalar reduction of |dR| over the ground-truth region.
struct Aggregator {
    enum class Kind { kMean, kPercentile };
    Kind kind = Kind::kMean;
    double q = 50.0;  // percentile in [0, 100], linear interpolation between ranks

    static Aggregator mean() { return {}; }
    static Aggregator percentile(double q) { return {Kind::kPercentile, q}; }
};

double sample_contrast(const ImageGrid& dr_map, const BinaryMask& gt_mask,
                       Aggregator aggregator = Aggregator::mean());

/// Delta-method variance of M = -log(I/i0) for a detector with the given gain
/// and darkfield variance: (g I + sigma_e^2) / I^2.
double log_variance(double intensity, double gain, double dark_var);
double log_variance(double intensity, const DetectorCalibration& calib, std::size_t pixel = 0);

/// Variance of R = M_a / M_b from the two channel variances:
/// (var_a + R^2 var_b) / M_b^2.
double quotient_variance(double var_m_a, double var_m_b, double r, double m_b);

}  // namespace xpod::forward
