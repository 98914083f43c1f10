#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xpod/random.hpp"

namespace xpod::pod {

/// Complementary log-log link, log(-log(1 - P)), for P in (0, 1).
double link(double p);
/// 1 - exp(-exp(x)).
double inverse_link(double x);

struct PodSample {
    double contrast = 0.0;
    bool success = false;
    std::string id;  // carried for reporting; never affects a fit
};

struct PodFit {
    double c0 = 0.0;
    double c1 = 0.0;
    /// Inverse observed information. Zero when the fit separated.
    std::array<std::array<double, 2>, 2> cov{};
    std::size_t n = 0;
    bool converged = false;
    bool separation = false;
    double log_likelihood = 0.0;
    double gradient_norm = 0.0;  // infinity norm at the returned point
    int iterations = 0;

    double probability(double contrast) const { return inverse_link(c0 + c1 * contrast); }
};

struct FitOptions {
    int max_iterations = 100;
    double gradient_tolerance = 1e-8;
    double c1_cap = 1e3;
    /// Starting point; by default a weighted line through link-transformed,
    /// smoothed hit rates of contrast bins.
    std::optional<std::array<double, 2>> start;
};

/// Bernoulli log-likelihood of (c0, c1) with P = inverse_link(c0 + c1 * contrast).
double log_likelihood(std::span<const PodSample> samples, double c0, double c1);

/// Maximum-likelihood fit by Newton-Raphson with step halving. Samples are
/// put in canonical order first, so the result does not depend on input
/// order or on ids. Complete separation (a contrast threshold splitting
/// successes from failures) sets `separation` and caps |c1|; the intercept is
/// then fitted with c1 held at the cap.
///
/// Throws ValidationError for fewer than 10 samples or a single outcome class.
PodFit fit_pod(std::span<const PodSample> samples, const FitOptions& options = {});

/// Contrast at which the fitted curve reaches P: (link(P) - c0) / c1.
/// Throws ValidationError if c1 <= 0 or the fit did not converge.
double contrast_at(const PodFit& fit, double p);

/// Mean coefficients of several fits (e.g. repeated detector trainings).
/// The curve of the averaged coefficients is reported, not an average of
/// curves.
PodFit average_coefficients(std::span<const PodFit> fits);

enum class IntervalMethod { kBootstrap, kWald, kReported };

struct PodInterval {
    double target = 0.9;
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    IntervalMethod method = IntervalMethod::kBootstrap;
    int resamples = 0;
    int degenerate = 0;  // redrawn bootstrap resamples
    bool unstable = false;

    /// Interval from a published "point +- half_width" value.
    static PodInterval reported(double target, double point, double half_width);
};

/// Delta-method interval for contrast_at from the fit covariance.
PodInterval wald_interval(const PodFit& fit, double p, double level = 0.90);

struct BootstrapOptions {
    double level = 0.90;  // central percentile interval
    int retry_cap = 20;   // redraws allowed per replicate
    unsigned threads = 1;
};

/// Nonparametric bootstrap of contrast_at. Replicate b draws from stream
/// derive_seed(seed, b), so results do not depend on thread count.
/// Resamples with one outcome class, separation, or a non-positive slope are
/// redrawn and counted; more than 20% redraws (or fewer than 20 replicates)
/// marks the interval unstable. The interval is widened if needed so that it
/// contains the full-sample point estimate.
PodInterval bootstrap_interval(std::span<const PodSample> samples, double p, int resamples,
                               SeedSpec seed, const BootstrapOptions& options = {});

struct CurveComparison {
    bool equivalent = false;
    double point_real = 0.0;
    double point_generated = 0.0;
    PodInterval real;
    PodInterval generated;
    double point_gap = 0.0;     // generated - real
    double interval_gap = 0.0;  // distance between intervals, 0 when they overlap
};

/// Equivalent iff the two contrast-at-P intervals overlap.
CurveComparison compare_curves(const PodInterval& real, const PodInterval& generated);

// --- files ---

/// CSV with header columns sample_id, contrast and outcome (0/1). If a
/// fo_present column exists, rows with fo_present = 0 are skipped.
std::vector<PodSample> read_pod_csv(const std::filesystem::path& path);

nlohmann::json fit_to_json(const PodFit& fit);
PodFit fit_from_json(const nlohmann::json& j);
nlohmann::json interval_to_json(const PodInterval& interval);
PodInterval interval_from_json(const nlohmann::json& j);
std::string method_name(IntervalMethod m);

/// Curve points (contrast, P) on an even grid over [lo, hi].
void write_curve_csv(const PodFit& fit, double lo, double hi, int points,
                     const std::filesystem::path& path);

}  // namespace xpod::pod
