#include "xpod/pod.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <cmath>
#include <limits>

#include "xpod/error.hpp"
#include "xpod/parallel.hpp"

namespace xpod::pod {

double link(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("link needs 0 < P < 1");
    return std::log(-std::log1p(-p));
}

double inverse_link(double x) { return -std::expm1(-std::exp(x)); }

namespace {

// Canonical data: sorted by (contrast, outcome), identical pairs merged.
struct Design {
    std::vector<double> x;
    std::vector<std::uint8_t> y;
    std::vector<double> w;
    std::size_t n = 0;
};

Design canonical(std::span<const PodSample> samples) {
    std::vector<std::pair<double, std::uint8_t>> v;
    v.reserve(samples.size());
    for (const auto& s : samples) {
        if (!std::isfinite(s.contrast)) throw ValidationError("non-finite contrast in POD sample");
        v.emplace_back(s.contrast, s.success ? 1 : 0);
    }
    std::sort(v.begin(), v.end());
    Design d;
    d.n = v.size();
    for (const auto& [x, y] : v) {
        if (!d.x.empty() && d.x.back() == x && d.y.back() == y) {
            d.w.back() += 1.0;
        } else {
            d.x.push_back(x);
            d.y.push_back(y);
            d.w.push_back(1.0);
        }
    }
    return d;
}

constexpr double kEtaMax = 700.0;

// Per-observation log-likelihood and its first two derivatives in eta.
struct Terms {
    double l;
    double d1;
    double d2;
};

inline double loglik_term(double eta, bool success) {
    eta = std::min(eta, kEtaMax);
    const double mu = std::exp(eta);
    if (!success) return -mu;
    return std::log(-std::expm1(-mu));
}

inline Terms terms(double eta, bool success) {
    eta = std::min(eta, kEtaMax);
    const double mu = std::exp(eta);
    if (!success) return {-mu, -mu, -mu};
    const double l = std::log(-std::expm1(-mu));
    if (mu > 40.0) {
        const double e = std::exp(-mu);
        return {l, mu * e, mu * (1.0 - mu) * e};
    }
    const double em1 = std::expm1(mu);
    const double d1 = mu / em1;
    double d2;
    if (mu < 1e-5) {
        d2 = -0.5 * mu;
    } else {
        d2 = mu * (em1 - mu * std::exp(mu)) / (em1 * em1);
    }
    return {l, d1, d2};
}

double design_loglik(const Design& d, double c0, double c1) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.x.size(); ++i) s += d.w[i] * loglik_term(c0 + c1 * d.x[i], d.y[i]);
    return s;
}

struct Derivs {
    double l = 0.0;
    double g0 = 0.0;
    double g1 = 0.0;
    double h00 = 0.0;
    double h01 = 0.0;
    double h11 = 0.0;
};

Derivs design_derivs(const Design& d, double c0, double c1) {
    Derivs r;
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        const double x = d.x[i];
        const Terms t = terms(c0 + c1 * x, d.y[i]);
        const double w = d.w[i];
        r.l += w * t.l;
        r.g0 += w * t.d1;
        r.g1 += w * t.d1 * x;
        r.h00 += w * t.d2;
        r.h01 += w * t.d2 * x;
        r.h11 += w * t.d2 * x * x;
    }
    return r;
}

bool separated(const Design& d) {
    double min_s = std::numeric_limits<double>::infinity();
    double max_s = -min_s;
    double min_f = min_s;
    double max_f = -min_s;
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        if (d.y[i]) {
            min_s = std::min(min_s, d.x[i]);
            max_s = std::max(max_s, d.x[i]);
        } else {
            min_f = std::min(min_f, d.x[i]);
            max_f = std::max(max_f, d.x[i]);
        }
    }
    return max_f < min_s || max_s < min_f;
}

std::pair<bool, bool> classes(const Design& d) {
    bool any_s = false;
    bool any_f = false;
    for (auto y : d.y) {
        any_s = any_s || y;
        any_f = any_f || !y;
    }
    return {any_s, any_f};
}

std::array<double, 2> initial_guess(const Design& d) {
    // Equal-weight contrast bins; smoothed hit rate (s + 0.5) / (n + 1).
    const int bins = 10;
    const double total = static_cast<double>(d.n);
    std::vector<double> bx;
    std::vector<double> bl;
    std::vector<double> bw;
    double acc_w = 0.0;
    double acc_x = 0.0;
    double acc_s = 0.0;
    double cum = 0.0;
    int bin = 1;
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        acc_w += d.w[i];
        acc_x += d.w[i] * d.x[i];
        acc_s += d.y[i] ? d.w[i] : 0.0;
        cum += d.w[i];
        if (cum >= total * bin / bins || i + 1 == d.x.size()) {
            bx.push_back(acc_x / acc_w);
            bl.push_back(link((acc_s + 0.5) / (acc_w + 1.0)));
            bw.push_back(acc_w);
            acc_w = acc_x = acc_s = 0.0;
            while (bin < bins && cum >= total * bin / bins) ++bin;
        }
    }
    double sw = 0.0;
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < bx.size(); ++i) {
        sw += bw[i];
        mx += bw[i] * bx[i];
        my += bw[i] * bl[i];
    }
    mx /= sw;
    my /= sw;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < bx.size(); ++i) {
        sxx += bw[i] * (bx[i] - mx) * (bx[i] - mx);
        sxy += bw[i] * (bx[i] - mx) * (bl[i] - my);
    }
    double successes = 0.0;
    for (std::size_t i = 0; i < d.x.size(); ++i) successes += d.y[i] ? d.w[i] : 0.0;
    const double flat = link((successes + 0.5) / (total + 1.0));
    if (!(sxx > 0.0)) return {flat, 0.0};
    const double c1 = sxy / sxx;
    if (!std::isfinite(c1) || c1 <= 0.0) return {flat, 0.0};
    return {my - c1 * mx, c1};
}

PodFit fit_design(const Design& d, const FitOptions& opt) {
    if (d.n < 10) {
        throw ValidationError("POD fit needs at least 10 samples, got " + std::to_string(d.n));
    }
    const auto [any_s, any_f] = classes(d);
    if (!any_s) throw ValidationError("POD fit needs at least one success; all outcomes are failures");
    if (!any_f) throw ValidationError("POD fit needs at least one failure; all outcomes are successes");

    PodFit fit;
    fit.n = d.n;
    fit.separation = separated(d);
    auto start = opt.start ? *opt.start : initial_guess(d);
    double c0 = start[0];
    double c1 = std::clamp(start[1], -opt.c1_cap, opt.c1_cap);
    bool c1_fixed = false;

    Derivs dv = design_derivs(d, c0, c1);
    int it = 0;
    for (; it < opt.max_iterations; ++it) {
        const double gnorm = c1_fixed ? std::fabs(dv.g0) : std::max(std::fabs(dv.g0), std::fabs(dv.g1));
        if (gnorm < opt.gradient_tolerance) break;

        double step0;
        double step1;
        if (c1_fixed) {
            step0 = dv.h00 < 0.0 ? -dv.g0 / dv.h00 : dv.g0;
            step1 = 0.0;
        } else {
            // Solve (-H) step = g.
            const double a = -dv.h00;
            const double b = -dv.h01;
            const double c = -dv.h11;
            const double det = a * c - b * b;
            if (a > 0.0 && det > 0.0) {
                step0 = (c * dv.g0 - b * dv.g1) / det;
                step1 = (a * dv.g1 - b * dv.g0) / det;
            } else {
                step0 = dv.g0;
                step1 = dv.g1;
            }
        }

        double t = 1.0;
        double n0 = c0 + step0;
        double n1 = c1 + step1;
        // Below rounding level the likelihood cannot rank steps; use the gradient.
        const double predicted = dv.g0 * step0 + dv.g1 * step1;
        if (predicted <= 1e-12 * (1.0 + std::fabs(dv.l)) && std::fabs(n1) < opt.c1_cap) {
            const Derivs trial = design_derivs(d, n0, n1);
            const double trial_norm =
                c1_fixed ? std::fabs(trial.g0) : std::max(std::fabs(trial.g0), std::fabs(trial.g1));
            if (trial_norm < gnorm) {
                c0 = n0;
                c1 = n1;
                dv = trial;
                continue;
            }
        }
        double ll_new = design_loglik(d, n0, std::clamp(n1, -opt.c1_cap, opt.c1_cap));
        for (int h = 0; h < 60 && !(ll_new >= dv.l); ++h) {
            t *= 0.5;
            n0 = c0 + t * step0;
            n1 = c1 + t * step1;
            ll_new = design_loglik(d, n0, std::clamp(n1, -opt.c1_cap, opt.c1_cap));
        }
        if (!(ll_new >= dv.l)) break;  // no ascent possible at working precision
        if (std::fabs(n1) >= opt.c1_cap) {
            n1 = std::copysign(opt.c1_cap, n1);
            c1_fixed = true;
        }
        c0 = n0;
        c1 = n1;
        dv = design_derivs(d, c0, c1);
    }

    fit.c0 = c0;
    fit.c1 = c1;
    fit.iterations = it;
    fit.log_likelihood = dv.l;
    fit.gradient_norm = c1_fixed ? std::fabs(dv.g0) : std::max(std::fabs(dv.g0), std::fabs(dv.g1));
    fit.converged = fit.gradient_norm < opt.gradient_tolerance;
    fit.separation = fit.separation || c1_fixed;

    const double a = -dv.h00;
    const double b = -dv.h01;
    const double c = -dv.h11;
    const double det = a * c - b * b;
    if (!fit.separation && a > 0.0 && det > 0.0) {
        fit.cov = {{{c / det, -b / det}, {-b / det, a / det}}};
    }
    return fit;
}

}  // namespace

double log_likelihood(std::span<const PodSample> samples, double c0, double c1) {
    return design_loglik(canonical(samples), c0, c1);
}

PodFit fit_pod(std::span<const PodSample> samples, const FitOptions& options) {
    return fit_design(canonical(samples), options);
}

double contrast_at(const PodFit& fit, double p) {
    if (!fit.converged) throw ValidationError("contrast_at needs a converged POD fit");
    if (!(fit.c1 > 0.0)) {
        throw ValidationError("contrast_at needs c1 > 0 (curve is flat or decreasing)");
    }
    return (link(p) - fit.c0) / fit.c1;
}

PodFit average_coefficients(std::span<const PodFit> fits) {
    if (fits.empty()) throw ValidationError("no fits to average");
    PodFit out;
    out.converged = true;
    for (const auto& f : fits) {
        out.c0 += f.c0;
        out.c1 += f.c1;
        out.n += f.n;
        out.converged = out.converged && f.converged;
        out.separation = out.separation || f.separation;
    }
    out.c0 /= static_cast<double>(fits.size());
    out.c1 /= static_cast<double>(fits.size());
    return out;
}

PodInterval PodInterval::reported(double target, double point, double half_width) {
    PodInterval iv;
    iv.target = target;
    iv.point = point;
    iv.ci_low = point - half_width;
    iv.ci_high = point + half_width;
    iv.method = IntervalMethod::kReported;
    return iv;
}

namespace {

double normal_quantile(double level) {
    // Two-sided z for the common levels; others by bisection on erfc.
    const double tail = 0.5 * (1.0 - level);
    double lo = 0.0;
    double hi = 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(mid / std::sqrt(2.0)) > tail) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double percentile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

PodInterval wald_interval(const PodFit& fit, double p, double level) {
    const double point = contrast_at(fit, p);
    const double d0 = -1.0 / fit.c1;
    const double d1 = -(link(p) - fit.c0) / (fit.c1 * fit.c1);
    const double var = d0 * d0 * fit.cov[0][0] + 2.0 * d0 * d1 * fit.cov[0][1] + d1 * d1 * fit.cov[1][1];
    const double half = normal_quantile(level) * std::sqrt(std::max(var, 0.0));
    PodInterval iv;
    iv.target = p;
    iv.point = point;
    iv.ci_low = point - half;
    iv.ci_high = point + half;
    iv.method = IntervalMethod::kWald;
    iv.unstable = fit.separation || !(var > 0.0);
    return iv;
}

PodInterval bootstrap_interval(std::span<const PodSample> samples, double p, int resamples,
                               SeedSpec seed, const BootstrapOptions& options) {
    if (resamples < 1) throw ValidationError("bootstrap needs at least one resample");
    const Design full = canonical(samples);
    const PodFit base = fit_design(full, {});
    const double point = contrast_at(base, p);

    // Expanded canonical sample list; resamples become weights on `full`.
    std::vector<std::size_t> owner;
    owner.reserve(full.n);
    for (std::size_t i = 0; i < full.x.size(); ++i) {
        for (int k = 0; k < static_cast<int>(full.w[i]); ++k) owner.push_back(i);
    }

    struct Replicate {
        double value = 0.0;
        int redraws = 0;
        bool ok = false;
    };
    std::vector<Replicate> reps(static_cast<std::size_t>(resamples));
    FitOptions warm;
    warm.start = std::array<double, 2>{base.c0, base.c1};

    parallel_for(reps.size(), options.threads, [&](std::size_t b) {
        RandomStream rng(derive_seed(seed, b));
        Replicate& rep = reps[b];
        std::vector<double> counts(full.x.size());
        Design d;
        for (int attempt = 0; attempt <= options.retry_cap; ++attempt) {
            std::fill(counts.begin(), counts.end(), 0.0);
            for (std::size_t k = 0; k < owner.size(); ++k) counts[owner[rng.below(owner.size())]] += 1.0;
            d.x.clear();
            d.y.clear();
            d.w.clear();
            d.n = owner.size();
            for (std::size_t i = 0; i < counts.size(); ++i) {
                if (counts[i] == 0.0) continue;
                d.x.push_back(full.x[i]);
                d.y.push_back(full.y[i]);
                d.w.push_back(counts[i]);
            }
            const auto [any_s, any_f] = classes(d);
            if (!any_s || !any_f || separated(d)) {
                ++rep.redraws;
                continue;
            }
            const PodFit f = fit_design(d, warm);
            if (!f.converged || f.separation || !(f.c1 > 0.0)) {
                ++rep.redraws;
                continue;
            }
            rep.value = (link(p) - f.c0) / f.c1;
            rep.ok = true;
            return;
        }
    });

    PodInterval iv;
    iv.target = p;
    iv.point = point;
    iv.method = IntervalMethod::kBootstrap;
    iv.resamples = resamples;
    std::vector<double> values;
    bool exhausted = false;
    for (const auto& r : reps) {
        iv.degenerate += r.redraws;
        if (r.ok) {
            values.push_back(r.value);
        } else {
            exhausted = true;
        }
    }
    iv.unstable = exhausted || resamples < 20 ||
                  static_cast<double>(iv.degenerate) > 0.2 * static_cast<double>(resamples);
    if (values.empty()) {
        iv.ci_low = iv.ci_high = point;
        iv.unstable = true;
        return iv;
    }
    std::sort(values.begin(), values.end());
    const double tail = 0.5 * (1.0 - options.level);
    iv.ci_low = std::min(point, percentile_sorted(values, tail));
    iv.ci_high = std::max(point, percentile_sorted(values, 1.0 - tail));
    return iv;
}

CurveComparison compare_curves(const PodInterval& real, const PodInterval& generated) {
    CurveComparison c;
    c.real = real;
    c.generated = generated;
    c.point_real = real.point;
    c.point_generated = generated.point;
    c.point_gap = generated.point - real.point;
    const double lo = std::max(real.ci_low, generated.ci_low);
    const double hi = std::min(real.ci_high, generated.ci_high);
    c.equivalent = lo <= hi;
    c.interval_gap = c.equivalent ? 0.0 : lo - hi;
    return c;
}

}  // namespace xpod::pod
