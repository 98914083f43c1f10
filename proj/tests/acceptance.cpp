#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "xpod/calib.hpp"
#include "xpod/experiment.hpp"
#include "xpod/forward.hpp"
#include "xpod/noisegen.hpp"
#include "xpod/parallel.hpp"
#include "xpod/phantom.hpp"
#include "xpod/pod.hpp"
#include "xpod/random.hpp"

namespace fs = std::filesystem;
using namespace xpod;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Result {
    bool pass = false;
    std::string detail;
};

DetectorCalibration truth_detector() {
    DetectorCalibration c;
    c.gain = 1.5;
    c.dark_offset = 100.0;
    c.dark_var = 25.0;
    return c;
}

Result calibration_round_trip() {
    const auto t0 = Clock::now();
    const int w = 128, h = 128, frames = 500;
    const DetectorCalibration truth = truth_detector();
    const std::vector<double> levels{50, 150, 300, 500, 800, 1200, 1800, 2500};

    auto series = [&](double intensity, std::uint64_t index) {
        const ImageGrid expected(w, h, 1.0, std::vector<double>(static_cast<std::size_t>(w) * h, intensity));
        calib::MomentAccumulator acc;
        for (int f = 0; f < frames; ++f) {
            acc.add(noise::sample_noisy(expected, truth, derive_seed({11, index}, static_cast<std::uint64_t>(f))));
        }
        return calib::moments_from(acc);
    };

    calib::CalibrationMoments m{series(0.0, 0), {}};
    for (std::size_t l = 0; l < levels.size(); ++l) m.levels.push_back(series(levels[l], l + 1));
    const calib::NoiseFit fit = calib::fit_noise_params(m);
    const DetectorCalibration s = fit.scalar_summary();
    const double secs = seconds_since(t0);

    const double g = s.gain.scalar(), de = s.dark_offset.scalar(), ve = s.dark_var.scalar();
    const bool pass = std::fabs(g / 1.5 - 1.0) <= 0.05 && std::fabs(de - 100.0) <= 1.0 &&
                      std::fabs(ve / 25.0 - 1.0) <= 0.10 && secs < 60.0;
    return {pass, fmt("g=%.4f d_e=%.4f sigma_e^2=%.3f valid=%zu/%d runtime=%.1fs", g, de, ve,
                      fit.n_valid, w * h, secs)};
}

Result noise_moments() {
    const int w = 1000, h = 1000;
    const ImageGrid expected(w, h, 1.0, std::vector<double>(static_cast<std::size_t>(w) * h, 1000.0));
    const ImageGrid y = noise::sample_noisy(expected, truth_detector(), {2, 0});
    double mean = 0;
    for (double v : y.values()) mean += v;
    const double n = static_cast<double>(y.size());
    mean /= n;
    double var = 0;
    for (double v : y.values()) var += (v - mean) * (v - mean);
    var /= n - 1;
    const double se_mean = std::sqrt(1525.0 / n);
    const double se_var = 1525.0 * std::sqrt(2.0 / n);
    const double z_mean = (mean - 1100.0) / se_mean;
    const double z_var = (var - 1525.0) / se_var;
    return {std::fabs(z_mean) <= 3.0 && std::fabs(z_var) <= 3.0,
            fmt("mean=%.3f (z=%.2f) var=%.2f (z=%.2f)", mean, z_mean, var, z_var)};
}

Result psf_round_trip() {
    const int n = 512;
    RandomStream rng({3, 0});
    std::vector<double> px(static_cast<std::size_t>(n) * n);
    for (auto& v : px) v = rng.normal();
    const ImageGrid blurred = noise::blur(ImageGrid(n, n, 1.0, std::move(px)), 0.8);
    const double sigma = calib::estimate_psf_sigma(blurred);
    return {sigma >= 0.72 && sigma <= 0.88, fmt("sigma=%.4f", sigma)};
}

Result flux_coefficient() {
    const double d_e = 100.0;
    bool pass = true;
    std::string detail;
    for (double k : {0.58, 3.86}) {
        std::vector<calib::FluxPoint> pts;
        for (double t : {10.0, 20.0, 50.0, 100.0, 1000.0}) pts.push_back({t, d_e + k * t});
        const double got = calib::fit_flux_coefficient(pts, d_e).k;
        const double rel = std::fabs(got - k) / k;
        pass = pass && rel <= 8 * std::numeric_limits<double>::epsilon();
        detail += fmt("k=%.2f got=%.17g rel_err=%.2e ", k, got, rel);
    }
    detail.pop_back();
    return {pass, detail};
}

std::vector<pod::PodSample> simulate_pod(std::uint64_t seed, std::size_t n, double c0, double c1) {
    RandomStream rng({seed, 0});
    std::vector<pod::PodSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 0.4 * rng.uniform();
        out[i] = {x, rng.uniform() < pod::inverse_link(c0 + c1 * x), {}};
    }
    return out;
}

Result pod_recovery(int resamples) {
    const auto t0 = Clock::now();
    const double c0 = -2.0, c1 = 20.0;
    const double truth = (pod::link(0.9) - c0) / c1;

    const auto samples = simulate_pod(500, 2000, c0, c1);
    const pod::PodFit fit = pod::fit_pod(samples);
    const double z0 = (fit.c0 - c0) / std::sqrt(fit.cov[0][0]);
    const double z1 = (fit.c1 - c1) / std::sqrt(fit.cov[1][1]);
    const double point = pod::contrast_at(fit, 0.9);

    const int reps = 200;
    std::vector<int> covered(reps, 0);
    parallel_for(static_cast<std::size_t>(reps), 0, [&](std::size_t r) {
        const auto s = simulate_pod(1000 + r, 2000, c0, c1);
        const pod::PodInterval iv = pod::bootstrap_interval(s, 0.9, resamples, {2000 + r, 0});
        covered[r] = iv.ci_low <= truth && truth <= iv.ci_high;
    });
    double coverage = 0;
    for (int c : covered) coverage += c;
    coverage /= reps;
    const double secs = seconds_since(t0);

    const bool pass = fit.converged && std::fabs(z0) <= 3 && std::fabs(z1) <= 3 &&
                      std::fabs(point - 0.141702) <= 0.01 && coverage >= 0.85 && coverage <= 0.95 &&
                      secs < 300.0;
    return {pass, fmt("c0=%.4f (z=%.2f) c1=%.3f (z=%.2f) dR90=%.6f coverage=%.3f over %d reps "
                      "B=%d runtime=%.1fs",
                      fit.c0, z0, fit.c1, z1, point, coverage, reps, resamples, secs)};
}

Result closed_forms() {
    std::vector<std::pair<const char*, double>> err;
    err.push_back({"dR(alpha=0)", std::fabs(forward::delta_r({0.0, 2.0, 2.0, 1.0}))});
    err.push_back({"dR(0.1,2,2,1)", std::fabs(forward::delta_r({0.1, 2.0, 2.0, 1.0}) - 0.166667)});
    err.push_back({"dR asymptote", std::fabs(forward::delta_r({1e9, 2.0, 2.0, 1.0}) - 1.0)});
    err.push_back({"link(0.9)", std::fabs(pod::link(0.9) - 0.834032)});

    phantom::PhantomSpec slab{ImageGrid(1, 1, 1.0, std::vector<double>{1.0}), ImageGrid(1, 1, 1.0),
                              phantom::default_meat(), phantom::default_bone()};
    const auto ch = forward::ChannelSettings::make("a", 1.0, 1000.0, {{"meat", 1.0}, {"bone", 1.0}});
    err.push_back({"Beer", std::fabs(forward::project(slab, ch).at(0, 0) - 367.879441)});

    bool pass = true;
    std::string detail;
    for (const auto& [name, e] : err) {
        pass = pass && e <= 1e-6;
        detail += fmt("%s err=%.1e ", name, e);
    }
    detail.pop_back();
    return {pass, detail};
}

struct SweepRun {
    experiment::SweepReport report;
    double seconds = 0.0;
};

SweepRun run_sweep(const fs::path& out, unsigned threads) {
    const auto cfg = experiment::load_config(fs::path(XPOD_CONFIG_DIR) / "sweep.json");
    fs::remove_all(out);
    const auto t0 = Clock::now();
    SweepRun r{experiment::run_pipeline(cfg, out, threads), 0.0};
    r.seconds = seconds_since(t0);
    return r;
}

Result trend(const SweepRun& run, std::size_t min_fo) {
    const auto& rows = run.report.rows;
    std::string detail;
    bool pass = rows.size() == 4 && run.seconds < 900.0;
    for (const auto& rep : run.report.reports) pass = pass && rep.n_fo >= min_fo;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        detail += fmt("%gms=%.4f ", rows[i].exposure_ms, rows[i].interval.point);
        if (i == 0) continue;
        const double ratio = rows[i].interval.point / rows[i - 1].interval.point;
        const double expect = std::sqrt(rows[i - 1].exposure_ms / rows[i].exposure_ms);
        pass = pass && rows[i].interval.point > rows[i - 1].interval.point &&
               std::fabs(ratio / expect - 1.0) <= 0.35;
        detail += fmt("(ratio %.3f vs %.3f) ", ratio, expect);
    }
    detail += fmt("runtime=%.1fs", run.seconds);
    return {pass, detail};
}

Result curve_equivalence() {
    using pod::PodInterval;
    struct Row {
        double t, gen, gen_hw, real, real_hw;
    };
    const std::vector<Row> table{{100, 0.10, 0.02, 0.09, 0.02}, {50, 0.13, 0.02, 0.14, 0.17},
                                 {20, 0.18, 0.02, 0.21, 0.04}};
    bool pass = true;
    std::string detail;
    for (const auto& r : table) {
        const auto cmp = pod::compare_curves(PodInterval::reported(0.9, r.real, r.real_hw),
                                             PodInterval::reported(0.9, r.gen, r.gen_hw));
        pass = pass && cmp.equivalent;
        detail += fmt("%gms %s, ", r.t, cmp.equivalent ? "EQUIVALENT" : "NOT EQUIVALENT");
    }
    PodInterval a = PodInterval::reported(0.9, 0.15, 0.05);
    PodInterval b = PodInterval::reported(0.9, 0.35, 0.05);
    const auto disjoint = pod::compare_curves(a, b);
    pass = pass && !disjoint.equivalent;
    detail += fmt("[0.1,0.2] vs [0.3,0.4] %s", disjoint.equivalent ? "EQUIVALENT" : "NOT EQUIVALENT");
    return {pass, detail};
}

std::vector<fs::path> tree_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Result determinism(const fs::path& a, unsigned threads_a, const fs::path& b, unsigned threads_b) {
    const auto files_a = tree_files(a);
    const auto files_b = tree_files(b);
    std::size_t outcomes = 0, mismatched = 0;
    for (const auto& f : files_a) {
        if (f.filename() == "outcomes.csv") ++outcomes;
        if (read_all(a / f) != read_all(b / f)) ++mismatched;
    }
    const bool pass = files_a == files_b && outcomes == 4 && mismatched == 0;
    return {pass, fmt("threads %u vs %u: %zu files compared (%zu outcome CSVs), %zu differ%s", threads_a,
                      threads_b, files_a.size(), outcomes, mismatched,
                      files_a == files_b ? "" : ", file sets differ")};
}

}  // namespace

int main() {
    const fs::path work = fs::temp_directory_path() / "xpod_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    int failed = 0;
    auto report = [&](int n, const Result& r) {
        std::printf("criterion %d %s: %s\n", n, r.pass ? "PASS" : "FAIL", r.detail.c_str());
        std::fflush(stdout);
        if (!r.pass) ++failed;
    };
    auto guarded = [&](int n, auto&& fn) {
        try {
            report(n, fn());
        } catch (const std::exception& e) {
            report(n, {false, std::string("error: ") + e.what()});
        }
    };

    guarded(1, calibration_round_trip);
    guarded(2, noise_moments);
    guarded(3, psf_round_trip);
    guarded(4, flux_coefficient);
    guarded(5, [] { return pod_recovery(1000); });
    guarded(6, closed_forms);

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned threads_a = hw;
    const unsigned threads_b = hw > 1 ? 1 : 3;
    std::optional<SweepRun> first;
    guarded(7, [&] {
        first = run_sweep(work / "sweep_a", threads_a);
        return trend(*first, 300);
    });
    guarded(8, curve_equivalence);
    guarded(9, [&] {
        if (!first) return Result{false, "criterion 7 pipeline did not complete"};
        run_sweep(work / "sweep_b", threads_b);
        return determinism(work / "sweep_a", threads_a, work / "sweep_b", threads_b);
    });

    fs::remove_all(work);
    std::printf("%d of 9 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
