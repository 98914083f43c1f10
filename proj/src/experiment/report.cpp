#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "xpod/error.hpp"
#include "xpod/experiment.hpp"
#include "xpod/svg.hpp"

namespace xpod::experiment {

using nlohmann::json;

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string fmt(double v, const char* f = "%.6g") {
    char buf[48];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

struct FalsePositives {
    std::size_t absent = 0;
    std::size_t positive = 0;
};

FalsePositives count_false_positives(const fs::path& csv) {
    std::ifstream in(csv);
    std::string line;
    FalsePositives fp;
    if (!std::getline(in, line)) return fp;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::stringstream ss(s);
        std::string c;
        while (std::getline(ss, c, ',')) {
            c.erase(std::remove_if(c.begin(), c.end(), [](char ch) { return ch == ' ' || ch == '\r'; }), c.end());
            cells.push_back(c);
        }
        return cells;
    };
    const auto header = split(line);
    const auto fo_it = std::find(header.begin(), header.end(), "fo_present");
    const auto fp_it = std::find(header.begin(), header.end(), "false_positive");
    if (fo_it == header.end() || fp_it == header.end()) return fp;
    const auto c_fo = static_cast<std::size_t>(fo_it - header.begin());
    const auto c_fp = static_cast<std::size_t>(fp_it - header.begin());
    while (std::getline(in, line)) {
        const auto cells = split(line);
        if (cells.size() != header.size()) continue;
        if (cells[c_fo] == "0") {
            ++fp.absent;
            if (cells[c_fp] == "1") ++fp.positive;
        }
    }
    return fp;
}

std::vector<svg::Point> curve_points(const pod::PodFit& fit, double lo, double hi, int n) {
    std::vector<svg::Point> pts;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * i / (n - 1);
        pts.emplace_back(x, fit.probability(x));
    }
    return pts;
}

double curve_hi(const PodReport& r) {
    double hi = 0.0;
    for (const auto& s : r.samples) hi = std::max(hi, s.contrast);
    for (const auto& iv : r.intervals) hi = std::max(hi, iv.ci_high);
    return hi > 0.0 ? 1.05 * hi : 1.0;
}

}  // namespace

std::optional<double> PodReport::false_positive_rate() const {
    if (n_absent == 0) return std::nullopt;
    return static_cast<double>(n_false_positive) / static_cast<double>(n_absent);
}

json PodReport::to_json() const {
    json iv = json::array();
    for (const auto& i : intervals) iv.push_back(pod::interval_to_json(i));
    json j{{"fit", pod::fit_to_json(fit)},
           {"intervals", iv},
           {"n_fo", n_fo},
           {"n_absent", n_absent},
           {"n_false_positive", n_false_positive}};
    j["exposure_ms"] = exposure_ms ? json(*exposure_ms) : json(nullptr);
    const auto rate = false_positive_rate();
    j["false_positive_rate"] = rate ? json(*rate) : json(nullptr);
    if (provenance) j["provenance"] = provenance->to_json();
    return j;
}

PodReport PodReport::from_json(const json& j) {
    PodReport r;
    try {
        r.fit = pod::fit_from_json(j.at("fit"));
        for (const auto& iv : j.at("intervals")) r.intervals.push_back(pod::interval_from_json(iv));
        if (j.contains("exposure_ms") && !j["exposure_ms"].is_null()) r.exposure_ms = j["exposure_ms"].get<double>();
        r.n_fo = j.value("n_fo", std::size_t{0});
        r.n_absent = j.value("n_absent", std::size_t{0});
        r.n_false_positive = j.value("n_false_positive", std::size_t{0});
        if (j.contains("provenance")) {
            Provenance p;
            p.config_hash = j["provenance"].at("config_hash").get<std::string>();
            p.master_seed = j["provenance"].at("master_seed").get<std::uint64_t>();
            r.provenance = p;
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed POD report: ") + e.what());
    }
    return r;
}

PodReport pod_from_outcomes(const fs::path& outcomes_csv, const PodSettings& settings, SeedSpec seed,
                            unsigned threads) {
    PodReport r;
    r.samples = pod::read_pod_csv(outcomes_csv);
    r.n_fo = r.samples.size();
    const auto fp = count_false_positives(outcomes_csv);
    r.n_absent = fp.absent;
    r.n_false_positive = fp.positive;
    r.fit = pod::fit_pod(r.samples);
    pod::BootstrapOptions bo;
    bo.level = settings.level;
    bo.threads = threads;
    for (std::size_t i = 0; i < settings.targets.size(); ++i) {
        r.intervals.push_back(
            pod::bootstrap_interval(r.samples, settings.targets[i], settings.bootstrap, derive_seed(seed, i), bo));
    }
    return r;
}

void write_pod_report(const PodReport& report, const PodSettings& settings, const fs::path& dir,
                      const std::string& stem) {
    fs::create_directories(dir);
    write_json(report.to_json(), dir / (stem + ".json"));
    const double hi = curve_hi(report);
    pod::write_curve_csv(report.fit, 0.0, hi, settings.curve_points, dir / (stem + "_curve.csv"));

    std::string title = "POD curve";
    if (report.exposure_ms) title += " at " + exposure_dir_name(*report.exposure_ms) + " ms";
    svg::Chart chart(title, "contrast dR", "probability of detection");
    chart.set_x_range(0.0, hi);
    chart.set_y_range(0.0, 1.0);
    chart.add_series("fit", curve_points(report.fit, 0.0, hi, settings.curve_points), kPalette[0]);
    std::vector<double> hits;
    std::vector<double> misses;
    for (const auto& s : report.samples) (s.success ? hits : misses).push_back(s.contrast);
    chart.add_rug(hits, true, "#333333");
    chart.add_rug(misses, false, "#333333");
    std::ostringstream data;
    data << "target,point,ci_low,ci_high,unstable\n";
    for (const auto& iv : report.intervals) {
        // interval band spans the full probability range at the target's contrast interval
        chart.add_band({{iv.ci_low, 0.0}, {iv.ci_high, 0.0}}, {{iv.ci_low, 1.0}, {iv.ci_high, 1.0}}, kPalette[1]);
        chart.add_marker(iv.point, iv.target, kPalette[1]);
        chart.add_note("dR@" + fmt(100.0 * iv.target, "%g") + "% = " + fmt(iv.point, "%.4f") + " [" +
                       fmt(iv.ci_low, "%.4f") + ", " + fmt(iv.ci_high, "%.4f") + "]" +
                       (iv.unstable ? " (unstable)" : ""));
        data << iv.target << ',' << fmt(iv.point, "%.10g") << ',' << fmt(iv.ci_low, "%.10g") << ','
             << fmt(iv.ci_high, "%.10g") << ',' << (iv.unstable ? 1 : 0) << '\n';
    }
    if (const auto rate = report.false_positive_rate()) chart.add_note("false-positive rate " + fmt(*rate, "%.3f"));
    data << "c0,c1\n" << fmt(report.fit.c0, "%.10g") << ',' << fmt(report.fit.c1, "%.10g") << '\n';
    chart.set_data_table(data.str());
    chart.write((dir / (stem + ".svg")).string());
}

double interpolate_threshold(const std::vector<SweepRow>& rows, double exposure_ms) {
    if (rows.size() < 2) throw ValidationError("interpolation needs at least two exposures");
    if (!(exposure_ms > 0.0)) throw ValidationError("query exposure must be > 0");
    std::vector<SweepRow> sorted = rows;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.exposure_ms < b.exposure_ms; });
    if (exposure_ms < sorted.front().exposure_ms || exposure_ms > sorted.back().exposure_ms) {
        throw ValidationError("query exposure " + exposure_dir_name(exposure_ms) + " ms lies outside the fitted range");
    }
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        const auto& lo = sorted[i];
        const auto& hi = sorted[i + 1];
        if (exposure_ms > hi.exposure_ms) continue;
        if (exposure_ms == lo.exposure_ms) return lo.interval.point;
        const double w = (std::log(exposure_ms) - std::log(lo.exposure_ms)) /
                         (std::log(hi.exposure_ms) - std::log(lo.exposure_ms));
        return lo.interval.point + w * (hi.interval.point - lo.interval.point);
    }
    return sorted.back().interval.point;
}

SweepReport build_sweep(std::vector<PodReport> reports, double target, const std::vector<double>& queries) {
    if (reports.size() < 2) throw ValidationError("sweep report needs at least two exposures");
    SweepReport s;
    s.target = target;
    std::sort(reports.begin(), reports.end(), [](const PodReport& a, const PodReport& b) {
        return a.exposure_ms.value_or(0.0) > b.exposure_ms.value_or(0.0);
    });
    for (const auto& r : reports) {
        if (!r.exposure_ms) throw ValidationError("POD report lacks an exposure time");
        const auto it = std::find_if(r.intervals.begin(), r.intervals.end(),
                                     [&](const pod::PodInterval& iv) { return std::fabs(iv.target - target) < 1e-12; });
        if (it == r.intervals.end()) {
            throw ValidationError("POD report for " + exposure_dir_name(*r.exposure_ms) + " ms has no fit for P = " +
                                  fmt(target));
        }
        if (!s.rows.empty() && exposure_dir_name(s.rows.back().exposure_ms) == exposure_dir_name(*r.exposure_ms)) {
            throw ValidationError("exposure " + exposure_dir_name(*r.exposure_ms) + " ms appears twice");
        }
        s.rows.push_back({*r.exposure_ms, *it, r.false_positive_rate()});
    }
    s.monotone = true;
    for (std::size_t i = 0; i + 1 < s.rows.size(); ++i) {
        s.monotone = s.monotone && s.rows[i + 1].interval.point > s.rows[i].interval.point;
    }
    for (double q : queries) s.queries.push_back({q, interpolate_threshold(s.rows, q)});
    s.reports = std::move(reports);
    return s;
}

json SweepReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        json row = pod::interval_to_json(r.interval);
        row["exposure_ms"] = r.exposure_ms;
        row["false_positive_rate"] = r.false_positive_rate ? json(*r.false_positive_rate) : json(nullptr);
        rows_j.push_back(row);
    }
    json q = json::array();
    for (const auto& x : queries) q.push_back({{"exposure_ms", x.exposure_ms}, {"contrast", x.contrast}});
    json reps = json::array();
    for (const auto& r : reports) reps.push_back(r.to_json());
    json j{{"target", target}, {"rows", rows_j}, {"monotone", monotone}, {"queries", q}, {"reports", reps}};
    if (provenance) j["provenance"] = provenance->to_json();
    return j;
}

void write_sweep(const SweepReport& sweep, const fs::path& dir) {
    fs::create_directories(dir);
    write_json(sweep.to_json(), dir / "sweep_report.json");

    std::ostringstream csv;
    csv << "exposure_ms,target,point,ci_low,ci_high,unstable,false_positive_rate\n";
    for (const auto& r : sweep.rows) {
        csv << exposure_dir_name(r.exposure_ms) << ',' << fmt(r.interval.target, "%g") << ','
            << fmt(r.interval.point, "%.10g") << ',' << fmt(r.interval.ci_low, "%.10g") << ','
            << fmt(r.interval.ci_high, "%.10g") << ',' << (r.interval.unstable ? 1 : 0) << ','
            << (r.false_positive_rate ? fmt(*r.false_positive_rate, "%.6g") : std::string()) << '\n';
    }
    {
        std::ofstream out(dir / "sweep.csv", std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write " + (dir / "sweep.csv").string());
        out << csv.str();
    }

    double hi = 0.0;
    for (const auto& r : sweep.rows) hi = std::max(hi, r.interval.ci_high);
    hi = hi > 0.0 ? 1.5 * hi : 1.0;
    svg::Chart overlay("POD curves by exposure", "contrast dR", "probability of detection");
    overlay.set_x_range(0.0, hi);
    overlay.set_y_range(0.0, 1.0);
    std::size_t color = 0;
    for (const auto& r : sweep.reports) {
        overlay.add_series(exposure_dir_name(*r.exposure_ms) + " ms", curve_points(r.fit, 0.0, hi, 101),
                           kPalette[color++ % std::size(kPalette)]);
    }
    overlay.set_data_table(csv.str());
    overlay.write((dir / "pod_overlay.svg").string());

    svg::Chart thr("Contrast needed for POD " + fmt(100.0 * sweep.target, "%g") + "%", "exposure time (ms)",
                   "dR at target POD");
    thr.set_log_x(true);
    std::vector<svg::Point> pts;
    for (auto it = sweep.rows.rbegin(); it != sweep.rows.rend(); ++it) {
        pts.emplace_back(it->exposure_ms, it->interval.point);
        thr.add_error_bar(it->exposure_ms, it->interval.ci_low, it->interval.ci_high, kPalette[0]);
        thr.add_marker(it->exposure_ms, it->interval.point, kPalette[0]);
    }
    thr.add_series("threshold", pts, kPalette[0]);
    for (const auto& q : sweep.queries) {
        thr.add_marker(q.exposure_ms, q.contrast, kPalette[1]);
        thr.add_note("interpolated " + exposure_dir_name(q.exposure_ms) + " ms: " + fmt(q.contrast, "%.4f"));
    }
    thr.add_note(sweep.monotone ? "monotone: threshold rises as exposure falls"
                                : "NOT monotone in exposure");
    thr.set_data_table(csv.str());
    thr.write((dir / "threshold_vs_exposure.svg").string());
}

}  // namespace xpod::experiment
