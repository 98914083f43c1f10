#include "xpod/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "xpod/error.hpp"

namespace xpod::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::vector<double> linear_ticks(double lo, double hi) {
    const double span = hi - lo;
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) break;
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) {
        ticks.push_back(std::fabs(t) < 1e-12 * span ? 0.0 : t);
    }
    return ticks;
}

std::vector<double> log_ticks(double lo, double hi) {
    std::vector<double> ticks;
    for (int e = static_cast<int>(std::floor(std::log10(lo))); e <= static_cast<int>(std::ceil(std::log10(hi))); ++e) {
        for (double m : {1.0, 2.0, 5.0}) {
            const double t = m * std::pow(10.0, e);
            if (t >= lo * (1 - 1e-9) && t <= hi * (1 + 1e-9)) ticks.push_back(t);
        }
    }
    return ticks;
}

}  // namespace

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

Chart::Chart(std::string title, std::string x_label, std::string y_label)
    : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

void Chart::set_x_range(double lo, double hi) {
    x0_ = lo;
    x1_ = hi;
    fixed_x_ = true;
}

void Chart::set_y_range(double lo, double hi) {
    y0_ = lo;
    y1_ = hi;
    fixed_y_ = true;
}

void Chart::add_series(std::string name, std::vector<Point> points, std::string color) {
    series_.push_back({std::move(name), std::move(points), std::move(color)});
}

void Chart::add_band(std::vector<Point> lower, std::vector<Point> upper, std::string color) {
    bands_.push_back({std::move(lower), std::move(upper), std::move(color)});
}

void Chart::add_rug(std::vector<double> xs, bool top, std::string color) {
    rugs_.push_back({std::move(xs), top, std::move(color)});
}

void Chart::add_error_bar(double x, double lo, double hi, std::string color) {
    bars_.push_back({x, lo, hi, std::move(color)});
}

void Chart::add_marker(double x, double y, std::string color) {
    markers_.push_back({x, y, std::move(color)});
}

void Chart::add_note(std::string text) { notes_.push_back(std::move(text)); }

void Chart::set_data_table(std::string csv) { data_ = std::move(csv); }

void Chart::fit_ranges(double& x0, double& x1, double& y0, double& y1) const {
    const double inf = std::numeric_limits<double>::infinity();
    double ax0 = inf, ax1 = -inf, ay0 = inf, ay1 = -inf;
    auto take = [&](double x, double y) {
        if (!std::isfinite(x) || !std::isfinite(y)) return;
        if (log_x_ && !(x > 0.0)) return;
        ax0 = std::min(ax0, x);
        ax1 = std::max(ax1, x);
        ay0 = std::min(ay0, y);
        ay1 = std::max(ay1, y);
    };
    for (const auto& s : series_) {
        for (const auto& [x, y] : s.points) take(x, y);
    }
    for (const auto& b : bands_) {
        for (const auto& [x, y] : b.lower) take(x, y);
        for (const auto& [x, y] : b.upper) take(x, y);
    }
    for (const auto& b : bars_) {
        take(b.x, b.lo);
        take(b.x, b.hi);
    }
    for (const auto& m : markers_) take(m.x, m.y);
    if (!std::isfinite(ax0)) {
        ax0 = log_x_ ? 1.0 : 0.0;
        ax1 = log_x_ ? 10.0 : 1.0;
        ay0 = 0.0;
        ay1 = 1.0;
    }
    if (ax1 <= ax0) ax1 = log_x_ ? ax0 * 10.0 : ax0 + 1.0;
    if (ay1 <= ay0) ay1 = ay0 + 1.0;
    if (!fixed_x_) {
        if (log_x_) {
            x0 = ax0 / 1.2;
            x1 = ax1 * 1.2;
        } else {
            const double pad = 0.05 * (ax1 - ax0);
            x0 = ax0 - pad;
            x1 = ax1 + pad;
        }
    }
    if (!fixed_y_) {
        const double pad = 0.05 * (ay1 - ay0);
        y0 = ay0 - pad;
        y1 = ay1 + pad;
    }
}

double Chart::tx(double x) const {
    const double w = kWidth - kLeft - kRight;
    if (log_x_) return kLeft + w * (std::log(x) - std::log(x0_)) / (std::log(x1_) - std::log(x0_));
    return kLeft + w * (x - x0_) / (x1_ - x0_);
}

double Chart::ty(double y) const {
    const double h = kHeight - kTop - kBottom;
    return kTop + h * (1.0 - (y - y0_) / (y1_ - y0_));
}

std::string Chart::render() const {
    Chart c = *this;
    c.fit_ranges(c.x0_, c.x1_, c.y0_, c.y1_);
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    if (!data_.empty()) {
        std::string safe = data_;
        for (std::size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- -");
        o << "<!-- data\n" << safe << (safe.back() == '\n' ? "" : "\n") << "-->\n";
    }
    o << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    o << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">" << escape(title_) << "</text>\n";

    const double px0 = kLeft, px1 = kWidth - kRight, py0 = kTop, py1 = kHeight - kBottom;
    o << "<g clip-path=\"none\">\n";
    for (const auto& b : c.bands_) {
        o << "<polygon fill=\"" << b.color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (const auto& [x, y] : b.upper) o << num(c.tx(x)) << ',' << num(c.ty(y)) << ' ';
        for (auto it = b.lower.rbegin(); it != b.lower.rend(); ++it) {
            o << num(c.tx(it->first)) << ',' << num(c.ty(it->second)) << ' ';
        }
        o << "\"/>\n";
    }
    for (const auto& s : c.series_) {
        o << "<path fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" d=\"";
        bool first = true;
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y) || (log_x_ && !(x > 0.0))) continue;
            o << (first ? 'M' : 'L') << num(c.tx(x)) << ',' << num(c.ty(y)) << ' ';
            first = false;
        }
        o << "\"><title>" << escape(s.name) << "</title></path>\n";
    }
    for (const auto& r : c.rugs_) {
        const double y_base = r.top ? py0 : py1;
        const double dir = r.top ? 1.0 : -1.0;
        for (double x : r.xs) {
            if (!std::isfinite(x) || x < c.x0_ || x > c.x1_) continue;
            o << "<line x1=\"" << num(c.tx(x)) << "\" y1=\"" << num(y_base) << "\" x2=\"" << num(c.tx(x))
              << "\" y2=\"" << num(y_base + dir * 8.0) << "\" stroke=\"" << r.color
              << "\" stroke-opacity=\"0.5\"/>\n";
        }
    }
    for (const auto& b : c.bars_) {
        o << "<line x1=\"" << num(c.tx(b.x)) << "\" y1=\"" << num(c.ty(b.lo)) << "\" x2=\""
          << num(c.tx(b.x)) << "\" y2=\"" << num(c.ty(b.hi)) << "\" stroke=\"" << b.color
          << "\" stroke-width=\"1.5\"/>\n";
    }
    for (const auto& m : c.markers_) {
        o << "<circle cx=\"" << num(c.tx(m.x)) << "\" cy=\"" << num(c.ty(m.y)) << "\" r=\"3.5\" fill=\""
          << m.color << "\"/>\n";
    }
    o << "</g>\n";

    // axes
    o << "<line x1=\"" << px0 << "\" y1=\"" << py1 << "\" x2=\"" << px1 << "\" y2=\"" << py1
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << px0 << "\" y1=\"" << py0 << "\" x2=\"" << px0 << "\" y2=\"" << py1
      << "\" stroke=\"black\"/>\n";
    for (double t : log_x_ ? log_ticks(c.x0_, c.x1_) : linear_ticks(c.x0_, c.x1_)) {
        o << "<line x1=\"" << num(c.tx(t)) << "\" y1=\"" << py1 << "\" x2=\"" << num(c.tx(t)) << "\" y2=\""
          << py1 + 5 << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << num(c.tx(t)) << "\" y=\"" << py1 + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << tick_label(t)
          << "</text>\n";
    }
    for (double t : linear_ticks(c.y0_, c.y1_)) {
        o << "<line x1=\"" << px0 - 5 << "\" y1=\"" << num(c.ty(t)) << "\" x2=\"" << px0 << "\" y2=\""
          << num(c.ty(t)) << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << px0 - 8 << "\" y=\"" << num(c.ty(t) + 4)
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << tick_label(t)
          << "</text>\n";
    }
    o << "<text x=\"" << (px0 + px1) / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << escape(x_label_)
      << "</text>\n";
    o << "<text x=\"16\" y=\"" << (py0 + py1) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 16 " << (py0 + py1) / 2 << ")\">" << escape(y_label_)
      << "</text>\n";

    double ly = py0 + 14;
    for (const auto& s : c.series_) {
        o << "<text x=\"" << px1 - 6 << "\" y=\"" << num(ly) << "\" text-anchor=\"end\" "
             "font-family=\"sans-serif\" font-size=\"11\" fill=\"" << s.color << "\">" << escape(s.name)
          << "</text>\n";
        ly += 14;
    }
    for (const auto& n : c.notes_) {
        o << "<text x=\"" << px0 + 8 << "\" y=\"" << num(ly) << "\" font-family=\"sans-serif\" "
             "font-size=\"11\">" << escape(n) << "</text>\n";
        ly += 14;
    }
    o << "</svg>\n";
    return o.str();
}

void Chart::write(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write " + path);
    out << render();
    if (!out) throw RuntimeFailure("failed writing " + path);
}

}  // namespace xpod::svg
