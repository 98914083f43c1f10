#pragma once

#include <string>
#include <utility>
#include <vector>

namespace xpod::svg {

using Point = std::pair<double, double>;

/// Minimal self-contained line chart. Each series becomes exactly one <path>;
/// bands are <polygon>s and rugs/error bars are <line>s, so a reader can count
/// curves by counting paths.
class Chart {
public:
    Chart(std::string title, std::string x_label, std::string y_label);

    void set_log_x(bool on) { log_x_ = on; }
    void set_x_range(double lo, double hi);
    void set_y_range(double lo, double hi);

    void add_series(std::string name, std::vector<Point> points, std::string color);
    /// Closed region between two curves sampled on the same x values.
    void add_band(std::vector<Point> lower, std::vector<Point> upper, std::string color);
    void add_rug(std::vector<double> xs, bool top, std::string color);
    void add_error_bar(double x, double lo, double hi, std::string color);
    void add_marker(double x, double y, std::string color);
    /// Free text placed in the chart corner.
    void add_note(std::string text);
    /// Embedded as an XML comment so the plot carries its own data.
    void set_data_table(std::string csv);

    std::string render() const;
    void write(const std::string& path) const;

private:
    struct Series {
        std::string name;
        std::vector<Point> points;
        std::string color;
    };
    struct Band {
        std::vector<Point> lower;
        std::vector<Point> upper;
        std::string color;
    };
    struct Rug {
        std::vector<double> xs;
        bool top;
        std::string color;
    };
    struct Bar {
        double x, lo, hi;
        std::string color;
    };
    struct Marker {
        double x, y;
        std::string color;
    };

    double tx(double x) const;
    double ty(double y) const;
    void fit_ranges(double& x0, double& x1, double& y0, double& y1) const;

    std::string title_;
    std::string x_label_;
    std::string y_label_;
    bool log_x_ = false;
    bool fixed_x_ = false;
    bool fixed_y_ = false;
    double x0_ = 0.0, x1_ = 1.0, y0_ = 0.0, y1_ = 1.0;
    std::vector<Series> series_;
    std::vector<Band> bands_;
    std::vector<Rug> rugs_;
    std::vector<Bar> bars_;
    std::vector<Marker> markers_;
    std::vector<std::string> notes_;
    std::string data_;
};

/// Escapes &, <, > and quotes for XML text and attributes.
std::string escape(const std::string& s);

}  // namespace xpod::svg
