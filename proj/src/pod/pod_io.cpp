#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "xpod/error.hpp"
#include "xpod/pod.hpp"

namespace xpod::pod {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

std::vector<PodSample> read_pod_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open outcome file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty outcome file " + path.string());
    const auto header = split_csv(line);
    auto find = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int c_id = find("sample_id");
    const int c_x = find("contrast");
    const int c_y = find("outcome");
    const int c_fo = find("fo_present");
    if (c_x < 0 || c_y < 0) {
        throw ValidationError(path.string() + " needs columns contrast and outcome");
    }

    std::vector<PodSample> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv(line);
        const std::string where = path.string() + " row " + std::to_string(row);
        if (cells.size() != header.size()) throw ValidationError(where + " has wrong column count");
        auto flag = [&](int col) {
            const auto& s = cells[static_cast<std::size_t>(col)];
            if (s == "0" || s == "false") return false;
            if (s == "1" || s == "true") return true;
            throw ValidationError(where + ": expected 0 or 1, got '" + s + "'");
        };
        if (c_fo >= 0 && !flag(c_fo)) continue;
        PodSample s;
        try {
            std::size_t used = 0;
            const auto& cell = cells[static_cast<std::size_t>(c_x)];
            s.contrast = std::stod(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            throw ValidationError(where + ": contrast is not a number");
        }
        if (!std::isfinite(s.contrast)) throw ValidationError(where + ": contrast is not finite");
        s.success = flag(c_y);
        if (c_id >= 0) s.id = cells[static_cast<std::size_t>(c_id)];
        out.push_back(std::move(s));
    }
    return out;
}

json fit_to_json(const PodFit& f) {
    return json{{"c0", f.c0},
                {"c1", f.c1},
                {"cov", {{f.cov[0][0], f.cov[0][1]}, {f.cov[1][0], f.cov[1][1]}}},
                {"n", f.n},
                {"converged", f.converged},
                {"separation", f.separation},
                {"log_likelihood", f.log_likelihood},
                {"gradient_norm", f.gradient_norm},
                {"iterations", f.iterations}};
}

PodFit fit_from_json(const json& j) {
    PodFit f;
    f.c0 = j.at("c0").get<double>();
    f.c1 = j.at("c1").get<double>();
    if (j.contains("cov")) {
        for (int r = 0; r < 2; ++r) {
            for (int c = 0; c < 2; ++c) f.cov[r][c] = j["cov"].at(r).at(c).get<double>();
        }
    }
    f.n = j.value("n", std::size_t{0});
    f.converged = j.value("converged", true);
    f.separation = j.value("separation", false);
    f.log_likelihood = j.value("log_likelihood", 0.0);
    f.gradient_norm = j.value("gradient_norm", 0.0);
    f.iterations = j.value("iterations", 0);
    return f;
}

std::string method_name(IntervalMethod m) {
    switch (m) {
        case IntervalMethod::kBootstrap: return "bootstrap";
        case IntervalMethod::kWald: return "wald";
        case IntervalMethod::kReported: return "reported";
    }
    return "unknown";
}

json interval_to_json(const PodInterval& iv) {
    return json{{"target", iv.target},         {"point", iv.point},
                {"ci_low", iv.ci_low},         {"ci_high", iv.ci_high},
                {"method", method_name(iv.method)}, {"resamples", iv.resamples},
                {"degenerate", iv.degenerate}, {"unstable", iv.unstable}};
}

PodInterval interval_from_json(const json& j) {
    PodInterval iv;
    iv.target = j.at("target").get<double>();
    iv.point = j.at("point").get<double>();
    iv.ci_low = j.at("ci_low").get<double>();
    iv.ci_high = j.at("ci_high").get<double>();
    const auto m = j.value("method", std::string("bootstrap"));
    if (m == "bootstrap") {
        iv.method = IntervalMethod::kBootstrap;
    } else if (m == "wald") {
        iv.method = IntervalMethod::kWald;
    } else if (m == "reported") {
        iv.method = IntervalMethod::kReported;
    } else {
        throw ValidationError("unknown interval method " + m);
    }
    iv.resamples = j.value("resamples", 0);
    iv.degenerate = j.value("degenerate", 0);
    iv.unstable = j.value("unstable", false);
    return iv;
}

void write_curve_csv(const PodFit& fit, double lo, double hi, int points, const fs::path& path) {
    if (points < 2 || !(hi > lo)) throw ValidationError("curve grid needs hi > lo and >= 2 points");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << "contrast,pod\n";
    char buf[96];
    for (int i = 0; i < points; ++i) {
        const double x = lo + (hi - lo) * i / (points - 1);
        std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", x, fit.probability(x));
        out << buf;
    }
}

}  // namespace xpod::pod
