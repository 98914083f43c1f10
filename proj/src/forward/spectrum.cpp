#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "xpod/error.hpp"
#include "xpod/forward.hpp"

namespace xpod::forward {

void SpectrumModel::validate() const {
    const std::size_t n = energies_kev.size();
    if (n < 2) throw ValidationError("spectrum needs at least two energies");
    if (phi.size() != n || sensitivity.size() != n || gain.size() != n) {
        throw ValidationError("spectrum arrays differ in length");
    }
    bool any_flux = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && !(energies_kev[i] > energies_kev[i - 1])) {
            throw ValidationError("spectrum energies must be strictly increasing");
        }
        if (!(phi[i] >= 0.0) || !(sensitivity[i] >= 0.0) || !(gain[i] >= 0.0) ||
            !std::isfinite(phi[i]) || !std::isfinite(sensitivity[i]) || !std::isfinite(gain[i])) {
            throw ValidationError("spectrum weights must be finite and >= 0");
        }
        any_flux = any_flux || phi[i] > 0.0;
    }
    if (!any_flux) throw ValidationError("spectrum phi is all zero");
}

SpectrumModel read_spectrum_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open spectrum " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("empty spectrum file " + path.string());

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cell.erase(std::remove_if(cell.begin(), cell.end(), ::isspace), cell.end());
            header.push_back(cell);
        }
    }
    auto column = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            throw ValidationError("spectrum " + path.string() + " lacks column " + name);
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ce = column("energy_keV");
    const std::size_t cp = column("phi");
    const std::size_t cs = column("sensitivity");
    const std::size_t cg = column("gain");

    SpectrumModel s;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                cells.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw ValidationError("spectrum " + path.string() + " row " +
                                      std::to_string(row) + ": not a number");
            }
        }
        if (cells.size() != header.size()) {
            throw ValidationError("spectrum " + path.string() + " row " + std::to_string(row) +
                                  " has wrong column count");
        }
        s.energies_kev.push_back(cells[ce]);
        s.phi.push_back(cells[cp]);
        s.sensitivity.push_back(cells[cs]);
        s.gain.push_back(cells[cg]);
    }
    s.validate();
    return s;
}

namespace {

double interpolate(const std::vector<phantom::AttenuationPoint>& curve, double e) {
    auto it = std::lower_bound(curve.begin(), curve.end(), e,
                               [](const auto& p, double v) { return p.energy_kev < v; });
    if (it == curve.end()) throw ValidationError("energy beyond attenuation curve");
    if (it->energy_kev == e) return it->mu;
    if (it == curve.begin()) throw ValidationError("energy below attenuation curve");
    const auto& lo = *(it - 1);
    const double w = (e - lo.energy_kev) / (it->energy_kev - lo.energy_kev);
    return lo.mu + w * (it->mu - lo.mu);
}

}  // namespace

double effective_mu(const SpectrumModel& spectrum,
                    const std::vector<phantom::AttenuationPoint>& curve) {
    spectrum.validate();
    if (curve.size() < 1) throw ValidationError("empty attenuation curve");
    for (std::size_t i = 1; i < curve.size(); ++i) {
        if (!(curve[i].energy_kev > curve[i - 1].energy_kev)) {
            throw ValidationError("attenuation curve energies must be strictly increasing");
        }
    }
    if (spectrum.energies_kev.front() < curve.front().energy_kev ||
        spectrum.energies_kev.back() > curve.back().energy_kev) {
        throw ValidationError("attenuation curve does not cover the spectrum energy range");
    }
    const std::size_t n = spectrum.energies_kev.size();
    std::vector<double> w(n);
    std::vector<double> wm(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = spectrum.gain[i] * spectrum.sensitivity[i] * spectrum.phi[i];
        wm[i] = w[i] * interpolate(curve, spectrum.energies_kev[i]);
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        const double h = spectrum.energies_kev[i] - spectrum.energies_kev[i - 1];
        num += 0.5 * h * (wm[i] + wm[i - 1]);
        den += 0.5 * h * (w[i] + w[i - 1]);
    }
    if (!(den > 0.0)) throw ValidationError("spectrum has zero total detector-weighted flux");
    return num / den;
}

}  // namespace xpod::forward
