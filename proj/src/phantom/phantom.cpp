#include "xpod/phantom.hpp"

#include <cmath>

#include "xpod/error.hpp"
#include "xpod/image_io.hpp"

namespace xpod::phantom {

using nlohmann::json;

void MaterialRef::validate() const {
    if (name.empty()) throw ValidationError("material needs a name");
    if (effective_mu.empty() && attenuation_curve.empty()) {
        throw ValidationError("material '" + name + "' defines no attenuation");
    }
    for (const auto& [label, mu] : effective_mu) {
        if (!(mu > 0.0) || !std::isfinite(mu)) {
            throw ValidationError("material '" + name + "' has non-positive mu for channel '" +
                                  label + "'");
        }
    }
    for (std::size_t i = 0; i < attenuation_curve.size(); ++i) {
        const auto& p = attenuation_curve[i];
        if (!(p.mu > 0.0) || !std::isfinite(p.mu)) {
            throw ValidationError("material '" + name + "' attenuation curve has mu <= 0");
        }
        if (i > 0 && !(p.energy_kev > attenuation_curve[i - 1].energy_kev)) {
            throw ValidationError("material '" + name +
                                  "' attenuation curve energies must be strictly increasing");
        }
    }
}

double MaterialRef::mu_for(const std::string& channel) const {
    auto it = effective_mu.find(channel);
    if (it == effective_mu.end()) {
        throw ValidationError("material '" + name + "' has no attenuation for channel '" +
                              channel + "'");
    }
    return it->second;
}

MaterialRef default_meat() { return {"meat", {{"high", 0.020}, {"low", 0.025}}, {}}; }
MaterialRef default_bone() { return {"bone", {{"high", 0.060}, {"low", 0.045}}, {}}; }

namespace {

bool inside_ellipse(const EllipsoidShape& e, double x_px, double y_px, double pitch) {
    const double dx = (x_px - e.center_x_px) * pitch / e.semi_a_mm;
    const double dy = (y_px - e.center_y_px) * pitch / e.semi_b_mm;
    return dx * dx + dy * dy < 1.0;
}

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string("recipe: ") + what + " must be positive");
    }
}

}  // namespace

void PhantomRecipe::validate() const {
    require_positive(main.semi_a_mm, "main semi_a_mm");
    require_positive(main.semi_b_mm, "main semi_b_mm");
    require_positive(main.semi_c_mm, "main semi_c_mm");
    main_material.validate();
    fo_material.validate();
    if (fo) {
        require_positive(fo->length_mm, "rod length_mm");
        require_positive(fo->diameter_mm, "rod diameter_mm");
    }
    const double jit[] = {jitter.center_px,     jitter.fo_center_px,    jitter.orientation_rad,
                          jitter.main_axes_log, jitter.main_height_log, jitter.rod_length_log,
                          jitter.rod_diameter_log};
    for (double j : jit) {
        if (!(j >= 0.0) || !std::isfinite(j)) {
            throw ValidationError("recipe: jitter ranges must be finite and non-negative");
        }
    }
}

void PhantomSpec::validate() const {
    if (!main_thickness.same_shape(fo_thickness)) {
        throw ValidationError("phantom thickness maps differ in shape");
    }
    for (std::size_t i = 0; i < main_thickness.size(); ++i) {
        const double lm = main_thickness[i];
        const double lf = fo_thickness[i];
        if (lm < 0.0 || lf < 0.0) throw ValidationError("phantom thickness must be >= 0");
        if (lf > 0.0 && !(lm > 0.0)) {
            throw ValidationError("foreign object thickness outside the main object at index " +
                                  std::to_string(i));
        }
    }
    main_material.validate();
    fo_material.validate();
}

BinaryMask PhantomSpec::ground_truth() const {
    BinaryMask mask(fo_thickness.width(), fo_thickness.height());
    for (std::size_t i = 0; i < fo_thickness.size(); ++i) mask.set(i, fo_thickness[i] > 0.0);
    return mask;
}

PhantomSpec build_phantom(const PhantomRecipe& recipe, const GridGeometry& grid, SeedSpec seed) {
    recipe.validate();
    ImageGrid lm(grid.width, grid.height, grid.pitch_mm);
    ImageGrid lf(grid.width, grid.height, grid.pitch_mm);
    const double pitch = grid.pitch_mm;
    const auto& jit = recipe.jitter;

    RandomStream rng(seed);
    auto sym = [&](double half_width) { return half_width * (2.0 * rng.uniform() - 1.0); };

    // Draw order is fixed: it is part of the reproducibility contract.
    EllipsoidShape main = recipe.main;
    main.center_x_px += sym(jit.center_px);
    main.center_y_px += sym(jit.center_px);
    const double axes_scale = std::exp(sym(jit.main_axes_log));
    main.semi_a_mm *= axes_scale;
    main.semi_b_mm *= axes_scale;
    main.semi_c_mm *= std::exp(sym(jit.main_height_log));

    std::optional<RodShape> rod = recipe.fo;
    if (rod) {
        if (!inside_ellipse(main, rod->center_x_px + (main.center_x_px - recipe.main.center_x_px),
                            rod->center_y_px + (main.center_y_px - recipe.main.center_y_px),
                            pitch)) {
            throw ValidationError("recipe: foreign object center lies outside the main object");
        }
        // The rod follows the main object's jittered position, then moves by
        // its own offset; offsets that leave the support are redrawn.
        const double base_x = rod->center_x_px + (main.center_x_px - recipe.main.center_x_px);
        const double base_y = rod->center_y_px + (main.center_y_px - recipe.main.center_y_px);
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            const double cx = base_x + sym(jit.fo_center_px);
            const double cy = base_y + sym(jit.fo_center_px);
            if (inside_ellipse(main, cx, cy, pitch)) {
                rod->center_x_px = cx;
                rod->center_y_px = cy;
                placed = true;
            }
        }
        if (!placed) {
            rod->center_x_px = base_x;
            rod->center_y_px = base_y;
        }
        rod->orientation_rad += sym(jit.orientation_rad);
        rod->length_mm *= std::exp(sym(jit.rod_length_log));
        rod->diameter_mm *= std::exp(sym(jit.rod_diameter_log));
    }

    auto lm_values = lm.mutable_values();
    auto lf_values = lf.mutable_values();
    const double two_c = 2.0 * main.semi_c_mm;
    const double c = rod ? std::cos(rod->orientation_rad) : 1.0;
    const double s = rod ? std::sin(rod->orientation_rad) : 0.0;
    bool any_fo = false;
    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * grid.width + x;
            const double ex = (x - main.center_x_px) * pitch / main.semi_a_mm;
            const double ey = (y - main.center_y_px) * pitch / main.semi_b_mm;
            const double q = 1.0 - ex * ex - ey * ey;
            const double thick = q > 0.0 ? two_c * std::sqrt(q) : 0.0;
            lm_values[i] = thick;
            if (!rod || !(thick > 0.0)) continue;
            const double dx = (x - rod->center_x_px) * pitch;
            const double dy = (y - rod->center_y_px) * pitch;
            const double along = dx * c + dy * s;
            const double across = -dx * s + dy * c;
            const double r = 0.5 * rod->diameter_mm;
            if (std::fabs(along) <= 0.5 * rod->length_mm && std::fabs(across) < r) {
                const double chord = 2.0 * std::sqrt(r * r - across * across);
                if (chord > 0.0) {
                    lf_values[i] = chord;
                    any_fo = true;
                }
            }
        }
    }
    if (rod && !any_fo) {
        throw ValidationError("recipe: foreign object falls entirely outside the main object");
    }

    PhantomSpec spec{std::move(lm), std::move(lf), recipe.main_material, recipe.fo_material};
    spec.validate();
    return spec;
}

std::pair<double, double> thickness_line_integral(const PhantomSpec& spec, Pixel p) {
    if (p.x < 0 || p.y < 0 || p.x >= spec.main_thickness.width() ||
        p.y >= spec.main_thickness.height()) {
        throw ValidationError("pixel (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                              ") outside the phantom grid");
    }
    return {spec.main_thickness.at(p.x, p.y), spec.fo_thickness.at(p.x, p.y)};
}

json material_to_json(const MaterialRef& m) {
    json j;
    j["name"] = m.name;
    j["effective_mu"] = m.effective_mu;
    if (!m.attenuation_curve.empty()) {
        json curve = json::array();
        for (const auto& p : m.attenuation_curve) curve.push_back({p.energy_kev, p.mu});
        j["attenuation_curve"] = curve;
    }
    return j;
}

MaterialRef material_from_json(const json& j) {
    MaterialRef m;
    try {
        m.name = j.at("name").get<std::string>();
        if (j.contains("effective_mu")) {
            m.effective_mu = j.at("effective_mu").get<std::map<std::string, double>>();
        }
        if (j.contains("attenuation_curve")) {
            for (const auto& p : j.at("attenuation_curve")) {
                m.attenuation_curve.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed material: ") + e.what());
    }
    m.validate();
    return m;
}

void save_phantom(const PhantomSpec& spec, const std::filesystem::path& dir) {
    write_image(spec.main_thickness, dir / "main", "thickness_main",
                {{"material", material_to_json(spec.main_material)}});
    write_image(spec.fo_thickness, dir / "fo", "thickness_fo",
                {{"material", material_to_json(spec.fo_material)}});
}

PhantomSpec load_phantom(const std::filesystem::path& dir) {
    auto main = read_xri(dir / "main");
    auto fo = read_xri(dir / "fo");
    if (!main.meta.contains("material") || !fo.meta.contains("material")) {
        throw ValidationError("phantom sidecars in " + dir.string() + " lack material records");
    }
    PhantomSpec spec{std::move(main.grid), std::move(fo.grid),
                     material_from_json(main.meta["material"]),
                     material_from_json(fo.meta["material"])};
    spec.validate();
    return spec;
}

}  // namespace xpod::phantom
