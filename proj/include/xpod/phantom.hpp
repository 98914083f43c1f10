#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xpod/image.hpp"
#include "xpod/random.hpp"

namespace xpod::phantom {

struct AttenuationPoint {
    double energy_kev = 0.0;
    double mu = 0.0;  // 1/mm
};

/// A homogeneous material. Either per-channel effective attenuation values,
/// an energy-resolved attenuation curve, or both.
struct MaterialRef {
    std::string name;
    std::map<std::string, double> effective_mu;  // channel label -> 1/mm
    std::vector<AttenuationPoint> attenuation_curve;

    void validate() const;
    /// Throws ValidationError if the channel is not defined.
    double mu_for(const std::string& channel) const;
};

// Synthetic defaults, not measured values. Channel "high" is the
// high-energy acquisition, "low" the low-energy one.
MaterialRef default_meat();
MaterialRef default_bone();

/// Semi-ellipsoid main object lying on the detector plane:
///   L_m(x, y) = 2c * sqrt(max(0, 1 - dx^2/a^2 - dy^2/b^2))
struct EllipsoidShape {
    double semi_a_mm = 20.0;
    double semi_b_mm = 15.0;
    double semi_c_mm = 8.0;
    double center_x_px = 0.0;
    double center_y_px = 0.0;
};

/// Flat-ended cylinder lying parallel to the detector. Its projected
/// thickness is the chord 2*sqrt(r^2 - w^2) at perpendicular distance w from
/// the axis, for axial positions within +-length/2.
struct RodShape {
    double length_mm = 6.0;
    double diameter_mm = 1.5;
    double orientation_rad = 0.0;
    double center_x_px = 0.0;
    double center_y_px = 0.0;
};

/// Per-sample randomization. Offsets are uniform in +-value; *_log fields are
/// half-widths of a uniform draw on the natural-log scale, so a size s becomes
/// s * exp(U(-w, w)).
struct RecipeJitter {
    double center_px = 0.0;
    double fo_center_px = 0.0;
    double orientation_rad = 0.0;
    double main_axes_log = 0.0;
    double main_height_log = 0.0;
    double rod_length_log = 0.0;
    double rod_diameter_log = 0.0;
};

struct PhantomRecipe {
    EllipsoidShape main;
    std::optional<RodShape> fo;
    RecipeJitter jitter;
    MaterialRef main_material = default_meat();
    MaterialRef fo_material = default_bone();

    void validate() const;
};

struct GridGeometry {
    int width = 0;
    int height = 0;
    double pitch_mm = 1.0;
};

/// Ground truth for one specimen. Thickness maps are the parallel-beam line
/// integrals through each material.
struct PhantomSpec {
    ImageGrid main_thickness;
    ImageGrid fo_thickness;
    MaterialRef main_material;
    MaterialRef fo_material;

    /// Checks non-negativity, equal shapes and containment (L_f > 0 implies L_m > 0).
    void validate() const;
    /// Exactly the pixels with L_f > 0.
    BinaryMask ground_truth() const;
    bool has_foreign_object() const { return !ground_truth().empty_set(); }
};

/// Realizes the recipe on a grid. Jitter is drawn from `seed`; with zero
/// jitter the result does not depend on the seed.
PhantomSpec build_phantom(const PhantomRecipe& recipe, const GridGeometry& grid, SeedSpec seed);

std::pair<double, double> thickness_line_integral(const PhantomSpec& spec, Pixel pixel);

nlohmann::json material_to_json(const MaterialRef& m);
MaterialRef material_from_json(const nlohmann::json& j);

/// Persists as <dir>/main.{f32,json} and <dir>/fo.{f32,json}; materials live
/// in the sidecars.
void save_phantom(const PhantomSpec& spec, const std::filesystem::path& dir);
PhantomSpec load_phantom(const std::filesystem::path& dir);

}  // namespace xpod::phantom
