#include <cmath>
#include <numbers>

#include "test_support.hpp"
#include "xpod/error.hpp"
#include "xpod/phantom.hpp"

namespace xpod::phantom {
namespace {

PhantomRecipe centered_recipe(int w, int h, double a, double b, double c) {
    PhantomRecipe r;
    r.main = {a, b, c, (w - 1) / 2.0, (h - 1) / 2.0};
    return r;
}

TEST(Phantom, ApexOfSemiEllipsoid) {
    const PhantomRecipe r = centered_recipe(41, 41, 10, 10, 10);
    const PhantomSpec s = build_phantom(r, {41, 41, 1.0}, {1, 0});
    EXPECT_DOUBLE_EQ(s.main_thickness.at(20, 20), 20.0);
    EXPECT_EQ(thickness_line_integral(s, {0, 0}), std::make_pair(0.0, 0.0));
    EXPECT_FALSE(s.has_foreign_object());
}

TEST(Phantom, RodThicknessAndMaskArea) {
    const double pitch = 0.1;
    PhantomRecipe r = centered_recipe(301, 301, 12, 12, 8);
    r.fo = RodShape{10.0, 2.0, 0.3, 150.0, 150.0};
    const PhantomSpec s = build_phantom(r, {301, 301, pitch}, {1, 0});
    double max_lf = 0;
    for (double v : s.fo_thickness.values()) max_lf = std::max(max_lf, v);
    EXPECT_LE(max_lf, 2.0);
    EXPECT_NEAR(thickness_line_integral(s, {150, 150}).second, 2.0, 1e-12);
    const double area = static_cast<double>(s.ground_truth().count()) * pitch * pitch;
    EXPECT_NEAR(area, 10.0 * 2.0, 0.15 * 20.0);
}

TEST(Phantom, LineIntegralMatchesStoredMaps) {
    PhantomRecipe r = centered_recipe(64, 48, 5, 4, 3);
    r.fo = RodShape{3.0, 1.0, 0.0, 31.5, 23.5};
    const PhantomSpec s = build_phantom(r, {64, 48, 0.2}, {2, 0});
    for (int y = 0; y < 48; y += 5) {
        for (int x = 0; x < 64; x += 7) {
            const auto [lm, lf] = thickness_line_integral(s, {x, y});
            EXPECT_EQ(lm, s.main_thickness.at(x, y));
            EXPECT_EQ(lf, s.fo_thickness.at(x, y));
        }
    }
    EXPECT_THROW(thickness_line_integral(s, {64, 0}), ValidationError);
}

TEST(Phantom, ZeroJitterIgnoresSeedAndRepeats) {
    PhantomRecipe r = centered_recipe(50, 40, 4, 3, 2);
    r.fo = RodShape{2.0, 0.6, 1.0, 24.5, 19.5};
    const auto a = build_phantom(r, {50, 40, 0.2}, {5, 0});
    const auto b = build_phantom(r, {50, 40, 0.2}, {5, 0});
    const auto c = build_phantom(r, {50, 40, 0.2}, {6, 9});
    EXPECT_EQ(a.main_thickness, b.main_thickness);
    EXPECT_EQ(a.fo_thickness, b.fo_thickness);
    EXPECT_EQ(a.main_thickness, c.main_thickness);
    EXPECT_EQ(a.fo_thickness, c.fo_thickness);
}

TEST(Phantom, JitterIsSeededAndDeterministic) {
    PhantomRecipe r = centered_recipe(96, 72, 6, 5, 3);
    r.fo = RodShape{3.0, 1.0, 0.0, 47.5, 35.5};
    r.jitter = {3, 10, 3.14, 0.1, 0.2, 0.3, 0.5};
    const GridGeometry g{96, 72, 0.2};
    const auto a = build_phantom(r, g, {5, 1});
    const auto b = build_phantom(r, g, {5, 1});
    const auto c = build_phantom(r, g, {5, 2});
    EXPECT_EQ(a.fo_thickness, b.fo_thickness);
    EXPECT_NE(a.fo_thickness, c.fo_thickness);
}

TEST(Phantom, MaskConsistencyAndContainmentProperty) {
    PhantomRecipe r = centered_recipe(96, 72, 6, 5, 3);
    r.fo = RodShape{3.0, 1.0, 0.0, 47.5, 35.5};
    r.jitter = {4, 20, 3.14, 0.15, 0.3, 0.5, 1.0};
    for (std::uint64_t i = 0; i < 40; ++i) {
        const auto s = build_phantom(r, {96, 72, 0.2}, {77, i});
        const BinaryMask gt = s.ground_truth();
        for (std::size_t p = 0; p < gt.size(); ++p) {
            ASSERT_EQ(gt[p], s.fo_thickness[p] > 0.0);
            if (s.fo_thickness[p] > 0.0) { ASSERT_GT(s.main_thickness[p], 0.0); }
        }
        EXPECT_TRUE(s.has_foreign_object());
    }
}

class VolumeConvergence : public ::testing::TestWithParam<int> {};

TEST_P(VolumeConvergence, SumOfThicknessApproximatesEllipsoidVolume) {
    const double a = 10, b = 7, c = 4;
    const int steps = GetParam();  // pitch = a / steps
    const double pitch = a / steps;
    const int w = 2 * static_cast<int>(std::ceil(a / pitch)) + 3;
    const int h = 2 * static_cast<int>(std::ceil(b / pitch)) + 3;
    const auto s = build_phantom(centered_recipe(w, h, a, b, c), {w, h, pitch}, {0, 0});
    double sum = 0;
    for (double v : s.main_thickness.values()) sum += v;
    const double volume = 2.0 / 3.0 * std::numbers::pi * a * b * 2.0 * c;
    EXPECT_NEAR(sum * pitch * pitch / volume, 1.0, 0.02);
}

INSTANTIATE_TEST_SUITE_P(Pitches, VolumeConvergence, ::testing::Values(20, 40, 80));

TEST(Phantom, RejectsFoOutsideMainObject) {
    PhantomRecipe r = centered_recipe(40, 40, 2, 2, 2);
    r.fo = RodShape{1.0, 0.5, 0.0, 1.0, 1.0};
    EXPECT_THROW(build_phantom(r, {40, 40, 0.2}, {1, 0}), ValidationError);
}

TEST(Phantom, RejectsNonPositiveSizes) {
    PhantomRecipe r = centered_recipe(10, 10, 0, 2, 2);
    EXPECT_THROW(r.validate(), ValidationError);
    r = centered_recipe(10, 10, 2, 2, 2);
    r.fo = RodShape{1.0, -1.0, 0.0, 5, 5};
    EXPECT_THROW(r.validate(), ValidationError);
}

TEST(Phantom, ValidateCatchesContainmentViolation) {
    PhantomSpec s{ImageGrid(2, 1, 1.0), ImageGrid(2, 1, 1.0), default_meat(), default_bone()};
    s.fo_thickness.set(1, 0, 0.5);
    EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Phantom, SaveLoadRoundTrip) {
    test::TempDir dir;
    PhantomRecipe r = centered_recipe(30, 20, 2, 1.5, 1);
    r.fo = RodShape{1.0, 0.4, 0.2, 14.5, 9.5};
    const auto s = build_phantom(r, {30, 20, 0.1}, {3, 0});
    save_phantom(s, dir.path());
    const auto back = load_phantom(dir.path());
    EXPECT_EQ(back.main_material.name, "meat");
    EXPECT_EQ(back.fo_material.effective_mu, s.fo_material.effective_mu);
    EXPECT_EQ(back.ground_truth(), s.ground_truth());
    for (std::size_t i = 0; i < s.main_thickness.size(); ++i) {
        EXPECT_FLOAT_EQ(back.main_thickness[i], s.main_thickness[i]);
    }
}

TEST(Materials, DefaultsAndLookup) {
    const auto meat = default_meat();
    EXPECT_DOUBLE_EQ(meat.mu_for("high"), 0.020);
    EXPECT_DOUBLE_EQ(meat.mu_for("low"), 0.025);
    const auto bone = default_bone();
    EXPECT_DOUBLE_EQ(bone.mu_for("high"), 0.060);
    EXPECT_DOUBLE_EQ(bone.mu_for("low"), 0.045);
    EXPECT_THROW(meat.mu_for("mid"), ValidationError);
    const auto back = material_from_json(material_to_json(bone));
    EXPECT_EQ(back.effective_mu, bone.effective_mu);
}

}  // namespace
}  // namespace xpod::phantom
