#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "test_support.hpp"
#include "xpod/error.hpp"
#include "xpod/experiment.hpp"
#include "xpod/image_io.hpp"
#include "xpod/pod.hpp"

namespace xpod::experiment {
namespace {

using nlohmann::json;
using test::TempDir;

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("'") + XPOD_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

json small_config(int fo = 10, int absent = 3) {
    return json::parse(R"({
      "seed": 7,
      "grid": {"width": 64, "height": 48, "pitch_mm": 0.2},
      "calibration": {"gain": 0.015, "dark_offset": 10.0, "dark_var": 0.0025, "psf_sigma": 0.8},
      "channels": [{"label": "high", "k": 3.86}, {"label": "low", "k": 0.58}],
      "reference_exposure_ms": 1000,
      "exposures_ms": [1000, 100, 50, 20],
      "phantom": {
        "main": {"semi_a_mm": 5.0, "semi_b_mm": 4.0, "semi_c_mm": 4.0},
        "fo": {"length_mm": 3.0, "diameter_mm": 1.5},
        "jitter": {"fo_center_px": 6, "orientation_rad": 3.14159265, "rod_diameter_log": 0.8}
      },
      "counts": {"fo_present": )" + std::to_string(fo) + R"(, "fo_absent": )" + std::to_string(absent) + R"(},
      "detector": {"type": "baseline", "z_threshold": 3, "min_area": 4},
      "pod": {"targets": [0.9], "bootstrap": 50}
    })");
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
    const fs::path p = dir / name;
    test::spit(p, j.dump(2));
    return p;
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = test::slurp(e.path());
    }
    return out;
}

// Minimal XML well-formedness check: balanced, properly nested tags.
bool well_formed_xml(const std::string& s, std::string& why) {
    std::vector<std::string> stack;
    std::size_t i = 0;
    bool root_seen = false;
    while ((i = s.find('<', i)) != std::string::npos) {
        if (s.compare(i, 4, "<!--") == 0) {
            const auto end = s.find("-->", i + 4);
            if (end == std::string::npos) return why = "unterminated comment", false;
            if (s.substr(i + 4, end - i - 4).find("--") != std::string::npos) return why = "-- in comment", false;
            i = end + 3;
            continue;
        }
        if (s.compare(i, 2, "<?") == 0) {
            i = s.find("?>", i);
            if (i == std::string::npos) return why = "unterminated declaration", false;
            continue;
        }
        const auto end = s.find('>', i);
        if (end == std::string::npos) return why = "unterminated tag", false;
        std::string tag = s.substr(i + 1, end - i - 1);
        i = end + 1;
        if (tag.empty()) return why = "empty tag", false;
        if (tag[0] == '/') {
            const std::string name = tag.substr(1);
            if (stack.empty() || stack.back() != name) return why = "mismatched </" + name + ">", false;
            stack.pop_back();
            continue;
        }
        const bool self_closing = tag.back() == '/';
        const std::string name = tag.substr(0, tag.find_first_of(" \t\n/"));
        if (stack.empty()) {
            if (root_seen) return why = "multiple roots", false;
            root_seen = true;
        }
        if (!self_closing) stack.push_back(name);
    }
    if (!stack.empty()) return why = "unclosed <" + stack.back() + ">", false;
    return root_seen;
}

std::size_t count_of(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

void write_outcomes(const fs::path& p, const std::vector<pod::PodSample>& s) {
    std::ostringstream out;
    out << "sample_id,contrast,outcome\n";
    for (std::size_t i = 0; i < s.size(); ++i) out << "s" << i << ',' << s[i].contrast << ',' << s[i].success << '\n';
    test::spit(p, out.str());
}

std::vector<pod::PodSample> simulated(double c0, double c1, std::size_t n, std::uint64_t seed) {
    RandomStream rng({seed, 0});
    std::vector<pod::PodSample> s(n);
    for (auto& x : s) {
        x.contrast = 0.5 * rng.uniform();
        x.success = rng.uniform() < pod::inverse_link(c0 + c1 * x.contrast);
    }
    return s;
}

TEST(Config, ParsesDefaultsAndRejectsUnknownKeys) {
    const ExperimentConfig c = parse_config(small_config(), "/tmp");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.channels.size(), 2u);
    EXPECT_EQ(c.exposures_ms.size(), 4u);
    EXPECT_DOUBLE_EQ(c.recipe.main.center_x_px, 31.5);
    ASSERT_TRUE(c.recipe.fo.has_value());
    EXPECT_DOUBLE_EQ(c.recipe.fo->center_y_px, 23.5);
    auto bad = small_config();
    bad["detectr"] = json::object();
    EXPECT_THROW(parse_config(bad, "/tmp"), ValidationError);
    auto neg = small_config();
    neg["exposures_ms"] = {100, -5};
    EXPECT_THROW(parse_config(neg, "/tmp").validate(), ValidationError);
    auto one_channel = small_config();
    one_channel["channels"].erase(1);
    EXPECT_THROW(parse_config(one_channel, "/tmp").validate(), ValidationError);
}

TEST(Config, HashIgnoresRunOnlyKeys) {
    auto a = small_config();
    auto b = small_config();
    b["threads"] = 8;
    b["output_dir"] = "elsewhere";
    EXPECT_EQ(parse_config(a, "/tmp").hash(), parse_config(b, "/tmp").hash());
    b["seed"] = 8;
    EXPECT_NE(parse_config(a, "/tmp").hash(), parse_config(b, "/tmp").hash());
}

TEST(Config, ShippedSweepConfigIsValid) {
    const auto c = load_config(fs::path(XPOD_CONFIG_DIR) / "sweep.json");
    EXPECT_NO_THROW(c.validate());
    EXPECT_GE(c.fo_present, 300);
    EXPECT_EQ(c.exposures_ms, (std::vector<double>{1000, 100, 50, 20}));
}

TEST(Cli, GenerateWritesDatasetLayout) {
    TempDir dir;
    const fs::path cfg = write_config(dir.path(), small_config(10, 0));
    ASSERT_EQ(run_cli("generate " + q(cfg) + " -o " + q(dir / "ds"), dir / "log.txt"), 0) << test::slurp(dir / "log.txt");
    EXPECT_TRUE(fs::exists(dir / "ds" / "manifest.json"));
    const auto m = read_dataset_manifest(dir / "ds");
    EXPECT_EQ(m.samples.size(), 10u);
    for (const char* t : {"1000", "100", "50", "20"}) {
        std::size_t samples = 0;
        for (const auto& e : fs::directory_iterator(dir / "ds" / t)) {
            if (!e.is_directory()) continue;
            ++samples;
            for (const char* f : {"a", "b", "gt", "dr"}) {
                EXPECT_TRUE(fs::exists(e.path() / (std::string(f) + ".f32"))) << e.path() << f;
                const auto meta = read_sidecar(e.path() / (std::string(f) + ".json"));
                EXPECT_EQ(meta["config_hash"], m.provenance.config_hash);
                EXPECT_EQ(meta["master_seed"], 7);
            }
        }
        EXPECT_EQ(samples, 10u) << t;
    }
}

TEST(Cli, GenerateIsReproducibleAcrossThreadCounts) {
    TempDir dir;
    const fs::path cfg = write_config(dir.path(), small_config(6, 2));
    ASSERT_EQ(run_cli("--threads 1 generate " + q(cfg) + " -o " + q(dir / "one"), dir / "l1"), 0);
    ASSERT_EQ(run_cli("--threads 3 generate " + q(cfg) + " -o " + q(dir / "three"), dir / "l3"), 0);
    const auto a = tree(dir / "one");
    const auto b = tree(dir / "three");
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [k, v] : a) EXPECT_TRUE(b.count(k) && b.at(k) == v) << k;
}

TEST(Cli, ExposureLinearityOfFlatRegion) {
    TempDir dir;
    const auto c = parse_config(small_config(2, 0), dir.path());
    generate_dataset(c, dir / "ds", 1);
    auto flat_mean = [&](const char* t) {
        const ImageGrid a = read_image(dir / "ds" / t / "s0000" / "a");
        double s = 0;
        int n = 0;
        for (int y = 0; y < 6; ++y) {
            for (int x = 0; x < 64; ++x) {
                s += a.at(x, y) - 10.0;
                ++n;
            }
        }
        return s / n;
    };
    EXPECT_NEAR(flat_mean("20") / flat_mean("1000"), 0.02, 0.02 * 0.01);
    EXPECT_NEAR(flat_mean("100") / flat_mean("1000"), 0.1, 0.1 * 0.01);
}

TEST(Cli, DetectWithGtCopyStub) {
    TempDir dir;
    const fs::path cfg = write_config(dir.path(), small_config(8, 3));
    ASSERT_EQ(run_cli("generate " + q(cfg) + " -o " + q(dir / "ds"), dir / "l"), 0);
    const std::string stub = std::string("'") + XPOD_STUB_DETECTOR + "' gt {manifest}";
    ASSERT_EQ(run_cli("detect " + q(dir / "ds") + " -e 100 --external " + q(stub), dir / "l2"), 0)
        << test::slurp(dir / "l2");
    const std::string csv = test::slurp(dir / "ds" / "100" / "outcomes.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 11);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "sample_id,fo_present,contrast,outcome,recall,false_positive");
    while (std::getline(in, line)) {
        if (line.find(",1,") == 5) {
            EXPECT_NE(line.find(",1,1,0"), std::string::npos) << line;
        } else {
            EXPECT_EQ(line.substr(line.size() - 2), ",0") << line;
        }
    }
    EXPECT_FALSE(fs::exists(dir / "ds" / "50" / "outcomes.csv"));
}

TEST(Cli, NoiselessBaselineDetectsEveryForeignObject) {
    TempDir dir;
    auto j = small_config(8, 4);
    j["calibration"] = {{"gain", 0.0}, {"dark_offset", 10.0}, {"dark_var", 0.0}, {"psf_sigma", 0.0}};
    j["exposures_ms"] = {1000, 100};
    j["detector"]["min_delta"] = 1e-3;
    const auto c = parse_config(j, dir.path());
    generate_dataset(c, dir / "ds", 1);
    const auto outcomes = detect_exposure(dir / "ds", 100, c.detector, c.aggregator, 1);
    ASSERT_EQ(outcomes.size(), 12u);
    for (const auto& o : outcomes) {
        if (o.fo_present) {
            EXPECT_TRUE(o.detected) << o.sample_id;
        } else {
            EXPECT_FALSE(o.false_positive) << o.sample_id;
        }
    }
}

TEST(Cli, PodReportAndSvg) {
    TempDir dir;
    write_outcomes(dir / "o.csv", simulated(-2, 20, 400, 3));
    ASSERT_EQ(run_cli("pod " + q(dir / "o.csv") + " -b 50 --seed 5 -o " + q(dir / "rep"), dir / "l"), 0)
        << test::slurp(dir / "l");
    const json r = json::parse(test::slurp(dir / "rep" / "pod.json"));
    const auto iv = pod::interval_from_json(r.at("intervals").at(0));
    EXPECT_NEAR(iv.point, 0.1417, 0.04);
    EXPECT_LE(iv.ci_low, iv.point);
    EXPECT_GE(iv.ci_high, iv.point);
    const std::string svg = test::slurp(dir / "rep" / "pod.svg");
    std::string why;
    EXPECT_TRUE(well_formed_xml(svg, why)) << why;
    EXPECT_EQ(count_of(svg, "<path"), 1u);
    EXPECT_NE(svg.find("<polygon"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "rep" / "pod_curve.csv"));
}

TEST(Cli, PodAllSuccessIsCleanValidationError) {
    TempDir dir;
    std::vector<pod::PodSample> s(30, pod::PodSample{0.3, true, {}});
    write_outcomes(dir / "o.csv", s);
    EXPECT_EQ(run_cli("pod " + q(dir / "o.csv") + " --seed 1", dir / "l"), 2);
    EXPECT_NE(test::slurp(dir / "l").find("at least one failure"), std::string::npos) << test::slurp(dir / "l");
}

class SweepFixture : public ::testing::Test {
protected:
    void SetUp() override {
        const std::vector<std::pair<double, double>> rows{{1000, 60}, {100, 30}, {50, 22}, {20, 15}};
        for (const auto& [t, c1] : rows) {
            const fs::path d = dir / exposure_dir_name(t);
            fs::create_directories(d);
            write_outcomes(d / "o.csv", simulated(-2, c1, 600, static_cast<std::uint64_t>(t)));
            ASSERT_EQ(run_cli("pod " + q(d / "o.csv") + " -b 40 --seed 3 -o " + q(d), dir / "l"), 0)
                << test::slurp(dir / "l");
            json r = json::parse(test::slurp(d / "pod.json"));
            r["exposure_ms"] = t;
            test::spit(d / "pod.json", r.dump(2));
            paths.push_back(d / "pod.json");
        }
    }
    TempDir dir;
    std::vector<fs::path> paths;
};

TEST_F(SweepFixture, FourRowTableAndPlots) {
    std::string args = "sweep-report";
    for (const auto& p : paths) args += " " + q(p);
    args += " -q 75 -o " + q(dir / "sweep");
    ASSERT_EQ(run_cli(args, dir / "l"), 0) << test::slurp(dir / "l");
    const std::string csv = test::slurp(dir / "sweep" / "sweep.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    const json rep = json::parse(test::slurp(dir / "sweep" / "sweep_report.json"));
    EXPECT_TRUE(rep.at("monotone").get<bool>());
    for (const char* f : {"pod_overlay.svg", "threshold_vs_exposure.svg"}) {
        const std::string svg = test::slurp(dir / "sweep" / f);
        std::string why;
        EXPECT_TRUE(well_formed_xml(svg, why)) << f << ": " << why;
    }
    EXPECT_EQ(count_of(test::slurp(dir / "sweep" / "pod_overlay.svg"), "<path"), 4u);
    EXPECT_NE(test::slurp(dir / "sweep" / "threshold_vs_exposure.svg").find("monoton"), std::string::npos);
}

TEST_F(SweepFixture, InterpolationAtSeventyFiveMilliseconds) {
    std::vector<PodReport> reports;
    for (const auto& p : paths) reports.push_back(PodReport::from_json(json::parse(test::slurp(p))));
    const SweepReport s = build_sweep(reports, 0.9, {75});
    ASSERT_EQ(s.rows.size(), 4u);
    ASSERT_TRUE(s.monotone);
    const double at100 = s.rows[1].interval.point;
    const double at50 = s.rows[2].interval.point;
    ASSERT_EQ(s.queries.size(), 1u);
    const double at75 = s.queries[0].contrast;
    EXPECT_GT(at75, at100);
    EXPECT_LT(at75, at50);
    const double w = std::log(100.0 / 75.0) / std::log(2.0);
    EXPECT_NEAR(at75, at100 + w * (at50 - at100), 1e-12);
    EXPECT_THROW(interpolate_threshold(s.rows, 10.0), ValidationError);
    EXPECT_THROW(interpolate_threshold(s.rows, 2000.0), ValidationError);
}

TEST_F(SweepFixture, SingleExposureIsAnError) {
    EXPECT_EQ(run_cli("sweep-report " + q(paths[0]) + " -o " + q(dir / "s1"), dir / "l"), 2);
    EXPECT_THROW(build_sweep({PodReport::from_json(json::parse(test::slurp(paths[0])))}, 0.9, {}),
                 ValidationError);
}

class CalibrateCli : public ::testing::Test {
protected:
    void SetUp() override {
        CalibrationFixture fx;
        fx.width = 48;
        fx.height = 48;
        fx.frames = 60;
        fx.truth.gain = 1.5;
        fx.truth.dark_offset = 100.0;
        fx.truth.dark_var = 25.0;
        fx.truth.psf_sigma = 0.0;
        fx.levels = {{"high", 20, 3.86}, {"high", 100, 3.86}, {"high", 500, 3.86},
                     {"low", 100, 0.58}, {"low", 1000, 0.58}, {"low", 3000, 0.58}};
        manifest = write_calibration_fixture(fx, dir / "fixture");
    }
    TempDir dir;
    fs::path manifest;
};

TEST_F(CalibrateCli, RoundTripAndByteIdenticalRerun) {
    ASSERT_EQ(run_cli("calibrate " + q(manifest) + " -o " + q(dir / "c1.json"), dir / "l"), 0)
        << test::slurp(dir / "l");
    ASSERT_EQ(run_cli("calibrate " + q(manifest) + " -o " + q(dir / "c2.json"), dir / "l"), 0);
    EXPECT_EQ(test::slurp(dir / "c1.json"), test::slurp(dir / "c2.json"));
    const json c = json::parse(test::slurp(dir / "c1.json"));
    EXPECT_NEAR(c["gain"].get<double>() / 1.5, 1.0, 0.05);
    EXPECT_NEAR(c["dark_offset"].get<double>(), 100.0, 1.0);
    EXPECT_NEAR(c["dark_var"].get<double>() / 25.0, 1.0, 0.10);
    EXPECT_NEAR(c["flux_coefficients"]["high"].get<double>(), 3.86, 0.01);
    EXPECT_NEAR(c["flux_coefficients"]["low"].get<double>(), 0.58, 0.01);
    EXPECT_LT(c["psf_sigma"].get<double>(), 0.3);
}

TEST_F(CalibrateCli, MapsAreWrittenAndLoadable) {
    ASSERT_EQ(run_cli("calibrate " + q(manifest) + " --maps -o " + q(dir / "cal.json"), dir / "l"), 0)
        << test::slurp(dir / "l");
    const DetectorCalibration c = load_calibration(dir / "cal.json");
    ASSERT_TRUE(c.gain.is_map());
    EXPECT_EQ(c.gain.map()->width(), 48);
    EXPECT_TRUE(fs::exists(dir / "cal_maps" / "valid.f32"));
}

TEST_F(CalibrateCli, MissingDarkfieldIsValidationError) {
    json m = json::parse(test::slurp(manifest));
    m.erase("darkfield");
    test::spit(manifest, m.dump());
    EXPECT_EQ(run_cli("calibrate " + q(manifest) + " -o " + q(dir / "c.json"), dir / "l"), 2);
    EXPECT_NE(test::slurp(dir / "l").find("darkfield"), std::string::npos);
}

TEST(Cli, RunVerifyAndTamperDetection) {
    TempDir dir;
    auto j = small_config(40, 4);
    j["exposures_ms"] = {1000, 100};
    j["phantom"]["jitter"]["rod_diameter_log"] = 1.2;
    const fs::path cfg = write_config(dir.path(), j);
    const int rc = run_cli("run " + q(cfg) + " -o " + q(dir / "ds"), dir / "l");
    ASSERT_EQ(rc, 0) << test::slurp(dir / "l");
    EXPECT_TRUE(fs::exists(dir / "ds" / "report" / "sweep.csv"));
    EXPECT_TRUE(fs::exists(dir / "ds" / "100" / "pod.svg"));
    EXPECT_EQ(run_cli("verify " + q(dir / "ds"), dir / "v"), 0) << test::slurp(dir / "v");

    const fs::path victim = dir / "ds" / "100" / "s0001" / "a.f32";
    std::string bytes = test::slurp(victim);
    bytes[17] ^= 0x01;
    test::spit(victim, bytes);
    EXPECT_EQ(run_cli("verify " + q(dir / "ds"), dir / "v2"), 2);
    EXPECT_NE(test::slurp(dir / "v2").find("s0001"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    EXPECT_EQ(run_cli("generate " + q(dir / "missing.json") + " -o " + q(dir / "x"), dir / "l"), 2);
    EXPECT_EQ(run_cli("frobnicate", dir / "l"), 2);
    auto j = small_config();
    j["counts"]["fo_present"] = 0;
    const fs::path cfg = write_config(dir.path(), j);
    EXPECT_EQ(run_cli("generate " + q(cfg) + " -o " + q(dir / "x"), dir / "l"), 2);
    EXPECT_EQ(run_cli("--version", dir / "l"), 0);
}

}  // namespace
}  // namespace xpod::experiment
