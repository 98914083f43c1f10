#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xpod/detect.hpp"
#include "xpod/detector.hpp"
#include "xpod/forward.hpp"
#include "xpod/phantom.hpp"
#include "xpod/pod.hpp"

namespace xpod::experiment {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "xpod 1.0.0";

struct ChannelConfig {
    std::string label;
    double k = 0.0;  // flux coefficient, intensity per ms
    /// Optional spectrum CSV. With it, effective mu values come from the
    /// materials' attenuation curves instead of their per-channel table.
    std::optional<fs::path> spectrum;
};

struct DetectorChoice {
    bool external = false;
    detect::DetectorConfig baseline;
    std::string command;
};

struct PodSettings {
    std::vector<double> targets{0.9};
    int bootstrap = 200;
    double level = 0.90;
    int curve_points = 101;
};

struct GenerationSettings {
    double quality_factor = 100.0;
    bool strict = false;
    bool blur_before_noise = false;
    bool normalize_to_flux = false;
};

/// Declarative description of one experiment. Parsed from a JSON document;
/// relative paths are resolved against the document's directory.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    unsigned threads = 0;
    fs::path output_dir;
    phantom::GridGeometry grid{96, 72, 0.3};
    DetectorCalibration calibration;
    std::optional<fs::path> calibration_file;
    std::vector<ChannelConfig> channels;  // [a, b]: quotient is a over b
    double reference_exposure_ms = 1000.0;
    std::vector<double> exposures_ms;
    phantom::PhantomRecipe recipe;
    int fo_present = 0;
    int fo_absent = 0;
    DetectorChoice detector;
    forward::Aggregator aggregator;
    PodSettings pod;
    GenerationSettings generation;
    /// The parsed document with run-only keys (threads, output_dir) removed;
    /// this is what the config hash covers.
    nlohmann::json canonical;

    void validate() const;
    std::string hash() const;
};

DetectorChoice parse_detector(const nlohmann::json& j);
forward::Aggregator parse_aggregator(const nlohmann::json& j);

ExperimentConfig parse_config(const nlohmann::json& j, const fs::path& base_dir);
ExperimentConfig load_config(const fs::path& path);

/// Reads a calibration JSON as written by `calibrate` (scalars plus optional
/// per-pixel maps stored next to it).
DetectorCalibration load_calibration(const fs::path& path);

struct Provenance {
    std::string config_hash;
    std::uint64_t master_seed = 0;
    nlohmann::json to_json() const;
};

/// Directory name of one exposure, e.g. "100" or "75.5".
std::string exposure_dir_name(double exposure_ms);

/// Bootstrap stream used for the POD fit of one exposure.
SeedSpec bootstrap_seed(std::uint64_t master_seed, double exposure_ms);

struct SampleInfo {
    std::string id;
    bool fo_present = false;
    double contrast = 0.0;
};

/// Content of <dataset>/manifest.json.
struct DatasetManifest {
    Provenance provenance;
    std::vector<double> exposures_ms;
    double reference_exposure_ms = 0.0;
    std::vector<std::string> labels;  // [a, b]
    std::vector<double> k;            // flux coefficient per channel
    std::vector<SampleInfo> samples;

    double i0(std::size_t channel, double exposure_ms) const { return k.at(channel) * exposure_ms; }
};

DatasetManifest read_dataset_manifest(const fs::path& dataset_dir);

/// Writes the dataset tree and manifest. Output depends only on the config.
DatasetManifest generate_dataset(const ExperimentConfig& config, const fs::path& out, unsigned threads);

/// Runs the detector on every sample of one exposure and writes
/// <dataset>/<exposure>/outcomes.csv.
std::vector<detect::DetectionOutcome> detect_exposure(const fs::path& dataset, double exposure_ms,
                                                      const DetectorChoice& detector,
                                                      const forward::Aggregator& aggregator,
                                                      unsigned threads);

void write_outcomes_csv(const std::vector<detect::DetectionOutcome>& outcomes, const fs::path& path);

struct PodReport {
    std::optional<double> exposure_ms;
    pod::PodFit fit;
    std::vector<pod::PodInterval> intervals;  // one per target
    std::size_t n_fo = 0;
    std::size_t n_absent = 0;
    std::size_t n_false_positive = 0;
    std::vector<pod::PodSample> samples;
    std::optional<Provenance> provenance;

    std::optional<double> false_positive_rate() const;
    nlohmann::json to_json() const;
    static PodReport from_json(const nlohmann::json& j);
};

/// Fits the outcome CSV and computes bootstrap intervals for each target.
/// False-positive counts come from rows with fo_present = 0, if any.
PodReport pod_from_outcomes(const fs::path& outcomes_csv, const PodSettings& settings,
                            SeedSpec seed, unsigned threads);

/// <stem>.json, <stem>.svg and <stem>_curve.csv in `dir`.
void write_pod_report(const PodReport& report, const PodSettings& settings, const fs::path& dir,
                      const std::string& stem = "pod");

struct SweepRow {
    double exposure_ms = 0.0;
    pod::PodInterval interval;
    std::optional<double> false_positive_rate;
};

struct SweepQuery {
    double exposure_ms = 0.0;
    double contrast = 0.0;
};

struct SweepReport {
    double target = 0.9;
    std::vector<SweepRow> rows;  // sorted by decreasing exposure
    std::vector<PodReport> reports;
    /// Threshold contrast strictly increases as exposure decreases.
    bool monotone = false;
    std::vector<SweepQuery> queries;
    std::optional<Provenance> provenance;

    nlohmann::json to_json() const;
};

/// Log-linear interpolation in exposure between the two bracketing rows.
/// Throws ValidationError outside the fitted exposure range.
double interpolate_threshold(const std::vector<SweepRow>& rows, double exposure_ms);

/// Needs at least two reports with distinct exposure times.
SweepReport build_sweep(std::vector<PodReport> reports, double target,
                        const std::vector<double>& query_exposures);

/// sweep.csv, sweep_report.json, pod_overlay.svg and threshold_vs_exposure.svg.
void write_sweep(const SweepReport& sweep, const fs::path& dir);

/// Generate, detect, fit each exposure and, with two or more exposures, the
/// sweep report.
SweepReport run_pipeline(const ExperimentConfig& config, const fs::path& out, unsigned threads,
                         const std::vector<double>& query_exposures = {});

/// Re-derives the config hash and every recorded file fingerprint under a
/// dataset directory. Problems are written to `log`; returns their count.
int verify_dataset(const fs::path& dataset, std::ostream& log);

/// Records fingerprints of non-image outputs in <dir>/provenance.json.
void record_outputs(const fs::path& dir, const Provenance& provenance,
                    const std::vector<std::string>& files);

// --- calibration command ---

/// Reads a calibration manifest:
///   {"darkfield": {"dir": ...},
///    "levels": [{"dir": ..., "exposure_ms": ..., "tube": "high"}, ...],
///    "psf_window": 4}
/// Frame directories hold .xri images, consumed in file-name order. Returns
/// the calibration JSON; with `maps_dir`, per-pixel maps are written there
/// and referenced from the JSON.
nlohmann::json run_calibration(const fs::path& manifest, const std::optional<fs::path>& maps_dir);

struct FixtureLevel {
    std::string tube;
    double exposure_ms = 0.0;
    double k = 0.0;  // true flux coefficient for this tube
};

struct CalibrationFixture {
    int width = 64;
    int height = 64;
    int frames = 50;
    DetectorCalibration truth;
    std::vector<FixtureLevel> levels;
    std::uint64_t seed = 1;
};

/// Writes synthetic flatfield/darkfield series and their manifest into `dir`
/// and returns the manifest path.
fs::path write_calibration_fixture(const CalibrationFixture& fixture, const fs::path& dir);

}  // namespace xpod::experiment
