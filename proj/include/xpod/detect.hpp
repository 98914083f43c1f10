#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xpod/detector.hpp"
#include "xpod/forward.hpp"
#include "xpod/image.hpp"

namespace xpod::detect {

enum class Stage { kRaw, kCorrected };

/// Two co-registered acquisitions with different spectra. Channel a is the
/// quotient numerator.
struct DualImage {
    ImageGrid channel_a;
    ImageGrid channel_b;
    Stage stage = Stage::kRaw;
    double exposure_ms = 0.0;
    std::string label_a = "high";
    std::string label_b = "low";
    /// Flatfield levels above darkfield; set by correct_pair.
    double i0_a = 0.0;
    double i0_b = 0.0;

    void validate() const;
};

/// Log-corrects both channels: M = -log(max(y - d_e, eps) / i0) with
/// eps = eps_fraction * i0.
DualImage correct_pair(const DualImage& raw, double i0_a, double i0_b,
                       const DetectorCalibration& calib, double eps_fraction = 1e-6);

struct DetectorConfig {
    double z_threshold = 3.0;
    int min_area = 4;
    double denom_floor = forward::kDefaultDenomFloor;
    /// Object support is M_b >= this.
    double object_mask_threshold = 0.1;
    /// Deviations at or below this are treated as rounding noise.
    double min_delta = 1e-9;

    void validate() const;
};

/// Drops 8-connected components smaller than min_area.
BinaryMask filter_components(const BinaryMask& mask, int min_area);

/// Quotient-threshold detector. On the object support it estimates R_m as
/// the median quotient, flags pixels with |R - R_m| > z * sigma_R where
/// sigma_R is the delta-method noise of the quotient under R = R_m, and keeps
/// 8-connected clusters of at least min_area pixels.
BinaryMask baseline_segment(const DualImage& corrected, const DetectorConfig& cfg,
                            const DetectorCalibration& calib);

struct DetectionOutcome {
    std::string sample_id;
    double contrast = 0.0;
    bool fo_present = false;
    bool detected = false;
    double recall = 0.0;
    bool false_positive = false;
};

/// With a foreign object: detected iff recall > 10% (strict). Without:
/// false positive iff any pixel is predicted.
DetectionOutcome to_outcome(const BinaryMask& predicted, const BinaryMask& ground_truth,
                            double contrast, std::string sample_id = {});

// File exchange with external detectors. Paths in a manifest are relative to
// the manifest's directory unless absolute.
struct ManifestSample {
    std::string id;
    std::string channel_a;
    std::string channel_b;
    std::optional<std::string> gt_mask;
    std::string out_mask;
};

struct DetectorManifest {
    std::vector<ManifestSample> samples;
    double exposure_ms = 0.0;
    std::string calibration;
};

DetectorManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DetectorManifest& manifest, const std::filesystem::path& path);

/// Runs `command_template` once for the whole manifest. "{manifest}" in the
/// template is replaced by the quoted manifest path; without a placeholder
/// the path is appended as the last argument. Returns one validated mask per
/// sample, in manifest order.
std::vector<BinaryMask> run_external_detector(const std::filesystem::path& manifest_path,
                                              const std::string& command_template);

}  // namespace xpod::detect
