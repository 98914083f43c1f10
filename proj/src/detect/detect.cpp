#include "xpod/detect.hpp"

#include <algorithm>
#include <cmath>

#include "xpod/error.hpp"

namespace xpod::detect {

void DualImage::validate() const {
    if (!channel_a.same_shape(channel_b)) throw ValidationError("dual image channels differ in shape");
}

DualImage correct_pair(const DualImage& raw, double i0_a, double i0_b,
                       const DetectorCalibration& calib, double eps_fraction) {
    raw.validate();
    if (raw.stage != Stage::kRaw) throw ValidationError("correct_pair expects a raw image pair");
    if (!(i0_a > 0.0) || !(i0_b > 0.0)) throw ValidationError("flatfield intensities must be > 0");
    calib.check_shape(raw.channel_a.width(), raw.channel_a.height());

    auto correct = [&](const ImageGrid& y, double i0) {
        const double eps = eps_fraction * i0;
        ImageGrid m(y.width(), y.height(), y.pitch());
        auto v = m.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = -std::log(std::max(y[i] - calib.dark_offset.at(i), eps) / i0);
        }
        return m;
    };
    DualImage out = raw;
    out.channel_a = correct(raw.channel_a, i0_a);
    out.channel_b = correct(raw.channel_b, i0_b);
    out.stage = Stage::kCorrected;
    out.i0_a = i0_a;
    out.i0_b = i0_b;
    return out;
}

void DetectorConfig::validate() const {
    if (!(z_threshold > 0.0)) throw ValidationError("z_threshold must be > 0");
    if (min_area < 1) throw ValidationError("min_area must be >= 1");
    if (!(denom_floor > 0.0)) throw ValidationError("denom_floor must be > 0");
    if (!(min_delta >= 0.0)) throw ValidationError("min_delta must be >= 0");
}

BinaryMask filter_components(const BinaryMask& mask, int min_area) {
    const int w = mask.width();
    const int h = mask.height();
    BinaryMask out(w, h);
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<std::size_t> stack;
    std::vector<std::size_t> component;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || seen[start]) continue;
        component.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            component.push_back(p);
            const int px = static_cast<int>(p % static_cast<std::size_t>(w));
            const int py = static_cast<int>(p / static_cast<std::size_t>(w));
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = px + dx;
                    const int ny = py + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                    if (mask[q] && !seen[q]) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
            }
        }
        if (component.size() >= static_cast<std::size_t>(min_area)) {
            for (auto p : component) out.set(p, true);
        }
    }
    return out;
}

BinaryMask baseline_segment(const DualImage& pair, const DetectorConfig& cfg,
                            const DetectorCalibration& calib) {
    pair.validate();
    cfg.validate();
    if (pair.stage != Stage::kCorrected) {
        throw ValidationError("baseline_segment expects a corrected image pair");
    }
    if (!(pair.i0_a > 0.0) || !(pair.i0_b > 0.0)) {
        throw ValidationError("corrected pair lacks flatfield intensities");
    }
    const auto& ma = pair.channel_a;
    const auto& mb = pair.channel_b;
    calib.check_shape(ma.width(), ma.height());

    const auto q = forward::quotient(ma, mb, cfg.denom_floor);
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < mb.size(); ++i) {
        if (mb[i] >= cfg.object_mask_threshold && q.valid[i]) support.push_back(i);
    }
    if (support.empty()) throw ValidationError("baseline_segment: empty object mask");

    std::vector<double> rs;
    rs.reserve(support.size());
    for (auto i : support) rs.push_back(q.r[i]);
    const std::size_t mid = rs.size() / 2;
    std::nth_element(rs.begin(), rs.begin() + static_cast<std::ptrdiff_t>(mid), rs.end());
    double r_m = rs[mid];
    if (rs.size() % 2 == 0) {
        r_m = 0.5 * (r_m + *std::max_element(rs.begin(), rs.begin() + static_cast<std::ptrdiff_t>(mid)));
    }

    BinaryMask candidates(ma.width(), ma.height());
    for (auto i : support) {
        const double ia = pair.i0_a * std::exp(-ma[i]);
        const double ib = pair.i0_b * std::exp(-mb[i]);
        const double var_a = forward::log_variance(ia, calib, i);
        const double var_b = forward::log_variance(ib, calib, i);
        const double sd_r = std::sqrt(forward::quotient_variance(var_a, var_b, r_m, mb[i]));
        const double dev = std::fabs(q.r[i] - r_m);
        if (dev > cfg.z_threshold * sd_r && dev > cfg.min_delta) candidates.set(i, true);
    }
    return filter_components(candidates, cfg.min_area);
}

DetectionOutcome to_outcome(const BinaryMask& predicted, const BinaryMask& gt, double contrast,
                            std::string sample_id) {
    if (!predicted.same_shape(gt)) {
        throw ValidationError("prediction and ground truth differ in shape" +
                              (sample_id.empty() ? std::string() : " for sample " + sample_id));
    }
    DetectionOutcome o;
    o.sample_id = std::move(sample_id);
    o.contrast = contrast;
    const std::size_t n_gt = gt.count();
    o.fo_present = n_gt > 0;
    if (o.fo_present) {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < gt.size(); ++i) hit += (gt[i] && predicted[i]) ? 1 : 0;
        o.recall = static_cast<double>(hit) / static_cast<double>(n_gt);
        // recall > 10%, evaluated exactly in integers
        o.detected = 10 * hit > n_gt;
    } else {
        o.false_positive = predicted.count() > 0;
    }
    return o;
}

}  // namespace xpod::detect
