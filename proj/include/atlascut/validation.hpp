#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/imageops.hpp"
#include "atlascut/volume.hpp"

// Evaluation protocol (overlap metrics restricted to a dilated gold-standard
// region, reported per stratum) and the synthetic phantom generator used in
// place of patient data.

namespace atlascut {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
};

// One value per assessment metric; ratios with zero denominators stay absent
// rather than being coerced to 0 or 1.
struct SliceMetrics {
    std::optional<double> dice, jaccard, sensitivity, specificity, ppv, npv;

    std::optional<double> by_index(int i) const {
        switch (i) {
            case 0: return dice;
            case 1: return jaccard;
            case 2: return sensitivity;
            case 3: return specificity;
            case 4: return ppv;
            default: return npv;
        }
    }
};

inline const std::array<std::string, 6>& metric_names() {
    static const std::array<std::string, 6> names = {"dice",        "jaccard",
                                                     "sensitivity", "specificity",
                                                     "ppv",         "npv"};
    return names;
}

inline const std::array<std::string, 6>& metric_display_names() {
    static const std::array<std::string, 6> names = {"Dice Index",  "Jaccard Index",
                                                     "Sensitivity", "Specificity",
                                                     "PPV",         "NPV"};
    return names;
}

inline ConfusionCounts compute_confusion(const Mask2& pred, const Mask2& gt,
                                         const Mask2& region) {
    if (!pred.same_dims(gt) || !pred.same_dims(region))
        throw DegenerateInputError("compute_confusion: dims mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!region[i]) continue;
        if (pred[i] && gt[i]) ++c.tp;
        else if (pred[i] && !gt[i]) ++c.fp;
        else if (!pred[i] && gt[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline SliceMetrics metrics_from_confusion(const ConfusionCounts& c) {
    SliceMetrics m;
    auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.jaccard = ratio(c.tp, c.tp + c.fp + c.fn);
    m.sensitivity = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    m.ppv = ratio(c.tp, c.tp + c.fp);
    m.npv = ratio(c.tn, c.tn + c.fn);
    return m;
}

inline SliceMetrics compute_metrics(const Mask2& pred, const Mask2& gt,
                                    const Mask2& region) {
    return metrics_from_confusion(compute_confusion(pred, gt, region));
}

inline int round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    if (frac > 0.5) return static_cast<int>(f) + 1;
    if (frac < 0.5) return static_cast<int>(f);
    const int fi = static_cast<int>(f);
    return (fi % 2 == 0) ? fi : fi + 1;
}

// Counting domain for one slice: the gold-standard myocardium dilated by one
// fourth of the radius of the disk with the same area. Keeps the negative
// class comparable in size to the positive one, so NPV stays informative.
inline Mask2 evaluation_region(const Mask2& gt_myo) {
    const std::size_t area = count_foreground(gt_myo);
    if (area == 0) return Mask2(gt_myo.nx(), gt_myo.ny(), 0);
    const double r_eq = std::sqrt(static_cast<double>(area) / std::numbers::pi);
    return dilate_disk(gt_myo, round_half_even(r_eq / 4.0));
}

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;
    int n = 0;
};

struct StratumReport {
    std::array<std::optional<Stat>, 6> metrics;
    std::vector<int> slices;
};

struct MetricReport {
    StratumReport mid, apical_basal, all;
    bool stratified = true;  // false when the range is too short to split
};

namespace detail {

inline std::optional<Stat> aggregate(const std::vector<SliceMetrics>& ms,
                                     const std::vector<std::size_t>& idx, int metric) {
    std::vector<double> vals;
    for (std::size_t i : idx) {
        const auto v = ms[i].by_index(metric);
        if (v) vals.push_back(*v);
    }
    if (vals.empty()) return std::nullopt;
    Stat s;
    s.n = static_cast<int>(vals.size());
    for (double v : vals) s.mean += v;
    s.mean /= vals.size();
    for (double v : vals) s.stddev += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(s.stddev / vals.size());
    return s;
}

inline StratumReport make_stratum(const std::vector<SliceMetrics>& ms,
                                  const std::vector<int>& zs,
                                  const std::vector<std::size_t>& idx) {
    StratumReport r;
    for (std::size_t i : idx) r.slices.push_back(zs[i]);
    for (int m = 0; m < 6; ++m) r.metrics[m] = aggregate(ms, idx, m);
    return r;
}

}  // namespace detail

// Splits the evaluated slice range into apical/basal (first and last two
// slices) and mid strata. Ranges shorter than 5 slices only get the combined
// stratum and are flagged as unstratified.
inline MetricReport stratified_report(const std::vector<int>& slice_z,
                                      const std::vector<SliceMetrics>& per_slice,
                                      int z_start, int z_end) {
    if (slice_z.size() != per_slice.size())
        throw DegenerateInputError("stratified_report: slice/metric count mismatch");
    MetricReport rep;
    std::vector<std::size_t> all_idx, mid_idx, ab_idx;
    for (std::size_t i = 0; i < slice_z.size(); ++i) {
        all_idx.push_back(i);
        const int z = slice_z[i];
        const bool apical_basal = (z <= z_start + 1) || (z >= z_end - 1);
        (apical_basal ? ab_idx : mid_idx).push_back(i);
    }
    rep.all = detail::make_stratum(per_slice, slice_z, all_idx);
    if (z_end - z_start + 1 < 5) {
        rep.stratified = false;
        return rep;
    }
    rep.mid = detail::make_stratum(per_slice, slice_z, mid_idx);
    rep.apical_basal = detail::make_stratum(per_slice, slice_z, ab_idx);
    return rep;
}

inline nlohmann::json stratum_to_json(const StratumReport& r) {
    nlohmann::json j;
    j["slices"] = r.slices;
    for (int m = 0; m < 6; ++m) {
        if (r.metrics[m]) {
            j[metric_names()[m]] = {{"mean", r.metrics[m]->mean},
                                    {"std", r.metrics[m]->stddev},
                                    {"n", r.metrics[m]->n}};
        } else {
            j[metric_names()[m]] = nullptr;
        }
    }
    return j;
}

inline StratumReport stratum_from_json(const nlohmann::json& j) {
    StratumReport r;
    r.slices = j.value("slices", std::vector<int>{});
    for (int m = 0; m < 6; ++m) {
        const auto& v = j.at(metric_names()[m]);
        if (v.is_null()) continue;
        Stat s;
        s.mean = v.at("mean").get<double>();
        s.stddev = v.at("std").get<double>();
        s.n = v.at("n").get<int>();
        r.metrics[m] = s;
    }
    return r;
}

inline nlohmann::json report_to_json(const MetricReport& rep) {
    nlohmann::json j;
    j["stratified"] = rep.stratified;
    j["all"] = stratum_to_json(rep.all);
    if (rep.stratified) {
        j["mid"] = stratum_to_json(rep.mid);
        j["apical_basal"] = stratum_to_json(rep.apical_basal);
    }
    return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport rep;
    rep.stratified = j.at("stratified").get<bool>();
    rep.all = stratum_from_json(j.at("all"));
    if (rep.stratified) {
        rep.mid = stratum_from_json(j.at("mid"));
        rep.apical_basal = stratum_from_json(j.at("apical_basal"));
    }
    return rep;
}

// Plain-text table in the usual three-column layout.
inline std::string render_report_table(const MetricReport& rep) {
    auto cell = [](const std::optional<Stat>& s) {
        if (!s) return std::string("      --      ");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3f +/- %.3f", s->mean, s->stddev);
        return std::string(buf);
    };
    std::string out;
    out += "Assessment Metric | Mid-Slices      | Apical/Basal-Slices | All Slices\n";
    out += "------------------+-----------------+---------------------+----------------\n";
    for (int m = 0; m < 6; ++m) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-17s | %-15s | %-19s | %s\n",
                      metric_display_names()[m].c_str(),
                      rep.stratified ? cell(rep.mid.metrics[m]).c_str() : "--",
                      rep.stratified ? cell(rep.apical_basal.metrics[m]).c_str() : "--",
                      cell(rep.all.metrics[m]).c_str());
        out += line;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic phantom: concentric blood-pool disk and myocardial annulus with an
// RV-like crescent, radius taper toward the apex, per-slice intensity offsets
// and in-plane jitter, plus a sinusoidal cardiac cycle across frames.

struct PhantomSpec {
    int nx = 128, ny = 128, n_slices = 12;
    int n_frames = 8;
    double center_x = 64.0, center_y = 64.0;
    double bp_radius_base = 26.0;
    double bp_radius_apex = 12.0;
    double myo_thickness = 8.0;
    double intensity_bp = 200.0;
    double intensity_myo = 80.0;
    double intensity_bg1 = 30.0;   // chest-wall background
    double intensity_bg2 = 130.0;  // RV-like crescent
    double noise_sigma = 10.0;
    double slice_offset_amplitude = 15.0;
    double jitter_amplitude = 1.0;
    double motion_amplitude = 0.25;
    std::uint64_t seed = 1234;
};

struct Phantom {
    std::vector<Volume> frames;  // frame 0 is end diastole (largest cavity)
    Mask3 gt_bp;                 // ground truth at frame 0
    Mask3 gt_myo;
};

inline void validate_phantom_spec(const PhantomSpec& s) {
    if (s.nx < 16 || s.ny < 16 || s.n_slices < 1 || s.n_frames < 1)
        throw DegenerateInputError("phantom spec: dims too small");
    if (s.bp_radius_base <= 0 || s.bp_radius_apex <= 0)
        throw DegenerateInputError("phantom spec: blood pool radius must be positive");
    if (s.myo_thickness < 2)
        throw DegenerateInputError("phantom spec: myocardium thinner than 2 px");
    const double reach = std::max(s.bp_radius_base, s.bp_radius_apex) + s.myo_thickness +
                         s.jitter_amplitude + 2.0;
    const double margin = std::min(std::min(s.center_x, s.nx - 1 - s.center_x),
                                   std::min(s.center_y, s.ny - 1 - s.center_y));
    if (reach > margin)
        throw DegenerateInputError("phantom spec: geometry exceeds the frame");
}

namespace detail {

// Deterministic per-slice wobble, independent of the noise seed so masks do
// not change when the seed does.
inline double slice_jitter_x(const PhantomSpec& s, int z) {
    return s.jitter_amplitude * std::cos(2.39996 * z);
}
inline double slice_jitter_y(const PhantomSpec& s, int z) {
    return s.jitter_amplitude * std::sin(2.39996 * z);
}
inline double slice_offset(const PhantomSpec& s, int z) {
    return s.slice_offset_amplitude * std::cos(1.7 * z + 0.5);
}
inline double bp_radius(const PhantomSpec& s, int z) {
    if (s.n_slices == 1) return s.bp_radius_base;
    const double t = static_cast<double>(z) / (s.n_slices - 1);
    return s.bp_radius_base + t * (s.bp_radius_apex - s.bp_radius_base);
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& s) {
    validate_phantom_spec(s);
    Phantom ph;
    ph.gt_bp = Mask3(s.nx, s.ny, s.n_slices, 0);
    ph.gt_myo = Mask3(s.nx, s.ny, s.n_slices, 0);

    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> noise(0.0, s.noise_sigma);

    for (int f = 0; f < s.n_frames; ++f) {
        // frame 0 is maximal filling; the cavity shrinks mid-cycle
        const double phase = 2.0 * std::numbers::pi * f / s.n_frames;
        const double scale = 1.0 - s.motion_amplitude * 0.5 * (1.0 - std::cos(phase));

        Volume vol(s.nx, s.ny, s.n_slices);
        vol.frame_index = f;
        for (int z = 0; z < s.n_slices; ++z) {
            const double cx = s.center_x + detail::slice_jitter_x(s, z);
            const double cy = s.center_y + detail::slice_jitter_y(s, z);
            const double r_endo = detail::bp_radius(s, z) * scale;
            const double r_epi = r_endo + s.myo_thickness;
            const double rv_r = 0.9 * r_epi;
            const double rv_cx = cx - 1.35 * r_epi;
            const double off = detail::slice_offset(s, z);

            for (int y = 0; y < s.ny; ++y)
                for (int x = 0; x < s.nx; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    const double rv_d2 = (x - rv_cx) * (x - rv_cx) + (y - cy) * (y - cy);
                    double v = s.intensity_bg1;
                    if (rv_d2 <= rv_r * rv_r) v = s.intensity_bg2;
                    if (d2 <= r_epi * r_epi) v = s.intensity_myo;
                    if (d2 <= r_endo * r_endo) v = s.intensity_bp;
                    v += off;
                    if (s.noise_sigma > 0.0) v += noise(rng);
                    vol.vox(x, y, z) = static_cast<float>(v);

                    if (f == 0) {
                        if (d2 <= r_endo * r_endo) ph.gt_bp(x, y, z) = 1;
                        else if (d2 <= r_epi * r_epi) ph.gt_myo(x, y, z) = 1;
                    }
                }
        }
        ph.frames.push_back(std::move(vol));
    }
    return ph;
}

inline nlohmann::json phantom_spec_to_json(const PhantomSpec& s) {
    return nlohmann::json{{"nx", s.nx},
                          {"ny", s.ny},
                          {"n_slices", s.n_slices},
                          {"n_frames", s.n_frames},
                          {"center_x", s.center_x},
                          {"center_y", s.center_y},
                          {"bp_radius_base", s.bp_radius_base},
                          {"bp_radius_apex", s.bp_radius_apex},
                          {"myo_thickness", s.myo_thickness},
                          {"intensity_bp", s.intensity_bp},
                          {"intensity_myo", s.intensity_myo},
                          {"intensity_bg1", s.intensity_bg1},
                          {"intensity_bg2", s.intensity_bg2},
                          {"noise_sigma", s.noise_sigma},
                          {"slice_offset_amplitude", s.slice_offset_amplitude},
                          {"jitter_amplitude", s.jitter_amplitude},
                          {"motion_amplitude", s.motion_amplitude},
                          {"seed", s.seed}};
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    PhantomSpec d;  // defaults fill anything the file omits
    PhantomSpec s;
    s.nx = j.value("nx", d.nx);
    s.ny = j.value("ny", d.ny);
    s.n_slices = j.value("n_slices", d.n_slices);
    s.n_frames = j.value("n_frames", d.n_frames);
    s.center_x = j.value("center_x", d.center_x);
    s.center_y = j.value("center_y", d.center_y);
    s.bp_radius_base = j.value("bp_radius_base", d.bp_radius_base);
    s.bp_radius_apex = j.value("bp_radius_apex", d.bp_radius_apex);
    s.myo_thickness = j.value("myo_thickness", d.myo_thickness);
    s.intensity_bp = j.value("intensity_bp", d.intensity_bp);
    s.intensity_myo = j.value("intensity_myo", d.intensity_myo);
    s.intensity_bg1 = j.value("intensity_bg1", d.intensity_bg1);
    s.intensity_bg2 = j.value("intensity_bg2", d.intensity_bg2);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.slice_offset_amplitude = j.value("slice_offset_amplitude", d.slice_offset_amplitude);
    s.jitter_amplitude = j.value("jitter_amplitude", d.jitter_amplitude);
    s.motion_amplitude = j.value("motion_amplitude", d.motion_amplitude);
    s.seed = j.value("seed", d.seed);
    return s;
}

}  // namespace atlascut
