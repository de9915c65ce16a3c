#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/atlas.hpp"
#include "atlascut/cvol_io.hpp"
#include "atlascut/errors.hpp"
#include "atlascut/graphcut.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/imageops.hpp"
#include "atlascut/parallel.hpp"
#include "atlascut/registration.hpp"
#include "atlascut/stats.hpp"
#include "atlascut/volume.hpp"

// Orchestration: blood-pool segmentation by iterative graph cuts with
// prior-map refinement, slice by slice from the mid-slice outward, followed by
// a single-pass myocardium cut.

namespace atlascut {

struct PipelineConfig {
    int z_start = 0;  // manual LV extent, the algorithm's only manual input
    int z_end = -1;
    double erosion_fraction = 0.15;
    double distance_cap = 10.0;
    double prior_threshold = 0.5;
    double low_threshold = 0.1;
    std::array<double, 3> myo_weights = {0.2, 0.3, 0.5};
    int max_iterations = 10;
    double convergence_tol = 0.01;  // L2 norm of the refinement affine parameters
    std::uint64_t seed = 1234;
    bool interslice_locking = true;  // ablation toggle for neighbor-slice seeding
    bool auto_roi = false;
    int jobs = 1;
    RegistrationSettings atlas_reg{2.0, 0.05, 1e-8, 1500, 300, true};
    RegistrationSettings refine_reg{2.0, 0.05, 1e-8, 600, 200, true};
};

inline void validate_config(const PipelineConfig& c) {
    if (c.z_start > c.z_end)
        throw DegenerateInputError("config: z_start must be <= z_end");
    if (!(c.erosion_fraction > 0.0 && c.erosion_fraction < 1.0))
        throw DegenerateInputError("config: erosion_fraction must be in (0,1)");
    if (c.distance_cap <= 0.0) throw DegenerateInputError("config: distance_cap <= 0");
    const double wsum = c.myo_weights[0] + c.myo_weights[1] + c.myo_weights[2];
    if (std::abs(wsum - 1.0) > 1e-9)
        throw DegenerateInputError("config: myo_weights must sum to 1");
    for (double w : c.myo_weights)
        if (w < 0.0) throw DegenerateInputError("config: negative myo weight");
    if (!(c.myo_weights[0] <= c.myo_weights[1] && c.myo_weights[1] <= c.myo_weights[2]))
        throw DegenerateInputError("config: myo_weights must be non-decreasing");
    if (c.max_iterations < 1) throw DegenerateInputError("config: max_iterations < 1");
    if (c.convergence_tol <= 0.0) throw DegenerateInputError("config: convergence_tol <= 0");
}

inline nlohmann::json registration_settings_to_json(const RegistrationSettings& s) {
    return nlohmann::json{{"translate_step", s.translate_step},
                          {"linear_step", s.linear_step},
                          {"ftol", s.ftol},
                          {"coarse_max_iter", s.coarse_max_iter},
                          {"fine_max_iter", s.fine_max_iter},
                          {"use_pyramid", s.use_pyramid}};
}

inline RegistrationSettings registration_settings_from_json(const nlohmann::json& j,
                                                            RegistrationSettings d) {
    d.translate_step = j.value("translate_step", d.translate_step);
    d.linear_step = j.value("linear_step", d.linear_step);
    d.ftol = j.value("ftol", d.ftol);
    d.coarse_max_iter = j.value("coarse_max_iter", d.coarse_max_iter);
    d.fine_max_iter = j.value("fine_max_iter", d.fine_max_iter);
    d.use_pyramid = j.value("use_pyramid", d.use_pyramid);
    return d;
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    return nlohmann::json{{"slice_range", {c.z_start, c.z_end}},
                          {"erosion_fraction", c.erosion_fraction},
                          {"distance_cap", c.distance_cap},
                          {"prior_threshold", c.prior_threshold},
                          {"low_threshold", c.low_threshold},
                          {"myo_weights", c.myo_weights},
                          {"max_iterations", c.max_iterations},
                          {"convergence_tol", c.convergence_tol},
                          {"seed", c.seed},
                          {"interslice_locking", c.interslice_locking},
                          {"auto_roi", c.auto_roi},
                          {"atlas_registration", registration_settings_to_json(c.atlas_reg)},
                          {"refine_registration", registration_settings_to_json(c.refine_reg)}};
}

inline PipelineConfig config_from_json(const nlohmann::json& j,
                                       bool require_slice_range = true) {
    PipelineConfig c;
    if (j.contains("slice_range")) {
        if (!j["slice_range"].is_array() || j["slice_range"].size() != 2)
            throw FormatError("config: slice_range must be [z_start, z_end]");
        c.z_start = j["slice_range"][0].get<int>();
        c.z_end = j["slice_range"][1].get<int>();
    } else if (require_slice_range) {
        throw FormatError(
            "config: missing required slice_range (the manual LV start/end slices)");
    }
    c.erosion_fraction = j.value("erosion_fraction", c.erosion_fraction);
    c.distance_cap = j.value("distance_cap", c.distance_cap);
    c.prior_threshold = j.value("prior_threshold", c.prior_threshold);
    c.low_threshold = j.value("low_threshold", c.low_threshold);
    if (j.contains("myo_weights")) {
        const auto w = j["myo_weights"].get<std::vector<double>>();
        if (w.size() != 3) throw FormatError("config: myo_weights needs 3 entries");
        std::copy(w.begin(), w.end(), c.myo_weights.begin());
    }
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.convergence_tol = j.value("convergence_tol", c.convergence_tol);
    c.seed = j.value("seed", c.seed);
    c.interslice_locking = j.value("interslice_locking", c.interslice_locking);
    c.auto_roi = j.value("auto_roi", c.auto_roi);
    if (j.contains("atlas_registration"))
        c.atlas_reg = registration_settings_from_json(j["atlas_registration"], c.atlas_reg);
    if (j.contains("refine_registration"))
        c.refine_reg = registration_settings_from_json(j["refine_registration"], c.refine_reg);
    return c;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Optional sink for the per-stage diagnostic fields (the --debug-dump option).
class DebugSink {
public:
    explicit DebugSink(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }
    void field(const std::string& name, const Field2& f) const {
        Volume v;
        v.vox = Grid3<float>(f.nx(), f.ny(), 1);
        std::copy(f.raw().begin(), f.raw().end(), v.vox.raw().begin());
        save_volume(v, dir_ / name);
    }
    void mask(const std::string& name, const Mask2& m) const {
        Mask3 v(m.nx(), m.ny(), 1);
        std::copy(m.raw().begin(), m.raw().end(), v.raw().begin());
        save_mask(v, dir_ / name);
    }

private:
    std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// In-plane ROI from temporal motion (simplified stand-in for the published
// motion-correlation detector: per-pixel temporal standard deviation across
// the cycle, Otsu-thresholded, largest component's box padded by 10%).

struct RoiRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};

inline RoiRect detect_roi_xy(const std::vector<Volume>& frames) {
    if (frames.size() < 2)
        throw DegenerateInputError("detect_roi_xy: need at least 2 cine frames");
    const int nx = frames[0].nx(), ny = frames[0].ny(), nz = frames[0].nz();
    for (const auto& f : frames)
        if (f.nx() != nx || f.ny() != ny || f.nz() != nz)
            throw DegenerateInputError("detect_roi_xy: frame dims disagree");

    // motion image: max over z of the temporal standard deviation
    Field2 motion(nx, ny, 0.0f);
    const double n = static_cast<double>(frames.size());
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                double mean = 0.0;
                for (const auto& f : frames) mean += f.vox(x, y, z);
                mean /= n;
                double var = 0.0;
                for (const auto& f : frames) {
                    const double d = f.vox(x, y, z) - mean;
                    var += d * d;
                }
                motion(x, y) = std::max(motion(x, y),
                                        static_cast<float>(std::sqrt(var / n)));
            }

    float peak = 0.0f;
    for (float v : motion.raw()) peak = std::max(peak, v);
    if (peak <= 0.0f)
        throw DegenerateInputError(
            "detect_roi_xy: static cine (zero temporal variance); supply a manual ROI");

    // scale to the 0-255 histogram domain before thresholding
    std::vector<float> scaled(motion.size());
    for (std::size_t i = 0; i < motion.size(); ++i) scaled[i] = motion[i] / peak * 255.0f;
    Mask2 moving(nx, ny, 0);
    try {
        const double thr = otsu_threshold(scaled);
        for (std::size_t i = 0; i < moving.size(); ++i) moving[i] = scaled[i] > thr ? 1 : 0;
    } catch (const DegenerateInputError&) {
        // uniform motion everywhere: the whole frame moves
        for (std::size_t i = 0; i < moving.size(); ++i) moving[i] = motion[i] > 0 ? 1 : 0;
    }

    const auto comps = connected_components(moving);
    std::vector<std::size_t> sizes(comps.count + 1, 0);
    for (int id : comps.label.raw())
        if (id) ++sizes[id];
    int largest = 1;
    for (int id = 2; id <= comps.count; ++id)
        if (sizes[id] > sizes[largest]) largest = id;

    RoiRect r{nx - 1, ny - 1, 0, 0};
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            if (comps.label(x, y) == largest) {
                r.x0 = std::min(r.x0, x);
                r.x1 = std::max(r.x1, x);
                r.y0 = std::min(r.y0, y);
                r.y1 = std::max(r.y1, y);
            }
    const int pad_x = static_cast<int>(std::ceil(0.1 * r.width()));
    const int pad_y = static_cast<int>(std::ceil(0.1 * r.height()));
    r.x0 = std::max(0, r.x0 - pad_x);
    r.y0 = std::max(0, r.y0 - pad_y);
    r.x1 = std::min(nx - 1, r.x1 + pad_x);
    r.y1 = std::min(ny - 1, r.y1 + pad_y);
    return r;
}

inline Volume crop_xy(const Volume& v, const RoiRect& r) {
    Volume out(r.width(), r.height(), v.nz());
    out.spacing = v.spacing;
    out.frame_index = v.frame_index;
    for (int z = 0; z < v.nz(); ++z)
        for (int y = 0; y < r.height(); ++y)
            for (int x = 0; x < r.width(); ++x)
                out.vox(x, y, z) = v.vox(r.x0 + x, r.y0 + y, z);
    return out;
}

// Pastes a mask segmented on the cropped grid back into the full frame.
inline Mask3 embed_mask_xy(const Mask3& cropped, const RoiRect& r, int nx, int ny) {
    Mask3 out(nx, ny, cropped.nz(), 0);
    for (int z = 0; z < cropped.nz(); ++z)
        for (int y = 0; y < cropped.ny(); ++y)
            for (int x = 0; x < cropped.nx(); ++x)
                if (cropped(x, y, z)) out(r.x0 + x, r.y0 + y, z) = 1;
    return out;
}

// ---------------------------------------------------------------------------
// Blood-pool stage

// Per-slice prior-derived structures: the inverted/normalized BP-vs-BG map,
// the high-confidence ROI it implies, the Otsu-selected initial BP region and
// the enclosing ROI used for background sampling.
struct BpPriorStructures {
    Field2 bp_prob;       // Pr(f_p = blood pool), masked by the eroded BP ROI
    Mask2 high_conf_roi;  // inner component of (inverted prior > 0.5)
    Mask2 init_bp;        // bright pixels of the high-confidence ROI
    Mask2 enclosing_roi;  // holes-filled low-threshold prior mask (BP+myo+BG)
    bool ok = false;
    std::string why;
};

inline BpPriorStructures bp_prior_structures(const Slice& s, const Field2& prior,
                                             const PipelineConfig& cfg) {
    BpPriorStructures st;
    const int nx = prior.nx(), ny = prior.ny();

    float pmax = 0.0f;
    for (float v : prior.raw()) pmax = std::max(pmax, v);
    if (pmax <= 0.0f) {
        st.why = "prior is zero on this slice";
        return st;
    }

    // normalize and invert the myocardium prior -> BP/BG map
    Field2 inv(nx, ny, 0.0f);
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0f - prior[i] / pmax;

    Mask2 inv_high(nx, ny, 0);
    for (std::size_t i = 0; i < inv.size(); ++i)
        inv_high[i] = inv[i] > cfg.prior_threshold ? 1 : 0;
    st.high_conf_roi = inner_component(inv_high);
    if (count_foreground(st.high_conf_roi) == 0) {
        st.why = "no high-confidence BP region above threshold";
        return st;
    }

    try {
        const double thr = otsu_threshold(s.pix, st.high_conf_roi);
        st.init_bp = Mask2(nx, ny, 0);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                if (st.high_conf_roi(x, y) && s.pix(x, y) > thr) st.init_bp(x, y) = 1;
    } catch (const DegenerateInputError& e) {
        st.why = std::string("initial BP thresholding failed: ") + e.what();
        return st;
    }
    if (count_foreground(st.init_bp) == 0) {
        st.why = "initial BP region is empty";
        return st;
    }

    // myocardium+BP ROI, eroded by a fraction of its circumscribed radius
    Mask2 myo_high(nx, ny, 0);
    for (std::size_t i = 0; i < prior.size(); ++i)
        myo_high[i] = prior[i] > cfg.prior_threshold ? 1 : 0;
    if (count_foreground(myo_high) == 0) {
        st.why = "prior never exceeds the threshold";
        return st;
    }
    const Mask2 bp_roi = erode_by_circumscribed_fraction(fill_holes(myo_high),
                                                         cfg.erosion_fraction);
    if (count_foreground(bp_roi) == 0) {
        st.why = "eroded BP ROI is empty";
        return st;
    }

    st.bp_prob = Field2(nx, ny, 0.0f);
    for (std::size_t i = 0; i < inv.size(); ++i)
        st.bp_prob[i] = bp_roi[i] ? inv[i] : 0.0f;

    Mask2 myo_low(nx, ny, 0);
    for (std::size_t i = 0; i < prior.size(); ++i)
        myo_low[i] = prior[i] > cfg.low_threshold ? 1 : 0;
    st.enclosing_roi = fill_holes(myo_low);

    st.ok = true;
    return st;
}

struct BpModels {
    GaussianMixture bp;  // single Gaussian over the current BP estimate
    GaussianMixture bg;  // two-component mixture over the enclosing ROI minus BP
};

inline BpModels bp_models(const Slice& s, const Mask2& bp_region,
                          const Mask2& enclosing_roi, std::uint64_t seed) {
    std::vector<float> bp_samples, bg_samples;
    for (std::size_t i = 0; i < bp_region.size(); ++i) {
        if (bp_region[i]) bp_samples.push_back(s.pix[i]);
        else if (enclosing_roi[i]) bg_samples.push_back(s.pix[i]);
    }
    if (bp_samples.size() < 2)
        throw DegenerateInputError("bp_models: fewer than 2 blood-pool samples");
    if (bg_samples.size() < 2)
        throw DegenerateInputError("bp_models: fewer than 2 background samples");
    BpModels m;
    m.bp = fit_gaussian(bp_samples);
    m.bg = fit_gmm(bg_samples, 2, seed);
    return m;
}

struct BpSliceResult {
    Mask2 bp;              // convex hull of the converged cut
    Mask2 raw_cut;         // last graph-cut labeling before the hull
    Field2 refined_prior;  // myocardium prior after the affine refinements
    int iterations = 0;
    bool converged = false;
    bool ok = false;
    std::string warning;
};

namespace detail {

// The hollow interior of the thresholded myocardium prior: the prior-derived
// BP region used for distance-map registration.
inline Mask2 prior_bp_region(const Field2& prior, double threshold) {
    Mask2 high(prior.nx(), prior.ny(), 0);
    for (std::size_t i = 0; i < prior.size(); ++i)
        high[i] = prior[i] > threshold ? 1 : 0;
    const Mask2 filled = fill_holes(high);
    Mask2 hole(prior.nx(), prior.ny(), 0);
    for (std::size_t i = 0; i < hole.size(); ++i) hole[i] = filled[i] && !high[i] ? 1 : 0;
    return inner_component(hole);
}

inline bool has_both_classes(const Mask2& m) {
    const std::size_t fg = count_foreground(m);
    return fg > 0 && fg < m.size();
}

}  // namespace detail

// One slice of the iterative blood-pool loop: fit models, cut, register the
// prior-derived boundary distance map onto the cut's, warp the prior, lock the
// cut, repeat until the refinement transform settles at identity.
inline BpSliceResult segment_bp_slice(const Slice& s, const Field2& prior_slice,
                                      const Mask2& locked, const PipelineConfig& cfg,
                                      std::uint64_t seed,
                                      const DebugSink* debug = nullptr,
                                      const std::string& debug_tag = "") {
    const int nx = s.nx(), ny = s.ny();
    BpSliceResult res;
    res.refined_prior = prior_slice;

    Field2 prior = prior_slice;
    Mask2 current_cut(nx, ny, 0);
    Mask2 locked_now = locked;
    const Mask2 full_roi(nx, ny, 1);

    auto fail_or_stop = [&](const std::string& why) {
        if (res.iterations == 0) {
            res.ok = false;
            res.warning = why;
        } else {
            res.ok = true;  // keep the last consistent iterate
            res.warning = why;
        }
    };

    for (int tau = 1; tau <= cfg.max_iterations; ++tau) {
        const auto st = bp_prior_structures(s, prior, cfg);
        if (!st.ok) {
            fail_or_stop("slice unsegmentable: " + st.why);
            break;
        }
        const Mask2& bp_region = (tau == 1) ? st.init_bp : current_cut;

        BpModels models;
        try {
            models = bp_models(s, bp_region, st.enclosing_roi, derive_seed(seed, tau));
        } catch (const DegenerateInputError& e) {
            fail_or_stop(std::string("model fit failed: ") + e.what());
            break;
        }

        const Field2 nll_bp_int = neg_log_likelihood_field(s, models.bp, full_roi);
        const Field2 nll_bg_int = neg_log_likelihood_field(s, models.bg, full_roi);
        Field2 nll_bp_prior(nx, ny, 0.0f), nll_bg_prior(nx, ny, 0.0f);
        for (std::size_t i = 0; i < nll_bp_prior.size(); ++i) {
            const double p = std::clamp<double>(st.bp_prob[i], 0.0, 1.0);
            nll_bp_prior[i] = static_cast<float>(-std::log(std::max(p, kProbabilityFloor)));
            nll_bg_prior[i] =
                static_cast<float>(-std::log(std::max(1.0 - p, kProbabilityFloor)));
        }

        EnergyField e(nx, ny);
        e.cost_bp = data_term(tau, nll_bp_int, nll_bp_prior);
        e.cost_bg = data_term(tau, nll_bg_int, nll_bg_prior);
        fill_smoothness(e, s.pix, tau);

        const auto cut = min_cut(e, locked_now);
        if (count_foreground(cut.labels) == 0) {
            fail_or_stop("graph cut produced an empty blood pool");
            break;
        }
        current_cut = cut.labels;
        res.iterations = tau;

        if (debug) {
            const std::string p = debug_tag + "_t" + std::to_string(tau);
            debug->field(p + "_nll_intensity_bp", nll_bp_int);
            debug->field(p + "_nll_prior_bp", nll_bp_prior);
            debug->field(p + "_data_bp", e.cost_bp);
            debug->mask(p + "_cut", current_cut);
        }

        // refine the prior against the new cut via 2D affine on the signed
        // distance maps of the two BP boundaries
        const Mask2 prior_bp = detail::prior_bp_region(prior, cfg.prior_threshold);
        const Mask2 cut_bp = fill_holes(current_cut);
        if (!detail::has_both_classes(prior_bp) || !detail::has_both_classes(cut_bp)) {
            res.warning = "prior refinement skipped: degenerate boundary";
            res.converged = true;
            break;
        }
        Affine2 refine;
        try {
            const DistanceMap sdm_prior = signed_distance(prior_bp);
            const DistanceMap sdm_cut = signed_distance(cut_bp);
            const auto reg = register_affine(sdm_cut, sdm_prior,
                                             centered_identity(nx, ny), cfg.refine_reg);
            refine = reg.transform;
        } catch (const Error& e) {
            res.warning = std::string("prior refinement aborted: ") + e.what();
            res.ok = true;
            break;
        }
        prior = resample(prior, refine, nx, ny);
        for (auto& v : prior.raw()) v = std::clamp(v, 0.0f, 1.0f);
        res.refined_prior = prior;

        if (refine.param_norm() < cfg.convergence_tol) {
            res.converged = true;
            break;
        }
        locked_now = current_cut;  // labels inside the latest BP must not change
    }

    if (res.iterations > 0) {
        res.ok = true;
        res.raw_cut = current_cut;
        res.bp = convex_hull_mask(current_cut);
        if (debug) debug->mask(debug_tag + "_bp_hull", res.bp);
    }
    return res;
}

struct BpVolumeResult {
    Mask3 bp;
    Field3 refined_prior;
    std::vector<int> iterations;        // indexed by z; 0 where not processed
    std::vector<std::uint8_t> converged;
    std::vector<int> slice_order;       // processing order: mid, mid+1, mid-1, ...
    std::vector<std::string> warnings;
};

inline std::vector<int> mid_outward_order(int z_start, int z_end) {
    const int mid = (z_start + z_end) / 2;
    std::vector<int> order{mid};
    for (int d = 1; mid + d <= z_end || mid - d >= z_start; ++d) {
        if (mid + d <= z_end) order.push_back(mid + d);
        if (mid - d >= z_start) order.push_back(mid - d);
    }
    return order;
}

// Mid-slice first, then outward; each new slice locks in the eroded blood pool
// of its already-segmented neighbor so the 3D geometry guides the 2D cuts.
inline BpVolumeResult segment_bp_volume(const Volume& v, const Field3& prior,
                                        const PipelineConfig& cfg,
                                        const DebugSink* debug = nullptr) {
    validate_config(cfg);
    if (cfg.z_start < 0 || cfg.z_end >= v.nz())
        throw IndexError("slice_range exceeds the volume");
    if (prior.nx() != v.nx() || prior.ny() != v.ny() || prior.nz() != v.nz())
        throw DegenerateInputError("prior dims do not match the volume");

    BpVolumeResult out;
    out.bp = Mask3(v.nx(), v.ny(), v.nz(), 0);
    out.refined_prior = prior;
    out.iterations.assign(v.nz(), 0);
    out.converged.assign(v.nz(), 0);
    out.slice_order = mid_outward_order(cfg.z_start, cfg.z_end);

    const int mid = out.slice_order.front();
    std::vector<std::uint8_t> done(v.nz(), 0);
    for (int z : out.slice_order) {
        Mask2 locked(v.nx(), v.ny(), 0);
        if (cfg.interslice_locking && z != mid) {
            const int adj = (z > mid) ? z - 1 : z + 1;
            if (done[adj]) {
                const Mask2 adj_bp = extract_mask_slice(out.bp, adj);
                if (count_foreground(adj_bp) > 0) locked = erode_disk(adj_bp, 2);
            }
        }
        const Slice s = extract_slice(v, z);
        const Field2 prior_z = extract_field_slice(prior, z);
        const auto res =
            segment_bp_slice(s, prior_z, locked, cfg, derive_seed(cfg.seed, 1000 + z),
                             debug, "bp_z" + std::to_string(z));
        if (!res.warning.empty())
            out.warnings.push_back("z=" + std::to_string(z) + ": " + res.warning);
        if (res.ok) {
            replace_mask_slice(out.bp, z, res.bp);
            replace_field_slice(out.refined_prior, z, res.refined_prior);
            out.iterations[z] = res.iterations;
            out.converged[z] = res.converged ? 1 : 0;
            done[z] = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Myocardium stage

struct MyoModels {
    GaussianMixture myo;          // K=1
    GaussianMixture bg;           // K=3
    std::vector<Slice> matched;   // indexed by z - z_start; histogram-matched slices
    std::vector<Mask2> roi;       // enclosing ROI per slice
};

// Single volume-wide intensity model: per-slice ROIs histogram-matched to the
// mid-slice, myocardium pixels (prior > 0.5) fitted to one Gaussian and the
// remaining ROI pixels to a three-component mixture. Only non-apical/basal
// slices feed the model.
inline MyoModels myo_models(const Volume& v, const Field3& refined_prior,
                            const PipelineConfig& cfg) {
    validate_config(cfg);
    const int z_mid = (cfg.z_start + cfg.z_end) / 2;
    const int n_range = cfg.z_end - cfg.z_start + 1;

    MyoModels m;
    m.matched.resize(n_range);
    m.roi.resize(n_range);

    // reference histogram from the mid-slice ROI
    const Slice mid_slice = extract_slice(v, z_mid);
    const Field2 mid_prior = extract_field_slice(refined_prior, z_mid);
    Mask2 mid_roi(v.nx(), v.ny(), 0);
    for (std::size_t i = 0; i < mid_prior.size(); ++i)
        mid_roi[i] = mid_prior[i] > cfg.low_threshold ? 1 : 0;
    mid_roi = fill_holes(mid_roi);
    if (count_foreground(mid_roi) == 0)
        throw Error("myocardium stage: mid-slice ROI is empty");
    const Histogram ref_hist = histogram_of(mid_slice.pix, mid_roi);

    std::vector<float> myo_samples, bg_samples;
    for (int z = cfg.z_start; z <= cfg.z_end; ++z) {
        const int zi = z - cfg.z_start;
        const Slice s = extract_slice(v, z);
        const Field2 pz = extract_field_slice(refined_prior, z);
        Mask2 roi(v.nx(), v.ny(), 0);
        for (std::size_t i = 0; i < pz.size(); ++i)
            roi[i] = pz[i] > cfg.low_threshold ? 1 : 0;
        roi = fill_holes(roi);
        m.roi[zi] = roi;
        if (count_foreground(roi) == 0) {
            m.matched[zi] = s;  // nothing to match against
            continue;
        }
        m.matched[zi] = histogram_match(s, ref_hist, roi);

        // apical/basal slices are excluded from the volume-wide model
        const bool mid_stratum =
            n_range < 5 || (z >= cfg.z_start + 2 && z <= cfg.z_end - 2);
        if (!mid_stratum) continue;
        for (std::size_t i = 0; i < roi.size(); ++i) {
            if (!roi[i]) continue;
            if (pz[i] > cfg.prior_threshold) myo_samples.push_back(m.matched[zi].pix[i]);
            else bg_samples.push_back(m.matched[zi].pix[i]);
        }
    }
    if (myo_samples.size() < 2)
        throw Error("myocardium stage: empty myocardium sample set");
    if (bg_samples.size() < 3)
        throw Error("myocardium stage: background sample set too small");
    m.myo = fit_gaussian(myo_samples);
    m.bg = fit_gmm(bg_samples, 3, derive_seed(cfg.seed, 77));
    return m;
}

// Single-pass myocardium cut per slice: data term is the weighted sum of the
// intensity model, the refined prior, and the truncated distance from the
// endocardial border; the blood pool itself gets the maximal myocardium cost.
inline Mask3 segment_myocardium(const Volume& v, const Mask3& bp,
                                const Field3& refined_prior, const PipelineConfig& cfg,
                                const MyoModels& models,
                                std::vector<std::string>* warnings = nullptr,
                                const DebugSink* debug = nullptr) {
    validate_config(cfg);
    const int nx = v.nx(), ny = v.ny();
    Mask3 out(nx, ny, v.nz(), 0);
    const double c_max = max_nll();
    const auto [w1, w2, w3] = cfg.myo_weights;

    const int n_range = cfg.z_end - cfg.z_start + 1;
    std::vector<Mask2> results(n_range);
    std::vector<std::string> warn(n_range);

    parallel_for(n_range, cfg.jobs, [&](int zi) {
        const int z = cfg.z_start + zi;
        const Mask2 bp_z = extract_mask_slice(bp, z);
        if (count_foreground(bp_z) == 0) {
            warn[zi] = "z=" + std::to_string(z) + ": no blood pool, myocardium skipped";
            return;
        }
        const Slice& s = models.matched[zi];
        const Field2 pz = extract_field_slice(refined_prior, z);
        const Mask2 full_roi(nx, ny, 1);

        const Field2 nll_myo_int = neg_log_likelihood_field(s, models.myo, full_roi);
        const Field2 nll_bg_int = neg_log_likelihood_field(s, models.bg, full_roi);
        const Field2 dist = truncated_outside_distance(bp_z, cfg.distance_cap);

        EnergyField e(nx, ny);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const double p = std::clamp<double>(pz(x, y), 0.0, 1.0);
                const double nll_myo_prior = -std::log(std::max(p, kProbabilityFloor));
                const double nll_bg_prior = -std::log(std::max(1.0 - p, kProbabilityFloor));
                const bool inside_bp = bp_z(x, y) != 0;
                // distance energy: favors myocardium within the cap band and
                // forbids it inside the blood pool
                const double dist_myo =
                    inside_bp ? c_max : (dist(x, y) / cfg.distance_cap) * c_max;
                const double dist_bg = inside_bp ? 0.0 : c_max;
                e.cost_bp(x, y) = static_cast<float>(
                    w1 * nll_myo_int(x, y) + w2 * nll_myo_prior + w3 * dist_myo);
                e.cost_bg(x, y) = static_cast<float>(
                    w1 * nll_bg_int(x, y) + w2 * nll_bg_prior + w3 * dist_bg);
            }
        fill_smoothness(e, s.pix, 1);

        const auto cut = min_cut(e);
        Mask2 myo = cut.labels;

        // keep only the parts adjacent to the endocardial border
        const Mask2 near_bp = dilate_disk(bp_z, 1);
        const auto comps = connected_components(myo);
        std::vector<std::uint8_t> keep(comps.count + 1, 0);
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                if (comps.label(x, y) && near_bp(x, y)) keep[comps.label(x, y)] = 1;
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const int id = comps.label(x, y);
                myo(x, y) = (id && keep[id] && !bp_z(x, y)) ? 1 : 0;
            }
        results[zi] = myo;

        if (debug) {
            const std::string p = "myo_z" + std::to_string(z);
            debug->field(p + "_nll_intensity", nll_myo_int);
            debug->field(p + "_distance", dist);
            debug->field(p + "_data_myo", e.cost_bp);
            debug->mask(p + "_seg", myo);
        }
    });

    for (int zi = 0; zi < n_range; ++zi) {
        if (!warn[zi].empty() && warnings) warnings->push_back(warn[zi]);
        if (!results[zi].empty()) replace_mask_slice(out, cfg.z_start + zi, results[zi]);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct SegmentationResult {
    Mask3 bp;
    Mask3 myo;
    Field3 prior_propagated;
    Field3 prior_final;
    std::vector<int> iterations_per_slice;
    std::vector<std::uint8_t> converged_per_slice;
    std::vector<int> slice_order;
    std::vector<std::string> warnings;
};

// Full pipeline on a preprocessed (cropped, per-slice normalized) volume.
inline SegmentationResult run_pipeline(const Atlas& atlas, const Volume& test,
                                       const PipelineConfig& cfg,
                                       const DebugSink* debug = nullptr) {
    validate_config(cfg);
    if (cfg.z_end >= test.nz())
        throw IndexError("slice_range exceeds the test volume");

    SegmentationResult res;
    res.prior_propagated = propagate_prior(atlas, test, cfg.atlas_reg);

    auto bp_stage = segment_bp_volume(test, res.prior_propagated, cfg, debug);
    res.bp = std::move(bp_stage.bp);
    res.prior_final = std::move(bp_stage.refined_prior);
    res.iterations_per_slice = std::move(bp_stage.iterations);
    res.converged_per_slice = std::move(bp_stage.converged);
    res.slice_order = std::move(bp_stage.slice_order);
    res.warnings = std::move(bp_stage.warnings);

    const auto models = myo_models(test, res.prior_final, cfg);
    res.myo = segment_myocardium(test, res.bp, res.prior_final, cfg, models,
                                 &res.warnings, debug);

    // the blood pool must never be labeled myocardium
    for (std::size_t i = 0; i < res.myo.size(); ++i)
        if (res.bp[i]) res.myo[i] = 0;
    return res;
}

}  // namespace atlascut
