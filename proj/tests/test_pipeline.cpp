#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "atlascut/atlas.hpp"
#include "atlascut/pipeline.hpp"
#include "atlascut/validation.hpp"

using namespace atlascut;

namespace {

PipelineConfig test_config(int z_start, int z_end) {
    PipelineConfig cfg;
    cfg.z_start = z_start;
    cfg.z_end = z_end;
    return cfg;
}

// Myocardium prior with a linear falloff band around the true annulus;
// falloff 1 px makes the >0.5 hole coincide exactly with the blood pool.
Field2 synthetic_prior_slice(const Mask2& gt_myo, double falloff) {
    const auto d2 = squared_distance_to(gt_myo);
    Field2 p(gt_myo.nx(), gt_myo.ny(), 0.0f);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = std::sqrt(d2[i]);
        p[i] = static_cast<float>(0.95 * std::max(0.0, 1.0 - d / falloff));
    }
    return p;
}

Field3 synthetic_prior(const Mask3& gt_myo, double falloff) {
    Field3 out(gt_myo.nx(), gt_myo.ny(), gt_myo.nz(), 0.0f);
    for (int z = 0; z < gt_myo.nz(); ++z)
        replace_field_slice(out, z,
                            synthetic_prior_slice(extract_mask_slice(gt_myo, z), falloff));
    return out;
}

double dice(const Mask2& a, const Mask2& b) {
    const auto m = compute_metrics(a, b, Mask2(a.nx(), a.ny(), 1));
    REQUIRE(m.dice.has_value());
    return *m.dice;
}

PhantomSpec small_spec() {
    PhantomSpec spec;
    spec.nx = 96;
    spec.ny = 96;
    spec.n_slices = 9;
    spec.center_x = 48.0;
    spec.center_y = 48.0;
    spec.bp_radius_base = 20.0;
    spec.bp_radius_apex = 9.0;
    spec.myo_thickness = 7.0;
    return spec;
}

}  // namespace

TEST_CASE("detect_roi_xy covers the full annulus sweep", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.motion_amplitude = 0.3;
    const Phantom ph = generate_phantom(spec);
    const RoiRect roi = detect_roi_xy(ph.frames);

    // the heart (maximal extent at frame 0) must fall inside the ROI
    for (int z = 0; z < spec.n_slices; ++z) {
        const Mask2 myo = extract_mask_slice(ph.gt_myo, z);
        for (int y = 0; y < myo.ny(); ++y)
            for (int x = 0; x < myo.nx(); ++x)
                if (myo(x, y)) {
                    CHECK(x >= roi.x0);
                    CHECK(x <= roi.x1);
                    CHECK(y >= roi.y0);
                    CHECK(y <= roi.y1);
                }
    }
    // and the ROI should be a genuine crop, not the whole frame
    CHECK(roi.width() < spec.nx);
}

TEST_CASE("detect_roi_xy rejects a static cine", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    spec.motion_amplitude = 0.0;
    const Phantom ph = generate_phantom(spec);
    std::vector<Volume> frames = {ph.frames[0], ph.frames[0]};
    CHECK_THROWS_AS(detect_roi_xy(frames), DegenerateInputError);
}

TEST_CASE("whole-frame motion yields the full frame as ROI", "[pipeline]") {
    Volume a(32, 24, 2, 10.0f), b(32, 24, 2, 60.0f);
    const RoiRect roi = detect_roi_xy({a, b});
    CHECK(roi.x0 == 0);
    CHECK(roi.y0 == 0);
    CHECK(roi.x1 == 31);
    CHECK(roi.y1 == 23);
}

TEST_CASE("crop and embed round-trip", "[pipeline]") {
    const Phantom ph = generate_phantom(small_spec());
    const RoiRect roi{10, 12, 70, 75};
    const Volume cropped = crop_xy(ph.frames[0], roi);
    CHECK(cropped.nx() == 61);
    CHECK(cropped.vox(0, 0, 0) == ph.frames[0].vox(10, 12, 0));

    Mask3 m(cropped.nx(), cropped.ny(), cropped.nz(), 0);
    m(5, 6, 1) = 1;
    const Mask3 embedded = embed_mask_xy(m, roi, 96, 96);
    CHECK(embedded(15, 18, 1) == 1);
    CHECK(count_foreground(embedded) == 1);
}

TEST_CASE("bp_prior_structures recovers the cavity from an ideal annulus prior",
          "[pipeline]") {
    const PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const int zm = spec.n_slices / 2;
    const Mask2 gt_myo = extract_mask_slice(ph.gt_myo, zm);
    const Mask2 gt_bp = extract_mask_slice(ph.gt_bp, zm);

    // ideal prior: 0.95 exactly on the annulus
    Field2 prior(spec.nx, spec.ny, 0.0f);
    for (std::size_t i = 0; i < prior.size(); ++i)
        if (gt_myo[i]) prior[i] = 0.95f;

    const Slice s = extract_slice(ph.frames[0], zm);
    const auto st = bp_prior_structures(s, prior, test_config(0, spec.n_slices - 1));
    REQUIRE(st.ok);
    // the high-confidence ROI is the annulus interior
    for (std::size_t i = 0; i < gt_bp.size(); ++i)
        if (st.high_conf_roi[i]) CHECK(gt_bp[i] == 1);
    CHECK(count_foreground(st.high_conf_roi) >
          0.8 * static_cast<double>(count_foreground(gt_bp)));
    CHECK(count_foreground(st.init_bp) > 0);
}

TEST_CASE("a flat uninformative prior marks the slice unsegmentable", "[pipeline]") {
    const PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const Slice s = extract_slice(ph.frames[0], 4);
    const Field2 flat(spec.nx, spec.ny, 0.5f);
    const auto st = bp_prior_structures(s, flat, test_config(0, spec.n_slices - 1));
    CHECK(!st.ok);
    const Field2 zero(spec.nx, spec.ny, 0.0f);
    CHECK(!bp_prior_structures(s, zero, test_config(0, spec.n_slices - 1)).ok);
}

TEST_CASE("a blurred prior still yields an initial BP inside the truth", "[pipeline]") {
    const PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const int zm = spec.n_slices / 2;
    const Mask2 gt_bp = extract_mask_slice(ph.gt_bp, zm);
    const Field2 prior =
        synthetic_prior_slice(extract_mask_slice(ph.gt_myo, zm), 4.0);
    const Slice s = extract_slice(ph.frames[0], zm);
    const auto st = bp_prior_structures(s, prior, test_config(0, spec.n_slices - 1));
    REQUIRE(st.ok);
    const Mask2 tolerant = dilate_disk(gt_bp, 1);
    for (std::size_t i = 0; i < st.init_bp.size(); ++i)
        if (st.init_bp[i]) CHECK(tolerant[i] == 1);
    CHECK(dice(st.init_bp, gt_bp) > 0.8);
}

TEST_CASE("bp_models recover the blood-pool intensity", "[pipeline]") {
    const PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const int zm = spec.n_slices / 2;
    const Slice s = extract_slice(ph.frames[0], zm);
    const Mask2 gt_bp = extract_mask_slice(ph.gt_bp, zm);
    const Mask2 init = erode_disk(gt_bp, 2);
    const Mask2 enclosing = fill_holes(dilate_disk(extract_mask_slice(ph.gt_myo, zm), 3));

    const auto models = bp_models(s, init, enclosing, 9);
    CHECK(models.bp.means[0] == Catch::Approx(spec.intensity_bp).margin(5.0));
    CHECK(models.bg.k() == 2);

    // background sample set empty when the BP estimate covers the whole ROI
    CHECK_THROWS_AS(bp_models(s, enclosing, enclosing, 9), DegenerateInputError);
}

TEST_CASE("a perfectly aligned prior converges after the first cut", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 5.0;
    const Phantom ph = generate_phantom(spec);
    const int zm = spec.n_slices / 2;
    const Slice s = extract_slice(ph.frames[0], zm);
    const Field2 prior = synthetic_prior_slice(extract_mask_slice(ph.gt_myo, zm), 1.0);

    const auto res = segment_bp_slice(s, prior, Mask2(spec.nx, spec.ny, 0),
                                      test_config(0, spec.n_slices - 1), 5);
    REQUIRE(res.ok);
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    CHECK(dice(res.bp, extract_mask_slice(ph.gt_bp, zm)) > 0.92);
}

TEST_CASE("blood-pool slice segmentation under noise", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 10.0;
    const Phantom ph = generate_phantom(spec);
    const int zm = spec.n_slices / 2;
    const Slice s = extract_slice(ph.frames[0], zm);
    const Field2 prior = synthetic_prior_slice(extract_mask_slice(ph.gt_myo, zm), 4.0);

    const auto res = segment_bp_slice(s, prior, Mask2(spec.nx, spec.ny, 0),
                                      test_config(0, spec.n_slices - 1), 5);
    REQUIRE(res.ok);
    CHECK(res.iterations <= 3);
    CHECK(dice(res.bp, extract_mask_slice(ph.gt_bp, zm)) >= 0.90);
    // final mask is convex per the hull contract
    CHECK(convex_hull_mask(res.bp) == res.bp);
}

TEST_CASE("single-slice range processes exactly that slice", "[pipeline]") {
    PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 3.0);
    const auto cfg = test_config(4, 4);
    const auto res = segment_bp_volume(ph.frames[0], prior, cfg);
    CHECK(res.slice_order == std::vector<int>{4});
    for (int z = 0; z < spec.n_slices; ++z) {
        const auto bp_z = extract_mask_slice(res.bp, z);
        if (z == 4) CHECK(count_foreground(bp_z) > 0);
        else CHECK(count_foreground(bp_z) == 0);
    }
}

TEST_CASE("slices are processed mid-outward", "[pipeline]") {
    CHECK(mid_outward_order(0, 8) == std::vector<int>{4, 5, 3, 6, 2, 7, 1, 8, 0});
    CHECK(mid_outward_order(2, 5) == std::vector<int>{3, 4, 2, 5});

    PhantomSpec spec = small_spec();
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 3.0);
    const auto cfg = test_config(0, spec.n_slices - 1);
    const auto res = segment_bp_volume(ph.frames[0], prior, cfg);
    CHECK(res.slice_order == mid_outward_order(0, spec.n_slices - 1));
    // every slice segmented on this clean phantom
    for (int z = 0; z < spec.n_slices; ++z)
        CHECK(count_foreground(extract_mask_slice(res.bp, z)) > 0);
}

TEST_CASE("inter-slice locking does not hurt apical accuracy", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 22.0;
    spec.jitter_amplitude = 1.5;
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 4.0);

    auto run = [&](bool locking) {
        auto cfg = test_config(0, spec.n_slices - 1);
        cfg.interslice_locking = locking;
        const auto res = segment_bp_volume(ph.frames[0], prior, cfg);
        double acc = 0.0;
        int n = 0;
        for (int z : {spec.n_slices - 2, spec.n_slices - 1}) {  // apical slices
            acc += dice(extract_mask_slice(res.bp, z), extract_mask_slice(ph.gt_bp, z));
            ++n;
        }
        return acc / n;
    };
    const double with_lock = run(true);
    const double without_lock = run(false);
    CHECK(with_lock >= without_lock - 1e-9);
}

TEST_CASE("myocardium models land on the true intensity", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 8.0;
    spec.slice_offset_amplitude = 0.0;
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 2.0);
    const auto cfg = test_config(0, spec.n_slices - 1);

    const auto models = myo_models(ph.frames[0], prior, cfg);
    CHECK(models.myo.means[0] == Catch::Approx(spec.intensity_myo).margin(5.0));
    CHECK(models.bg.k() == 3);

    // a prior that never drops below 0.5 leaves no background samples
    const Field3 all_myo(spec.nx, spec.ny, spec.n_slices, 0.9f);
    CHECK_THROWS_AS(myo_models(ph.frames[0], all_myo, cfg), Error);
}

TEST_CASE("histogram matching tightens the myocardium model across offset slices",
          "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 5.0;
    spec.slice_offset_amplitude = 20.0;  // strong slice-to-slice shifts
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 2.0);
    const auto cfg = test_config(0, spec.n_slices - 1);

    const auto models = myo_models(ph.frames[0], prior, cfg);

    // unmatched variance across mid-stratum myocardium pixels, for comparison
    std::vector<float> raw;
    for (int z = cfg.z_start + 2; z <= cfg.z_end - 2; ++z) {
        const Slice s = extract_slice(ph.frames[0], z);
        const Field2 pz = extract_field_slice(prior, z);
        for (std::size_t i = 0; i < pz.size(); ++i)
            if (pz[i] > 0.5f) raw.push_back(s.pix[i]);
    }
    const auto unmatched = fit_gaussian(raw);
    CHECK(models.myo.variances[0] < unmatched.variances[0]);
}

TEST_CASE("myocardium segmentation from true BP and a synthetic prior", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 10.0;
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 3.0);
    const auto cfg = test_config(0, spec.n_slices - 1);

    const auto models = myo_models(ph.frames[0], prior, cfg);
    std::vector<std::string> warnings;
    const Mask3 myo = segment_myocardium(ph.frames[0], ph.gt_bp, prior, cfg, models,
                                         &warnings);

    double acc = 0.0;
    int n = 0;
    for (int z = cfg.z_start; z <= cfg.z_end; ++z) {
        acc += dice(extract_mask_slice(myo, z), extract_mask_slice(ph.gt_myo, z));
        ++n;
    }
    CHECK(acc / n >= 0.80);
    for (std::size_t i = 0; i < myo.size(); ++i) CHECK(!(myo[i] && ph.gt_bp[i]));
}

TEST_CASE("distance-only weights produce a band of roughly the cap width", "[pipeline]") {
    PhantomSpec spec = small_spec();
    spec.noise_sigma = 0.0;
    spec.slice_offset_amplitude = 0.0;
    spec.jitter_amplitude = 0.0;
    const Phantom ph = generate_phantom(spec);
    const Field3 prior = synthetic_prior(ph.gt_myo, 3.0);
    auto cfg = test_config(0, spec.n_slices - 1);
    cfg.myo_weights = {0.0, 0.0, 1.0};

    const auto models = myo_models(ph.frames[0], prior, cfg);
    const Mask3 myo = segment_myocardium(ph.frames[0], ph.gt_bp, prior, cfg, models);

    const int zm = spec.n_slices / 2;
    const Mask2 bp_z = extract_mask_slice(ph.gt_bp, zm);
    const Field2 dist = truncated_outside_distance(bp_z, cfg.distance_cap);
    Mask2 band(spec.nx, spec.ny, 0);
    for (std::size_t i = 0; i < band.size(); ++i)
        band[i] = (!bp_z[i] && dist[i] < cfg.distance_cap - 1e-6) ? 1 : 0;
    CHECK(dice(extract_mask_slice(myo, zm), band) > 0.85);
}

TEST_CASE("end-to-end pipeline on a phantom atlas", "[pipeline]") {
    // three atlas subjects, one unseen test phantom
    std::vector<AtlasSubject> subjects;
    Volume reference;
    for (int i = 0; i < 3; ++i) {
        PhantomSpec spec = small_spec();
        spec.seed = 300 + i;
        spec.bp_radius_base = 19.0 + i;
        spec.noise_sigma = 5.0;
        spec.jitter_amplitude = 0.5;
        const Phantom ph = generate_phantom(spec);
        AtlasSubject sub;
        sub.id = "s" + std::to_string(i);
        sub.volume = ph.frames[0];
        normalize_volume_slices(sub.volume);
        sub.gt_myo = ph.gt_myo;
        if (i == 0) reference = sub.volume;
        subjects.push_back(std::move(sub));
    }
    const Atlas atlas = build_atlas(reference, subjects);

    PhantomSpec test_spec = small_spec();
    test_spec.seed = 999;
    test_spec.noise_sigma = 8.0;
    const Phantom test = generate_phantom(test_spec);
    Volume vol = test.frames[0];
    normalize_volume_slices(vol);

    const auto cfg = test_config(0, test_spec.n_slices - 1);
    const auto result = run_pipeline(atlas, vol, cfg);

    for (std::size_t i = 0; i < result.myo.size(); ++i)
        CHECK(!(result.bp[i] && result.myo[i]));
    for (int z = cfg.z_start; z <= cfg.z_end; ++z)
        CHECK(result.iterations_per_slice[z] <= cfg.max_iterations);

    double bp_acc = 0.0;
    int n = 0;
    for (int z = cfg.z_start; z <= cfg.z_end; ++z) {
        bp_acc += dice(extract_mask_slice(result.bp, z), extract_mask_slice(test.gt_bp, z));
        ++n;
    }
    CHECK(bp_acc / n > 0.85);

    // determinism: identical inputs give identical outputs
    const auto again = run_pipeline(atlas, vol, cfg);
    CHECK(again.bp == result.bp);
    CHECK(again.myo == result.myo);
    CHECK(again.iterations_per_slice == result.iterations_per_slice);
}

TEST_CASE("config JSON honors defaults and requires the slice range", "[pipeline]") {
    const auto j = nlohmann::json::parse(R"({"slice_range": [1, 7], "seed": 42})");
    const auto cfg = config_from_json(j);
    CHECK(cfg.z_start == 1);
    CHECK(cfg.z_end == 7);
    CHECK(cfg.seed == 42);
    CHECK(cfg.erosion_fraction == 0.15);
    CHECK(cfg.distance_cap == 10.0);
    CHECK(cfg.myo_weights == std::array<double, 3>{0.2, 0.3, 0.5});

    CHECK_THROWS_AS(config_from_json(nlohmann::json::object()), FormatError);

    const auto rt = config_from_json(config_to_json(cfg));
    CHECK(rt.z_start == cfg.z_start);
    CHECK(rt.seed == cfg.seed);
}

TEST_CASE("config validation rejects bad weight orderings", "[pipeline]") {
    auto cfg = test_config(0, 5);
    cfg.myo_weights = {0.5, 0.3, 0.2};  // decreasing: invalid
    CHECK_THROWS_AS(validate_config(cfg), DegenerateInputError);
    cfg.myo_weights = {0.2, 0.3, 0.4};  // does not sum to 1
    CHECK_THROWS_AS(validate_config(cfg), DegenerateInputError);
    cfg = test_config(3, 2);  // inverted range
    CHECK_THROWS_AS(validate_config(cfg), DegenerateInputError);
}
