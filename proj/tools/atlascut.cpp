// Command-line entry point: phantom generation, atlas building, segmentation,
// and evaluation over CVOL directories.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atlascut/atlas.hpp"
#include "atlascut/cvol_io.hpp"
#include "atlascut/manifest.hpp"
#include "atlascut/pipeline.hpp"
#include "atlascut/validation.hpp"
#include "atlascut/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw atlascut::IoError("cannot open " + p.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw atlascut::FormatError("bad JSON in " + p.string() + ": " + e.what());
    }
    return j;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw atlascut::IoError("cannot write " + p.string());
    out << text;
}

std::optional<std::uint64_t> env_seed_override() {
    const char* s = std::getenv("ATLASCUT_SEED");
    if (!s || !*s) return std::nullopt;
    return std::strtoull(s, nullptr, 10);
}

// A subject directory holds cine/frame_###.{json,raw} plus gt masks.
atlascut::Volume load_subject_frame(const fs::path& dir, int frame) {
    const fs::path cine = fs::exists(dir / "cine") ? dir / "cine" : dir;
    const auto frames = atlascut::load_cine(cine);
    if (frame < 0 || frame >= static_cast<int>(frames.size()))
        throw atlascut::IndexError("frame " + std::to_string(frame) + " not present in " +
                                   cine.string());
    return frames[frame];
}

int cmd_phantom(const fs::path& spec_path, const fs::path& out_dir) {
    atlascut::RunManifest manifest("phantom");
    atlascut::PhantomSpec spec;
    if (!spec_path.empty()) {
        spec = atlascut::phantom_spec_from_json(load_json_file(spec_path));
        manifest.add_input("spec", spec_path);
    }
    if (const auto s = env_seed_override()) spec.seed = *s;
    manifest.set_seed(spec.seed);
    manifest.set_config(atlascut::phantom_spec_to_json(spec));

    manifest.stage_start("generate");
    const auto ph = atlascut::generate_phantom(spec);
    manifest.stage_done("generate");

    manifest.stage_start("write");
    fs::create_directories(out_dir);
    atlascut::save_cine(ph.frames, out_dir / "cine");
    atlascut::save_mask(ph.gt_bp, out_dir / "gt_bp");
    atlascut::save_mask(ph.gt_myo, out_dir / "gt_myo");
    write_text(out_dir / "phantom_spec.json",
               atlascut::phantom_spec_to_json(spec).dump(2) + "\n");
    manifest.stage_done("write");

    manifest.write(out_dir / "manifest.json");
    std::cout << "phantom written to " << out_dir.string() << " (" << spec.n_slices
              << " slices, " << spec.n_frames << " frames)\n";
    return 0;
}

int cmd_build_atlas(const fs::path& reference_dir, const std::vector<fs::path>& subject_dirs,
                    const fs::path& out_dir, int frame, int jobs) {
    atlascut::RunManifest manifest("build-atlas");
    manifest.add_input("reference", reference_dir);

    manifest.stage_start("load");
    atlascut::Volume reference = load_subject_frame(reference_dir, frame);
    atlascut::normalize_volume_slices(reference);

    std::vector<atlascut::AtlasSubject> subjects;
    for (const auto& dir : subject_dirs) {
        atlascut::AtlasSubject sub;
        sub.id = dir.filename().string();
        if (!fs::exists(fs::path(dir / "gt_myo").concat(".json")))
            throw atlascut::AtlasBuildError("subject '" + sub.id +
                                            "': missing gt_myo mask in " + dir.string());
        sub.volume = load_subject_frame(dir, frame);
        atlascut::normalize_volume_slices(sub.volume);
        sub.gt_myo = atlascut::load_mask(dir / "gt_myo");
        manifest.add_input("subject:" + sub.id, dir);
        subjects.push_back(std::move(sub));
    }
    manifest.stage_done("load");

    manifest.stage_start("build");
    atlascut::Atlas atlas =
        atlascut::build_atlas(reference, subjects, atlascut::RegistrationSettings{}, jobs);
    atlas.reference_id = reference_dir.filename().string();
    manifest.stage_done("build");

    manifest.stage_start("write");
    atlascut::save_atlas(atlas, out_dir);
    manifest.stage_done("write");

    manifest.note("n_subjects", atlas.n_subjects);
    manifest.note("frame", frame);
    manifest.write(out_dir / "manifest.json");
    std::cout << "atlas built from " << atlas.n_subjects << " subject(s) into "
              << out_dir.string() << "\n";
    return 0;
}

int cmd_segment(const fs::path& atlas_dir, const fs::path& input_dir,
                const fs::path& config_path, const fs::path& out_dir,
                const fs::path& debug_dir, int frame, int jobs_override) {
    atlascut::RunManifest manifest("segment");
    manifest.add_input("atlas", atlas_dir);
    manifest.add_input("input", input_dir);
    manifest.add_input("config", config_path);

    auto cfg = atlascut::config_from_json(load_json_file(config_path));
    if (const auto s = env_seed_override()) cfg.seed = *s;
    if (jobs_override > 0) cfg.jobs = jobs_override;
    manifest.set_seed(cfg.seed);
    manifest.set_config(atlascut::config_to_json(cfg));

    manifest.stage_start("load");
    const atlascut::Atlas atlas = atlascut::load_atlas(atlas_dir);
    const fs::path cine = fs::exists(input_dir / "cine") ? input_dir / "cine" : input_dir;
    const auto frames = atlascut::load_cine(cine);
    if (frame < 0 || frame >= static_cast<int>(frames.size()))
        throw atlascut::IndexError("frame " + std::to_string(frame) + " not present");
    atlascut::Volume test = frames[frame];
    const int full_nx = test.nx(), full_ny = test.ny();
    manifest.stage_done("load");

    std::optional<atlascut::RoiRect> roi;
    if (cfg.auto_roi) {
        manifest.stage_start("roi");
        roi = atlascut::detect_roi_xy(frames);
        test = atlascut::crop_xy(test, *roi);
        manifest.note("roi", json{{"x0", roi->x0}, {"y0", roi->y0}, {"x1", roi->x1},
                                  {"y1", roi->y1}});
        manifest.stage_done("roi");
    }

    manifest.stage_start("normalize");
    const auto skipped = atlascut::normalize_volume_slices(test);
    manifest.stage_done("normalize");

    std::optional<atlascut::DebugSink> debug;
    if (!debug_dir.empty()) debug.emplace(debug_dir);

    manifest.stage_start("segment");
    const auto result =
        atlascut::run_pipeline(atlas, test, cfg, debug ? &*debug : nullptr);
    manifest.stage_done("segment");

    manifest.stage_start("write");
    fs::create_directories(out_dir);
    atlascut::Mask3 bp = result.bp, myo = result.myo;
    if (roi) {
        bp = atlascut::embed_mask_xy(bp, *roi, full_nx, full_ny);
        myo = atlascut::embed_mask_xy(myo, *roi, full_nx, full_ny);
    }
    atlascut::save_mask(bp, out_dir / "bp");
    atlascut::save_mask(myo, out_dir / "myo");

    json seg;
    seg["slice_order"] = result.slice_order;
    seg["iterations_per_slice"] = result.iterations_per_slice;
    seg["converged_per_slice"] = result.converged_per_slice;
    seg["warnings"] = result.warnings;
    seg["skipped_constant_slices"] = skipped;
    write_text(out_dir / "segmentation.json", seg.dump(2) + "\n");
    manifest.stage_done("write");

    manifest.write(out_dir / "manifest.json");
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "segmentation written to " << out_dir.string() << "\n";
    return 0;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& range,
             const fs::path& out_path) {
    atlascut::RunManifest manifest("eval");
    manifest.add_input("pred", pred_dir);
    manifest.add_input("gt", gt_dir);

    const auto colon = range.find(':');
    if (colon == std::string::npos)
        throw atlascut::FormatError("--slice-range must be given as a:b");
    const int z_start = std::stoi(range.substr(0, colon));
    const int z_end = std::stoi(range.substr(colon + 1));
    if (z_start > z_end) throw atlascut::FormatError("--slice-range: a must be <= b");

    const auto pred_myo = atlascut::load_mask(pred_dir / "myo");
    const auto gt_myo = atlascut::load_mask(gt_dir / "gt_myo");
    if (!pred_myo.same_dims(gt_myo))
        throw atlascut::DegenerateInputError("pred and gt mask dims differ");
    if (z_end >= pred_myo.nz())
        throw atlascut::IndexError("slice range exceeds the masks");

    auto evaluate = [&](const atlascut::Mask3& pred, const atlascut::Mask3& gt,
                        bool dilated_region) {
        std::vector<int> zs;
        std::vector<atlascut::SliceMetrics> ms;
        for (int z = z_start; z <= z_end; ++z) {
            const auto gt_z = atlascut::extract_mask_slice(gt, z);
            if (atlascut::count_foreground(gt_z) == 0) continue;  // excluded slice
            const auto pred_z = atlascut::extract_mask_slice(pred, z);
            const atlascut::Mask2 region =
                dilated_region ? atlascut::evaluation_region(gt_z)
                               : atlascut::Mask2(gt_z.nx(), gt_z.ny(), 1);
            zs.push_back(z);
            ms.push_back(atlascut::compute_metrics(pred_z, gt_z, region));
        }
        return atlascut::stratified_report(zs, ms, z_start, z_end);
    };

    json out;
    const auto myo_report = evaluate(pred_myo, gt_myo, true);
    out["myocardium"] = atlascut::report_to_json(myo_report);
    std::cout << "Myocardium\n" << atlascut::render_report_table(myo_report);

    const bool have_bp = fs::exists(fs::path(pred_dir / "bp").concat(".json")) &&
                         fs::exists(fs::path(gt_dir / "gt_bp").concat(".json"));
    if (have_bp) {
        const auto pred_bp = atlascut::load_mask(pred_dir / "bp");
        const auto gt_bp = atlascut::load_mask(gt_dir / "gt_bp");
        if (!pred_bp.same_dims(gt_bp))
            throw atlascut::DegenerateInputError("bp mask dims differ");
        const auto bp_report = evaluate(pred_bp, gt_bp, false);
        out["blood_pool"] = atlascut::report_to_json(bp_report);
        std::cout << "\nBlood pool\n" << atlascut::render_report_table(bp_report);
    }

    write_text(out_path, out.dump(2) + "\n");
    manifest.note("slice_range", json{z_start, z_end});
    manifest.write(out_path.parent_path().empty()
                       ? fs::path("eval_manifest.json")
                       : out_path.parent_path() / "eval_manifest.json");
    std::cout << "\nreport written to " << out_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Atlas-guided iterative graph-cut segmentation of the LV blood pool "
                 "and myocardium from short-axis cine volumes"};
    app.set_version_flag("--version", atlascut::kVersion);
    app.require_subcommand(1);

    // phantom
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic cine phantom");
    fs::path ph_spec, ph_out;
    phantom->add_option("--spec", ph_spec, "phantom spec JSON (defaults when omitted)");
    phantom->add_option("--out", ph_out, "output directory")->required();

    // build-atlas
    auto* build = app.add_subcommand("build-atlas",
                                     "build the average appearance + probabilistic atlas");
    fs::path ba_ref, ba_out;
    std::vector<fs::path> ba_subjects;
    int ba_frame = 0, ba_jobs = 1;
    build->add_option("--reference", ba_ref, "reference subject directory")->required();
    build->add_option("--subjects", ba_subjects, "subject directories")->required();
    build->add_option("--out", ba_out, "atlas output directory")->required();
    build->add_option("--frame", ba_frame, "cine frame to use (end diastole)");
    build->add_option("--jobs", ba_jobs, "max parallel registrations");

    // segment
    auto* segment = app.add_subcommand("segment", "segment blood pool and myocardium");
    fs::path sg_atlas, sg_input, sg_config, sg_out, sg_debug;
    int sg_frame = 0, sg_jobs = 0;
    segment->add_option("--atlas", sg_atlas, "atlas directory")->required();
    segment->add_option("--input", sg_input, "input cine directory")->required();
    segment->add_option("--config", sg_config, "pipeline config JSON")->required();
    segment->add_option("--out", sg_out, "output directory")->required();
    segment->add_option("--debug-dump", sg_debug, "dump per-stage fields as CVOL");
    segment->add_option("--frame", sg_frame, "cine frame to segment");
    segment->add_option("--jobs", sg_jobs, "max parallel workers");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a segmentation against gold masks");
    fs::path ev_pred, ev_gt, ev_out;
    std::string ev_range;
    eval->add_option("--pred", ev_pred, "prediction directory (bp/myo masks)")->required();
    eval->add_option("--gt", ev_gt, "ground-truth directory (gt_bp/gt_myo)")->required();
    eval->add_option("--slice-range", ev_range, "evaluated slices a:b")->required();
    eval->add_option("--out", ev_out, "report JSON path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*phantom) return cmd_phantom(ph_spec, ph_out);
        if (*build) return cmd_build_atlas(ba_ref, ba_subjects, ba_out, ba_frame, ba_jobs);
        if (*segment)
            return cmd_segment(sg_atlas, sg_input, sg_config, sg_out, sg_debug, sg_frame,
                               sg_jobs);
        if (*eval) return cmd_eval(ev_pred, ev_gt, ev_range, ev_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
