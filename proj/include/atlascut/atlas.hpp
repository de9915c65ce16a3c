#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/cvol_io.hpp"
#include "atlascut/errors.hpp"
#include "atlascut/imageops.hpp"
#include "atlascut/parallel.hpp"
#include "atlascut/registration.hpp"
#include "atlascut/volume.hpp"

// Average appearance atlas plus probabilistic myocardium label, and the
// propagation of that prior onto a test volume through a single 3D affine
// registration.

namespace atlascut {

struct AtlasBuildError : Error {
    using Error::Error;
};

struct Atlas {
    Volume appearance;  // voxelwise mean of the aligned, matched subject volumes
    Field3 prior;       // voxelwise mean of the aligned binary myocardium labels
    int n_subjects = 0;
    std::string reference_id;
};

struct AtlasSubject {
    std::string id;
    Volume volume;  // end-diastole frame, preprocessed like the reference
    Mask3 gt_myo;
};

inline void validate_atlas(const Atlas& a) {
    if (a.n_subjects < 1) throw DegenerateInputError("atlas has no subjects");
    if (a.appearance.nx() != a.prior.nx() || a.appearance.ny() != a.prior.ny() ||
        a.appearance.nz() != a.prior.nz())
        throw DegenerateInputError("atlas appearance and prior dims disagree");
    for (float v : a.prior.raw())
        if (!(v >= 0.0f && v <= 1.0f))
            throw DegenerateInputError("atlas prior leaves [0,1]");
}

// Histogram-matches every subject to the reference, registers it with a 3D
// affine, then averages the warped volumes (trilinear) and warped labels
// (nearest-neighbor, so each label stays binary until the average).
inline Atlas build_atlas(const Volume& reference,
                         const std::vector<AtlasSubject>& subjects,
                         const RegistrationSettings& settings = {}, int jobs = 1) {
    if (subjects.empty()) throw AtlasBuildError("atlas build needs at least one subject");
    validate_volume(reference);
    const int nx = reference.nx(), ny = reference.ny(), nz = reference.nz();
    const auto ref_hist = histogram_of(reference.vox.raw());

    struct Warped {
        Grid3<float> vol;
        Mask3 lab;
    };
    std::vector<Warped> warped(subjects.size());
    parallel_for(static_cast<int>(subjects.size()), jobs, [&](int i) {
        const auto& sub = subjects[i];
        try {
            validate_volume(sub.volume);
            if (sub.gt_myo.nx() != sub.volume.nx() || sub.gt_myo.ny() != sub.volume.ny() ||
                sub.gt_myo.nz() != sub.volume.nz())
                throw DegenerateInputError("label dims do not match the volume");
            const Volume matched = histogram_match_volume(sub.volume, ref_hist);
            const auto reg = register_affine(reference.vox, matched.vox,
                                             centered_identity(nx, ny, nz), settings);
            warped[i].vol = resample(matched.vox, reg.transform, nx, ny, nz);
            warped[i].lab = resample_nearest(sub.gt_myo, reg.transform, nx, ny, nz);
        } catch (const std::exception& e) {
            throw AtlasBuildError("subject '" + sub.id + "': " + e.what());
        }
    });

    Atlas atlas;
    atlas.n_subjects = static_cast<int>(subjects.size());
    atlas.appearance = Volume(nx, ny, nz);
    atlas.appearance.spacing = reference.spacing;
    atlas.prior = Field3(nx, ny, nz, 0.0f);
    const double inv_n = 1.0 / subjects.size();
    std::vector<double> acc_vol(atlas.appearance.vox.size(), 0.0);
    std::vector<double> acc_lab(atlas.prior.size(), 0.0);
    for (std::size_t i = 0; i < warped.size(); ++i) {  // fixed subject order
        for (std::size_t p = 0; p < acc_vol.size(); ++p) acc_vol[p] += warped[i].vol[p];
        for (std::size_t p = 0; p < acc_lab.size(); ++p) acc_lab[p] += warped[i].lab[p];
    }
    for (std::size_t p = 0; p < acc_vol.size(); ++p)
        atlas.appearance.vox[p] = static_cast<float>(acc_vol[p] * inv_n);
    for (std::size_t p = 0; p < acc_lab.size(); ++p)
        atlas.prior[p] = static_cast<float>(std::clamp(acc_lab[p] * inv_n, 0.0, 1.0));
    validate_atlas(atlas);
    return atlas;
}

// Registers the appearance atlas to the test volume and carries the
// myocardium prior along, trilinear and clamped to [0,1].
inline Field3 propagate_prior(const Atlas& atlas, const Volume& test,
                              const RegistrationSettings& settings = {}) {
    validate_atlas(atlas);
    validate_volume(test);
    const auto reg = register_affine(test.vox, atlas.appearance.vox,
                                     centered_identity(test.nx(), test.ny(), test.nz()),
                                     settings);
    Field3 out = resample(atlas.prior, reg.transform, test.nx(), test.ny(), test.nz());
    for (auto& v : out.raw()) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

inline void save_atlas(const Atlas& atlas, const std::filesystem::path& dir) {
    validate_atlas(atlas);
    std::filesystem::create_directories(dir);
    save_volume(atlas.appearance, dir / "appearance");
    Volume prior_vol;
    prior_vol.vox = atlas.prior;
    prior_vol.spacing = atlas.appearance.spacing;
    save_volume(prior_vol, dir / "prior");
    nlohmann::json meta{{"n_subjects", atlas.n_subjects},
                        {"reference_id", atlas.reference_id}};
    std::ofstream out(dir / "meta.json");
    if (!out) throw IoError("cannot write atlas meta.json");
    out << meta.dump(2) << "\n";
}

inline Atlas load_atlas(const std::filesystem::path& dir) {
    Atlas atlas;
    atlas.appearance = load_volume(dir / "appearance");
    atlas.prior = load_volume(dir / "prior").vox;
    std::ifstream in(dir / "meta.json");
    if (!in) throw IoError("missing atlas meta.json in " + dir.string());
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt atlas meta.json: ") + e.what());
    }
    atlas.n_subjects = meta.value("n_subjects", 1);
    atlas.reference_id = meta.value("reference_id", "");
    for (auto& v : atlas.prior.raw()) v = std::clamp(v, 0.0f, 1.0f);
    validate_atlas(atlas);
    return atlas;
}

}  // namespace atlascut
