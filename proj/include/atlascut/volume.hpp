#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"

namespace atlascut {

// One short-axis slice extracted from a volume.
struct Slice {
    Grid2<float> pix;
    int z_index = 0;

    int nx() const { return pix.nx(); }
    int ny() const { return pix.ny(); }
};

// 3D scalar grid with physical spacing metadata (millimeters per voxel).
// Voxels are stored x-fastest; intensities must stay finite.
struct Volume {
    Grid3<float> vox;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::optional<int> frame_index;

    Volume() = default;
    Volume(int nx, int ny, int nz, float fill = 0.0f) : vox(nx, ny, nz, fill) {}

    int nx() const { return vox.nx(); }
    int ny() const { return vox.ny(); }
    int nz() const { return vox.nz(); }
};

inline void validate_volume(const Volume& v) {
    if (v.nx() <= 0 || v.ny() <= 0 || v.nz() <= 0)
        throw DegenerateInputError("volume has an empty axis");
    for (double s : v.spacing)
        if (!(s > 0.0)) throw DegenerateInputError("non-positive voxel spacing");
    for (float x : v.vox.raw())
        if (!std::isfinite(x)) throw DegenerateInputError("non-finite voxel intensity");
}

inline Slice extract_slice(const Volume& v, int z) {
    if (z < 0 || z >= v.nz())
        throw IndexError("slice index " + std::to_string(z) + " out of range [0," +
                         std::to_string(v.nz()) + ")");
    Slice s;
    s.z_index = z;
    s.pix = Grid2<float>(v.nx(), v.ny());
    const std::size_t plane = static_cast<std::size_t>(v.nx()) * v.ny();
    std::copy_n(v.vox.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z, plane,
                s.pix.raw().begin());
    return s;
}

inline Volume replace_slice(const Volume& v, int z, const Slice& s) {
    if (z < 0 || z >= v.nz())
        throw IndexError("slice index " + std::to_string(z) + " out of range");
    if (s.nx() != v.nx() || s.ny() != v.ny())
        throw DegenerateInputError("slice dims do not match volume");
    Volume out = v;
    const std::size_t plane = static_cast<std::size_t>(v.nx()) * v.ny();
    std::copy_n(s.pix.raw().begin(), plane,
                out.vox.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z);
    return out;
}

inline Mask2 extract_mask_slice(const Mask3& m, int z) {
    if (z < 0 || z >= m.nz()) throw IndexError("mask slice index out of range");
    Mask2 s(m.nx(), m.ny());
    const std::size_t plane = static_cast<std::size_t>(m.nx()) * m.ny();
    std::copy_n(m.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z, plane,
                s.raw().begin());
    return s;
}

inline void replace_mask_slice(Mask3& m, int z, const Mask2& s) {
    if (z < 0 || z >= m.nz()) throw IndexError("mask slice index out of range");
    const std::size_t plane = static_cast<std::size_t>(m.nx()) * m.ny();
    std::copy_n(s.raw().begin(), plane,
                m.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z);
}

inline Field2 extract_field_slice(const Field3& f, int z) {
    if (z < 0 || z >= f.nz()) throw IndexError("field slice index out of range");
    Field2 s(f.nx(), f.ny());
    const std::size_t plane = static_cast<std::size_t>(f.nx()) * f.ny();
    std::copy_n(f.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z, plane,
                s.raw().begin());
    return s;
}

inline void replace_field_slice(Field3& f, int z, const Field2& s) {
    if (z < 0 || z >= f.nz()) throw IndexError("field slice index out of range");
    const std::size_t plane = static_cast<std::size_t>(f.nx()) * f.ny();
    std::copy_n(s.raw().begin(), plane,
                f.raw().begin() + static_cast<std::ptrdiff_t>(plane) * z);
}

// Affine rescale of one slice to the [0,255] range. Order-preserving; a
// constant slice has no dynamic range and is reported for the caller to skip.
inline Slice normalize_slice(const Slice& s) {
    if (s.pix.empty()) throw DegenerateInputError("empty slice");
    auto [lo_it, hi_it] = std::minmax_element(s.pix.raw().begin(), s.pix.raw().end());
    const float lo = *lo_it, hi = *hi_it;
    if (!(hi > lo))
        throw DegenerateInputError("constant slice: zero dynamic range");
    Slice out = s;
    const float scale = 255.0f / (hi - lo);
    for (auto& p : out.pix.raw()) p = (p - lo) * scale;
    return out;
}

// Per-slice 0-255 normalization of a whole stack. Constant slices are left
// untouched; their indices are returned so callers can warn or skip them.
inline std::vector<int> normalize_volume_slices(Volume& v) {
    std::vector<int> skipped;
    for (int z = 0; z < v.nz(); ++z) {
        Slice s = extract_slice(v, z);
        try {
            v = replace_slice(v, z, normalize_slice(s));
        } catch (const DegenerateInputError&) {
            skipped.push_back(z);
        }
    }
    return skipped;
}

}  // namespace atlascut
