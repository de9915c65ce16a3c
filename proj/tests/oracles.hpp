#pragma once

// Test-only reference implementations, deliberately brute force and
// independent of the library's algorithmic paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "atlascut/graphcut.hpp"
#include "atlascut/grid.hpp"

namespace oracle {

using atlascut::EnergyField;
using atlascut::Field2;
using atlascut::Mask2;

// All-pairs squared Euclidean distance to the nearest set pixel.
inline atlascut::Grid2<double> brute_sq_edt(const Mask2& sites) {
    atlascut::Grid2<double> d(sites.nx(), sites.ny(), 1e20);
    for (int y = 0; y < sites.ny(); ++y)
        for (int x = 0; x < sites.nx(); ++x)
            for (int sy = 0; sy < sites.ny(); ++sy)
                for (int sx = 0; sx < sites.nx(); ++sx)
                    if (sites(sx, sy)) {
                        const double dd = double(x - sx) * (x - sx) + double(y - sy) * (y - sy);
                        d(x, y) = std::min(d(x, y), dd);
                    }
    return d;
}

inline Mask2 brute_dilate_disk(const Mask2& m, int radius) {
    Mask2 out(m.nx(), m.ny(), 0);
    for (int y = 0; y < m.ny(); ++y)
        for (int x = 0; x < m.nx(); ++x) {
            if (!m(x, y)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    if (m.in_bounds(x + dx, y + dy)) out(x + dx, y + dy) = 1;
                }
        }
    return out;
}

// Erosion where structuring-element offsets falling outside the image count
// as background.
inline Mask2 brute_erode_disk(const Mask2& m, int radius) {
    Mask2 out(m.nx(), m.ny(), 0);
    for (int y = 0; y < m.ny(); ++y)
        for (int x = 0; x < m.nx(); ++x) {
            if (!m(x, y)) continue;
            bool keep = true;
            for (int dy = -radius; dy <= radius && keep; ++dy)
                for (int dx = -radius; dx <= radius && keep; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    if (!m.in_bounds(x + dx, y + dy) || !m(x + dx, y + dy)) keep = false;
                }
            if (keep) out(x, y) = 1;
        }
    return out;
}

// Exhaustive 256-candidate Otsu threshold: recompute both class statistics
// from scratch for every split; ties toward the lower threshold.
inline int brute_otsu(const std::vector<float>& values) {
    std::array<std::int64_t, 256> hist{};
    for (float v : values) {
        int b = static_cast<int>(std::floor(v));
        b = std::clamp(b, 0, 255);
        ++hist[b];
    }
    double best = -1.0;
    int best_t = -1;
    for (int t = 0; t < 255; ++t) {
        std::int64_t n0 = 0, n1 = 0;
        double s0 = 0.0, s1 = 0.0;
        for (int b = 0; b <= t; ++b) {
            n0 += hist[b];
            s0 += double(b) * hist[b];
        }
        for (int b = t + 1; b < 256; ++b) {
            n1 += hist[b];
            s1 += double(b) * hist[b];
        }
        if (n0 == 0 || n1 == 0) continue;
        const double m0 = s0 / n0, m1 = s1 / n1;
        const double between = double(n0) * double(n1) * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    return best_t;
}

// Exhaustive minimum enclosing circle over all pairs and triples.
struct Circle {
    double cx = 0, cy = 0, r = 0;
};

inline bool contains_all(const Circle& c, const std::vector<std::array<int, 2>>& pts) {
    for (const auto& p : pts)
        if (std::hypot(p[0] - c.cx, p[1] - c.cy) > c.r + 1e-7) return false;
    return true;
}

inline Circle brute_min_circle(const std::vector<std::array<int, 2>>& pts) {
    Circle best;
    best.r = std::numeric_limits<double>::max();
    if (pts.size() == 1) return {double(pts[0][0]), double(pts[0][1]), 0.0};
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            Circle c{0.5 * (pts[i][0] + pts[j][0]), 0.5 * (pts[i][1] + pts[j][1]),
                     0.5 * std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])};
            if (c.r < best.r && contains_all(c, pts)) best = c;
        }
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j)
            for (std::size_t k = j + 1; k < pts.size(); ++k) {
                const double ax = pts[i][0], ay = pts[i][1];
                const double bx = pts[j][0], by = pts[j][1];
                const double cx = pts[k][0], cy = pts[k][1];
                const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
                if (std::abs(d) < 1e-9) continue;
                const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by,
                             c2 = cx * cx + cy * cy;
                Circle c;
                c.cx = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
                c.cy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
                c.r = std::hypot(ax - c.cx, ay - c.cy);
                if (c.r < best.r && contains_all(c, pts)) best = c;
            }
    return best;
}

// Exhaustive minimum over all 2^n labelings of a small grid, on the solver's
// fixed-point capacities. Labelings with locked pixels forced off are skipped.
inline std::int64_t brute_min_energy(const EnergyField& e, const Mask2& locked) {
    const int n = e.nx * e.ny;
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (std::uint64_t bits = 0; bits < (std::uint64_t(1) << n); ++bits) {
        Mask2 lab(e.nx, e.ny, 0);
        bool valid = true;
        for (int i = 0; i < n; ++i) {
            lab[i] = (bits >> i) & 1;
            if (locked[i] && !lab[i]) valid = false;
        }
        if (!valid) continue;
        best = std::min(best, atlascut::energy_fixed(e, lab));
    }
    return best;
}

// Best two-component mixture over all 2-partitions of a small sample set,
// scored by the mixture log-likelihood of the per-cluster closed-form MLEs.
struct TwoPartFit {
    std::array<double, 2> means{}, vars{}, weights{};
    double loglik = -std::numeric_limits<double>::max();
};

inline TwoPartFit brute_two_component(const std::vector<float>& s) {
    const int n = static_cast<int>(s.size());
    TwoPartFit best;
    for (std::uint32_t bits = 1; bits + 1 < (1u << n); ++bits) {
        std::array<std::vector<double>, 2> groups;
        for (int i = 0; i < n; ++i) groups[(bits >> i) & 1].push_back(s[i]);
        if (groups[0].empty() || groups[1].empty()) continue;
        TwoPartFit f;
        for (int g = 0; g < 2; ++g) {
            double mean = 0.0;
            for (double v : groups[g]) mean += v;
            mean /= groups[g].size();
            double var = 0.0;
            for (double v : groups[g]) var += (v - mean) * (v - mean);
            var = std::max(var / groups[g].size(), 1e-4);
            f.means[g] = mean;
            f.vars[g] = var;
            f.weights[g] = double(groups[g].size()) / n;
        }
        double ll = 0.0;
        for (double v : s) {
            double p = 0.0;
            for (int g = 0; g < 2; ++g)
                p += f.weights[g] / std::sqrt(2.0 * 3.14159265358979323846 * f.vars[g]) *
                     std::exp(-0.5 * (v - f.means[g]) * (v - f.means[g]) / f.vars[g]);
            ll += std::log(std::max(p, 1e-300));
        }
        f.loglik = ll;
        if (f.loglik > best.loglik) best = f;
    }
    if (best.means[0] > best.means[1]) {
        std::swap(best.means[0], best.means[1]);
        std::swap(best.vars[0], best.vars[1]);
        std::swap(best.weights[0], best.weights[1]);
    }
    return best;
}

// Discrete CDF-inverse map oracle for histogram matching.
inline int brute_cdf_map(const std::array<double, 256>& src,
                         const std::array<double, 256>& ref, int bin) {
    double src_total = 0, ref_total = 0;
    for (double v : src) src_total += v;
    for (double v : ref) ref_total += v;
    double target = 0;
    for (int b = 0; b <= bin; ++b) target += src[b];
    target /= src_total;
    double acc = 0;
    for (int r = 0; r < 256; ++r) {
        acc += ref[r] / ref_total;
        if (acc >= target - 1e-12) return r;
    }
    return 255;
}

inline Mask2 random_mask(std::mt19937& rng, int nx, int ny, double p_fg = 0.4) {
    std::bernoulli_distribution fg(p_fg);
    Mask2 m(nx, ny, 0);
    for (auto& v : m.raw()) v = fg(rng) ? 1 : 0;
    return m;
}

}  // namespace oracle
