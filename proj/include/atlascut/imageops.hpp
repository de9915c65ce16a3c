#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/volume.hpp"

// Slice-wise binary morphology, thresholding, connected components, convex
// hull, and distance transforms. Everything operates on pixel centers of the
// integer grid; disk structuring elements contain the offsets with Euclidean
// norm <= radius.

namespace atlascut {

// Signed Euclidean distance in pixels to the mask boundary (foreground pixels
// 4-adjacent to background). Negative inside, zero on the boundary itself.
using DistanceMap = Grid2<float>;

using Histogram = std::array<double, 256>;

inline int intensity_bin(float v) {
    int b = static_cast<int>(std::floor(v));
    return std::clamp(b, 0, 255);
}

namespace detail {

constexpr double kEdtInf = 1e20;

// 1D squared-distance lower envelope (Felzenszwalb & Huttenlocher).
// Exact for integer-valued f: the output is (q-v)^2 + f[v].
inline void edt_1d(const double* f, int n, double* d, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                   (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kEdtInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
    }
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest pixel of
// `sites`. Pixels unreachable (empty site set) get a huge sentinel.
inline Grid2<double> squared_distance_to(const Mask2& sites) {
    const int nx = sites.nx(), ny = sites.ny();
    Grid2<double> d(nx, ny, detail::kEdtInf);
    const int n = std::max(nx, ny);
    std::vector<double> f(n), out(n), z(n + 1);
    std::vector<int> v(n);

    // Row pass: distance along x to sites in the same row.
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) f[x] = sites(x, y) ? 0.0 : detail::kEdtInf;
        detail::edt_1d(f.data(), nx, out.data(), v.data(), z.data());
        for (int x = 0; x < nx; ++x) d(x, y) = out[x];
    }
    // Column pass.
    for (int x = 0; x < nx; ++x) {
        for (int y = 0; y < ny; ++y) f[y] = d(x, y);
        detail::edt_1d(f.data(), ny, out.data(), v.data(), z.data());
        for (int y = 0; y < ny; ++y) d(x, y) = out[y];
    }
    return d;
}

// Between-class-variance maximizing threshold over a 256-bin histogram of the
// given values; ties resolved toward the lower threshold. The returned value t
// separates bins [0..t] from [t+1..255].
inline double otsu_threshold(const std::vector<float>& values) {
    if (values.empty()) throw DegenerateInputError("otsu: empty sample set");
    std::array<double, 256> hist{};
    for (float v : values) hist[intensity_bin(v)] += 1.0;

    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_t = -1;
    for (int t = 0; t < 255; ++t) {
        w0 += hist[t];
        if (w0 == 0.0) continue;
        const double w1 = total - w0;
        if (w1 == 0.0) break;
        sum0 += t * hist[t];
        const double m0 = sum0 / w0;
        const double m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
        }
    }
    if (best_t < 0)
        throw DegenerateInputError("otsu: fewer than two distinct histogram bins");
    return static_cast<double>(best_t);
}

inline double otsu_threshold(const Grid2<float>& img, const Mask2& roi) {
    if (img.nx() != roi.nx() || img.ny() != roi.ny())
        throw DegenerateInputError("otsu: roi dims mismatch");
    std::vector<float> vals;
    vals.reserve(count_foreground(roi));
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i]) vals.push_back(img[i]);
    return otsu_threshold(vals);
}

struct Components {
    Grid2<int> label;  // 0 = background, components numbered 1..count
    int count = 0;
};

// 4-connected components, labeled in scan order.
inline Components connected_components(const Mask2& m) {
    Components c;
    c.label = Grid2<int>(m.nx(), m.ny(), 0);
    std::vector<std::size_t> stack;
    for (int y = 0; y < m.ny(); ++y) {
        for (int x = 0; x < m.nx(); ++x) {
            if (!m(x, y) || c.label(x, y)) continue;
            const int id = ++c.count;
            c.label(x, y) = id;
            stack.push_back(m.index(x, y));
            while (!stack.empty()) {
                const std::size_t i = stack.back();
                stack.pop_back();
                const int cx = static_cast<int>(i % m.nx());
                const int cy = static_cast<int>(i / m.nx());
                constexpr int dx[4] = {1, -1, 0, 0};
                constexpr int dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int px = cx + dx[k], py = cy + dy[k];
                    if (!m.in_bounds(px, py) || !m(px, py) || c.label(px, py)) continue;
                    c.label(px, py) = id;
                    stack.push_back(m.index(px, py));
                }
            }
        }
    }
    return c;
}

// The "inner" connected component: an inverted myocardial prior thresholds
// into the central blood-pool blob plus peripheral clutter (and usually the
// background sea outside the annulus). Components touching the image border
// are set aside when an interior one exists; among the candidates the one
// whose centroid lies nearest the overall foreground centroid wins. Empty
// input stays empty.
inline Mask2 inner_component(const Mask2& m) {
    const auto comps = connected_components(m);
    if (comps.count == 0) return Mask2(m.nx(), m.ny(), 0);

    std::vector<double> sx(comps.count + 1, 0.0), sy(comps.count + 1, 0.0);
    std::vector<std::size_t> n(comps.count + 1, 0);
    std::vector<std::uint8_t> on_border(comps.count + 1, 0);
    double gx = 0.0, gy = 0.0;
    std::size_t gn = 0;
    for (int y = 0; y < m.ny(); ++y)
        for (int x = 0; x < m.nx(); ++x) {
            const int id = comps.label(x, y);
            if (!id) continue;
            sx[id] += x;
            sy[id] += y;
            ++n[id];
            gx += x;
            gy += y;
            ++gn;
            if (x == 0 || y == 0 || x == m.nx() - 1 || y == m.ny() - 1) on_border[id] = 1;
        }
    gx /= gn;
    gy /= gn;

    bool any_interior = false;
    for (int id = 1; id <= comps.count; ++id)
        if (!on_border[id]) any_interior = true;

    int best = 0;
    double best_d = std::numeric_limits<double>::max();
    for (int id = 1; id <= comps.count; ++id) {
        if (any_interior && on_border[id]) continue;
        const double cx = sx[id] / n[id], cy = sy[id] / n[id];
        const double d = (cx - gx) * (cx - gx) + (cy - gy) * (cy - gy);
        if (d < best_d) {
            best_d = d;
            best = id;
        }
    }
    Mask2 out(m.nx(), m.ny(), 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        out[i] = (comps.label[i] == best) ? 1 : 0;
    return out;
}

// Background components not 4-connected to the image border become foreground.
inline Mask2 fill_holes(const Mask2& m) {
    const int nx = m.nx(), ny = m.ny();
    Mask2 reached(nx, ny, 0);
    std::vector<std::size_t> stack;
    auto seed = [&](int x, int y) {
        if (!m(x, y) && !reached(x, y)) {
            reached(x, y) = 1;
            stack.push_back(m.index(x, y));
        }
    };
    for (int x = 0; x < nx; ++x) {
        seed(x, 0);
        seed(x, ny - 1);
    }
    for (int y = 0; y < ny; ++y) {
        seed(0, y);
        seed(nx - 1, y);
    }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const int cx = static_cast<int>(i % nx);
        const int cy = static_cast<int>(i / nx);
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
            const int px = cx + dx[k], py = cy + dy[k];
            if (!m.in_bounds(px, py) || m(px, py) || reached(px, py)) continue;
            reached(px, py) = 1;
            stack.push_back(m.index(px, py));
        }
    }
    Mask2 out = m;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!m[i] && !reached[i]) out[i] = 1;
    return out;
}

inline Mask2 dilate_disk(const Mask2& m, int radius) {
    if (radius < 0) throw DegenerateInputError("dilate_disk: negative radius");
    if (radius == 0 || count_foreground(m) == 0) return m;
    const auto d2 = squared_distance_to(m);
    const double r2 = static_cast<double>(radius) * radius;
    Mask2 out(m.nx(), m.ny(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = (d2[i] <= r2) ? 1 : 0;
    return out;
}

// Erosion by a Euclidean disk; pixels whose disk pokes out of the image are
// removed (outside counts as background).
inline Mask2 erode_disk(const Mask2& m, int radius) {
    if (radius < 0) throw DegenerateInputError("erode_disk: negative radius");
    if (radius == 0) return m;
    const int nx = m.nx(), ny = m.ny();
    Mask2 bg(nx, ny, 0);
    for (std::size_t i = 0; i < m.size(); ++i) bg[i] = m[i] ? 0 : 1;
    const auto d2 = squared_distance_to(bg);
    const double r2 = static_cast<double>(radius) * radius;
    Mask2 out(nx, ny, 0);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            if (!m(x, y)) continue;
            if (x < radius || y < radius || x + radius >= nx || y + radius >= ny) continue;
            if (d2(x, y) > r2) out(x, y) = 1;
        }
    return out;
}

struct Circle {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

namespace detail {

inline Circle circle_from_2(double ax, double ay, double bx, double by) {
    Circle c;
    c.cx = 0.5 * (ax + bx);
    c.cy = 0.5 * (ay + by);
    c.r = 0.5 * std::hypot(ax - bx, ay - by);
    return c;
}

inline Circle circle_from_3(double ax, double ay, double bx, double by, double cx,
                            double cy) {
    const double d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    if (std::abs(d) < 1e-12) {
        // collinear: fall back to the widest pair
        Circle c1 = circle_from_2(ax, ay, bx, by);
        Circle c2 = circle_from_2(ax, ay, cx, cy);
        Circle c3 = circle_from_2(bx, by, cx, cy);
        Circle best = c1;
        if (c2.r > best.r) best = c2;
        if (c3.r > best.r) best = c3;
        return best;
    }
    const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
    Circle c;
    c.cx = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
    c.cy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
    c.r = std::hypot(ax - c.cx, ay - c.cy);
    return c;
}

inline bool in_circle(const Circle& c, double x, double y) {
    return std::hypot(x - c.cx, y - c.cy) <= c.r + 1e-9;
}

}  // namespace detail

struct Pt {
    long long x = 0, y = 0;
};

inline long long cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Monotone-chain convex hull of integer points, CCW, no duplicate endpoint.
inline std::vector<Pt> convex_hull_points(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    const std::size_t n = pts.size();
    if (n <= 2) return pts;
    std::vector<Pt> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    const std::size_t lower = k + 1;
    for (std::size_t i = n - 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

inline std::vector<Pt> foreground_points(const Mask2& m) {
    std::vector<Pt> pts;
    for (int y = 0; y < m.ny(); ++y)
        for (int x = 0; x < m.nx(); ++x)
            if (m(x, y)) pts.push_back({x, y});
    return pts;
}

// Welzl's minimum enclosing circle over foreground pixel centers. Runs on the
// convex hull with a fixed-seed shuffle, so the result is deterministic.
inline Circle min_enclosing_circle(const Mask2& m) {
    auto pts = convex_hull_points(foreground_points(m));
    if (pts.empty()) throw DegenerateInputError("min_enclosing_circle: empty mask");
    std::mt19937 rng(0x9e3779b9u);
    std::shuffle(pts.begin(), pts.end(), rng);

    Circle c{static_cast<double>(pts[0].x), static_cast<double>(pts[0].y), 0.0};
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const double px = static_cast<double>(pts[i].x), py = static_cast<double>(pts[i].y);
        if (detail::in_circle(c, px, py)) continue;
        c = {px, py, 0.0};
        for (std::size_t j = 0; j < i; ++j) {
            const double qx = static_cast<double>(pts[j].x), qy = static_cast<double>(pts[j].y);
            if (detail::in_circle(c, qx, qy)) continue;
            c = detail::circle_from_2(px, py, qx, qy);
            for (std::size_t k = 0; k < j; ++k) {
                const double rx = static_cast<double>(pts[k].x),
                             ry = static_cast<double>(pts[k].y);
                if (detail::in_circle(c, rx, ry)) continue;
                c = detail::circle_from_3(px, py, qx, qy, rx, ry);
            }
        }
    }
    return c;
}

// Erodes by ceil(fraction * R) pixels where R is the radius of the smallest
// circle enclosing the foreground. When the erosion radius reaches R the whole
// region would vanish; an empty mask comes back and the caller decides.
inline Mask2 erode_by_circumscribed_fraction(const Mask2& m, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw DegenerateInputError("erosion fraction must be in (0,1)");
    if (count_foreground(m) == 0)
        throw DegenerateInputError("erode_by_circumscribed_fraction: empty mask");
    const Circle c = min_enclosing_circle(m);
    const int radius = static_cast<int>(std::ceil(fraction * c.r));
    if (static_cast<double>(radius) >= c.r) return Mask2(m.nx(), m.ny(), 0);
    return erode_disk(m, radius);
}

// Rasterized convex hull of the foreground pixel centers: every lattice point
// inside or on the hull polygon becomes foreground.
inline Mask2 convex_hull_mask(const Mask2& m) {
    const auto pts = foreground_points(m);
    Mask2 out(m.nx(), m.ny(), 0);
    if (pts.empty()) return out;
    const auto hull = convex_hull_points(pts);

    if (hull.size() == 1) {
        out(static_cast<int>(hull[0].x), static_cast<int>(hull[0].y)) = 1;
        return out;
    }
    long long x0 = hull[0].x, x1 = hull[0].x, y0 = hull[0].y, y1 = hull[0].y;
    for (const auto& p : hull) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    if (hull.size() == 2) {
        const Pt a = hull[0], b = hull[1];
        for (long long y = y0; y <= y1; ++y)
            for (long long x = x0; x <= x1; ++x) {
                const Pt p{x, y};
                if (cross(a, b, p) == 0) out(static_cast<int>(x), static_cast<int>(y)) = 1;
            }
        return out;
    }
    for (long long y = y0; y <= y1; ++y)
        for (long long x = x0; x <= x1; ++x) {
            const Pt p{x, y};
            bool inside = true;
            for (std::size_t i = 0; i < hull.size(); ++i) {
                const Pt& a = hull[i];
                const Pt& b = hull[(i + 1) % hull.size()];
                if (cross(a, b, p) < 0) {  // CCW hull: inside is left of every edge
                    inside = false;
                    break;
                }
            }
            if (inside) out(static_cast<int>(x), static_cast<int>(y)) = 1;
        }
    return out;
}

// Boundary pixels (foreground 4-adjacent to background) of a mask. Neighbors
// outside the image do not count as background.
inline Mask2 boundary_pixels(const Mask2& m) {
    Mask2 b(m.nx(), m.ny(), 0);
    constexpr int dx[4] = {1, -1, 0, 0};
    constexpr int dy[4] = {0, 0, 1, -1};
    for (int y = 0; y < m.ny(); ++y)
        for (int x = 0; x < m.nx(); ++x) {
            if (!m(x, y)) continue;
            for (int k = 0; k < 4; ++k) {
                const int px = x + dx[k], py = y + dy[k];
                if (m.in_bounds(px, py) && !m(px, py)) {
                    b(x, y) = 1;
                    break;
                }
            }
        }
    return b;
}

// Exact signed Euclidean distance to the mask boundary: negative strictly
// inside, zero on boundary pixels, positive outside.
inline DistanceMap signed_distance(const Mask2& m) {
    const std::size_t fg = count_foreground(m);
    if (fg == 0 || fg == m.size())
        throw DegenerateInputError("signed_distance: mask must have both classes");
    const Mask2 b = boundary_pixels(m);
    const auto d2 = squared_distance_to(b);
    DistanceMap out(m.nx(), m.ny(), 0.0f);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const float d = static_cast<float>(std::sqrt(d2[i]));
        out[i] = m[i] ? -d : d;
    }
    return out;
}

// Distance from the blood-pool region clamped at `cap`. Interior pixels carry
// the cap value so downstream energies can turn them into the maximal
// myocardium penalty.
inline Field2 truncated_outside_distance(const Mask2& bp, double cap) {
    if (count_foreground(bp) == 0)
        throw DegenerateInputError("truncated_outside_distance: empty blood pool");
    const auto d2 = squared_distance_to(bp);
    Field2 out(bp.nx(), bp.ny(), 0.0f);
    for (std::size_t i = 0; i < bp.size(); ++i) {
        if (bp[i]) {
            out[i] = static_cast<float>(cap);
        } else {
            out[i] = static_cast<float>(std::min(std::sqrt(d2[i]), cap));
        }
    }
    return out;
}

inline Histogram histogram_of(const std::vector<float>& values) {
    if (values.empty()) throw DegenerateInputError("histogram of empty sample set");
    Histogram h{};
    for (float v : values) h[intensity_bin(v)] += 1.0;
    return h;
}

inline Histogram histogram_of(const Grid2<float>& img, const Mask2& roi) {
    std::vector<float> vals;
    for (std::size_t i = 0; i < roi.size(); ++i)
        if (roi[i]) vals.push_back(img[i]);
    return histogram_of(vals);
}

// Per-bin map realizing the standard monotone CDF match from `src` to `ref`.
inline std::array<int, 256> histogram_match_map(const Histogram& src,
                                                const Histogram& ref) {
    const double src_total = std::accumulate(src.begin(), src.end(), 0.0);
    const double ref_total = std::accumulate(ref.begin(), ref.end(), 0.0);
    if (src_total <= 0.0 || ref_total <= 0.0)
        throw DegenerateInputError("histogram_match: empty histogram");

    std::array<double, 256> src_cdf{}, ref_cdf{};
    double acc = 0.0;
    for (int i = 0; i < 256; ++i) {
        acc += src[i];
        src_cdf[i] = acc / src_total;
    }
    acc = 0.0;
    for (int i = 0; i < 256; ++i) {
        acc += ref[i];
        ref_cdf[i] = acc / ref_total;
    }

    std::array<int, 256> map{};
    int r = 0;
    for (int b = 0; b < 256; ++b) {
        while (r < 255 && ref_cdf[r] < src_cdf[b] - 1e-12) ++r;
        map[b] = r;
    }
    return map;
}

inline Slice histogram_match(const Slice& src, const Histogram& ref) {
    const auto map = histogram_match_map(histogram_of(src.pix.raw()), ref);
    Slice out = src;
    for (auto& p : out.pix.raw()) p = static_cast<float>(map[intensity_bin(p)]);
    return out;
}

// Matches using the statistics of `roi` pixels only, then applies the (still
// monotone) map to the whole slice.
inline Slice histogram_match(const Slice& src, const Histogram& ref, const Mask2& roi) {
    const auto map = histogram_match_map(histogram_of(src.pix, roi), ref);
    Slice out = src;
    for (auto& p : out.pix.raw()) p = static_cast<float>(map[intensity_bin(p)]);
    return out;
}

inline Volume histogram_match_volume(const Volume& src, const Histogram& ref) {
    const auto map = histogram_match_map(histogram_of(src.vox.raw()), ref);
    Volume out = src;
    for (auto& p : out.vox.raw()) p = static_cast<float>(map[intensity_bin(p)]);
    return out;
}

}  // namespace atlascut
