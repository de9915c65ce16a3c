#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlascut/errors.hpp"
#include "atlascut/grid.hpp"
#include "atlascut/volume.hpp"

// Affine transforms with a fixed rotation/scale center, intensity resampling,
// the mean-SSD metric, and Nelder-Mead simplex optimization. 3D registration
// aligns atlas and test volumes; 2D registration aligns per-slice signed
// distance maps during prior refinement.

namespace atlascut {

template <int D>
struct Affine {
    static_assert(D == 2 || D == 3);
    std::array<double, D * D> m{};  // row-major linear part
    std::array<double, D> t{};      // translation, pixels
    std::array<double, D> c{};      // fixed center, pixels

    static Affine identity() {
        Affine a;
        for (int i = 0; i < D; ++i) a.m[i * D + i] = 1.0;
        return a;
    }

    std::array<double, D> apply(const std::array<double, D>& x) const {
        std::array<double, D> y{};
        for (int i = 0; i < D; ++i) {
            double acc = 0.0;
            for (int j = 0; j < D; ++j) acc += m[i * D + j] * (x[j] - c[j]);
            y[i] = acc + c[i] + t[i];
        }
        return y;
    }

    double det() const {
        if constexpr (D == 2) {
            return m[0] * m[3] - m[1] * m[2];
        } else {
            return m[0] * (m[4] * m[8] - m[5] * m[7]) -
                   m[1] * (m[3] * m[8] - m[5] * m[6]) +
                   m[2] * (m[3] * m[7] - m[4] * m[6]);
        }
    }

    Affine inverse() const {
        const double d = det();
        if (std::abs(d) < 1e-9) throw DegenerateInputError("singular affine transform");
        Affine inv;
        inv.c = c;
        if constexpr (D == 2) {
            inv.m = {m[3] / d, -m[1] / d, -m[2] / d, m[0] / d};
        } else {
            inv.m = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d,
                     (m[1] * m[5] - m[2] * m[4]) / d, (m[5] * m[6] - m[3] * m[8]) / d,
                     (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
                     (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d,
                     (m[0] * m[4] - m[1] * m[3]) / d};
        }
        // y = M(x-c)+c+t  =>  x = M^-1(y-c)+c - M^-1 t
        for (int i = 0; i < D; ++i) {
            double acc = 0.0;
            for (int j = 0; j < D; ++j) acc += inv.m[i * D + j] * t[j];
            inv.t[i] = -acc;
        }
        return inv;
    }

    // Deviation of (m, t) from the identity transform, used both as the
    // optimizer's parameter vector and as the refinement convergence metric.
    std::vector<double> params_rel_identity() const {
        std::vector<double> p;
        p.reserve(D * D + D);
        for (int i = 0; i < D; ++i)
            for (int j = 0; j < D; ++j) p.push_back(m[i * D + j] - (i == j ? 1.0 : 0.0));
        for (int i = 0; i < D; ++i) p.push_back(t[i]);
        return p;
    }

    double param_norm() const {
        double s = 0.0;
        for (double v : params_rel_identity()) s += v * v;
        return std::sqrt(s);
    }
};

using Affine2 = Affine<2>;
using Affine3 = Affine<3>;

// (a o b)(x) = a(b(x)); the result keeps a's center.
template <int D>
inline Affine<D> compose(const Affine<D>& a, const Affine<D>& b) {
    // convert to y = Lx + o form
    auto linof = [](const Affine<D>& f, std::array<double, D * D>& L,
                    std::array<double, D>& o) {
        L = f.m;
        for (int i = 0; i < D; ++i) {
            double mc = 0.0;
            for (int j = 0; j < D; ++j) mc += f.m[i * D + j] * f.c[j];
            o[i] = f.c[i] + f.t[i] - mc;
        }
    };
    std::array<double, D * D> La, Lb, L{};
    std::array<double, D> oa, ob, o{};
    linof(a, La, oa);
    linof(b, Lb, ob);
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
            double acc = 0.0;
            for (int k = 0; k < D; ++k) acc += La[i * D + k] * Lb[k * D + j];
            L[i * D + j] = acc;
        }
    for (int i = 0; i < D; ++i) {
        double acc = oa[i];
        for (int k = 0; k < D; ++k) acc += La[i * D + k] * ob[k];
        o[i] = acc;
    }
    Affine<D> r;
    r.m = L;
    r.c = a.c;
    for (int i = 0; i < D; ++i) {
        double mc = 0.0;
        for (int j = 0; j < D; ++j) mc += L[i * D + j] * r.c[j];
        r.t[i] = o[i] - r.c[i] + mc;
    }
    return r;
}

template <int D>
inline nlohmann::json affine_to_json(const Affine<D>& a) {
    return nlohmann::json{{"dim", D},
                          {"matrix", std::vector<double>(a.m.begin(), a.m.end())},
                          {"translation", std::vector<double>(a.t.begin(), a.t.end())},
                          {"center", std::vector<double>(a.c.begin(), a.c.end())}};
}

template <int D>
inline Affine<D> affine_from_json(const nlohmann::json& j) {
    if (j.at("dim").get<int>() != D) throw FormatError("affine JSON: wrong dimensionality");
    Affine<D> a;
    const auto m = j.at("matrix").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    const auto c = j.at("center").get<std::vector<double>>();
    if (m.size() != D * D || t.size() != D || c.size() != D)
        throw FormatError("affine JSON: bad array lengths");
    std::copy(m.begin(), m.end(), a.m.begin());
    std::copy(t.begin(), t.end(), a.t.begin());
    std::copy(c.begin(), c.end(), a.c.begin());
    return a;
}

inline float sample_bilinear(const Grid2<float>& g, double x, double y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    auto at = [&](int px, int py) -> double {
        return g.in_bounds(px, py) ? g(px, py) : 0.0;
    };
    const double v0 = at(x0, y0) * (1 - fx) + at(x0 + 1, y0) * fx;
    const double v1 = at(x0, y0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1) * fx;
    return static_cast<float>(v0 * (1 - fy) + v1 * fy);
}

inline float sample_trilinear(const Grid3<float>& g, double x, double y, double z) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int z0 = static_cast<int>(std::floor(z));
    const double fx = x - x0, fy = y - y0, fz = z - z0;
    auto at = [&](int px, int py, int pz) -> double {
        return g.in_bounds(px, py, pz) ? g(px, py, pz) : 0.0;
    };
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                if (w > 0.0) acc += w * at(x0 + dx, y0 + dy, z0 + dz);
            }
    return static_cast<float>(acc);
}

// output(p) = moving(t^-1(p)); out-of-bounds samples read as 0.
inline Grid2<float> resample(const Grid2<float>& moving, const Affine2& t, int onx,
                             int ony) {
    const Affine2 inv = t.inverse();
    Grid2<float> out(onx, ony, 0.0f);
    for (int y = 0; y < ony; ++y)
        for (int x = 0; x < onx; ++x) {
            const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            out(x, y) = sample_bilinear(moving, q[0], q[1]);
        }
    return out;
}

inline Grid3<float> resample(const Grid3<float>& moving, const Affine3& t, int onx,
                             int ony, int onz) {
    const Affine3 inv = t.inverse();
    Grid3<float> out(onx, ony, onz, 0.0f);
    for (int z = 0; z < onz; ++z)
        for (int y = 0; y < ony; ++y)
            for (int x = 0; x < onx; ++x) {
                const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y),
                                          static_cast<double>(z)});
                out(x, y, z) = sample_trilinear(moving, q[0], q[1], q[2]);
            }
    return out;
}

// Label images move with nearest-neighbor lookup so they stay binary.
inline Mask2 resample_nearest(const Mask2& moving, const Affine2& t, int onx, int ony) {
    const Affine2 inv = t.inverse();
    Mask2 out(onx, ony, 0);
    for (int y = 0; y < ony; ++y)
        for (int x = 0; x < onx; ++x) {
            const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            const int px = static_cast<int>(std::lround(q[0]));
            const int py = static_cast<int>(std::lround(q[1]));
            out(x, y) = moving.in_bounds(px, py) ? moving(px, py) : 0;
        }
    return out;
}

inline Mask3 resample_nearest(const Mask3& moving, const Affine3& t, int onx, int ony,
                              int onz) {
    const Affine3 inv = t.inverse();
    Mask3 out(onx, ony, onz, 0);
    for (int z = 0; z < onz; ++z)
        for (int y = 0; y < ony; ++y)
            for (int x = 0; x < onx; ++x) {
                const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y),
                                          static_cast<double>(z)});
                const int px = static_cast<int>(std::lround(q[0]));
                const int py = static_cast<int>(std::lround(q[1]));
                const int pz = static_cast<int>(std::lround(q[2]));
                out(x, y, z) = moving.in_bounds(px, py, pz) ? moving(px, py, pz) : 0;
            }
    return out;
}

// Mean (not sum) of squared differences over the fixed grid, so values are
// comparable across pyramid levels.
inline double ssd(const Grid2<float>& fixed, const Grid2<float>& moving,
                  const Affine2& t) {
    const Affine2 inv = t.inverse();
    double acc = 0.0;
    for (int y = 0; y < fixed.ny(); ++y)
        for (int x = 0; x < fixed.nx(); ++x) {
            const auto q = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            const double d = fixed(x, y) - sample_bilinear(moving, q[0], q[1]);
            acc += d * d;
        }
    return acc / static_cast<double>(fixed.size());
}

inline double ssd(const Grid3<float>& fixed, const Grid3<float>& moving,
                  const Affine3& t) {
    const Affine3 inv = t.inverse();
    double acc = 0.0;
    for (int z = 0; z < fixed.nz(); ++z)
        for (int y = 0; y < fixed.ny(); ++y) {
            // walk the row incrementally: inv is affine, so stepping x adds column 0
            std::array<double, 3> q =
                inv.apply({0.0, static_cast<double>(y), static_cast<double>(z)});
            const double sx = inv.m[0], sy = inv.m[3], sz = inv.m[6];
            for (int x = 0; x < fixed.nx(); ++x) {
                const double d = fixed(x, y, z) - sample_trilinear(moving, q[0], q[1], q[2]);
                acc += d * d;
                q[0] += sx;
                q[1] += sy;
                q[2] += sz;
            }
        }
    return acc / static_cast<double>(fixed.size());
}

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Downhill simplex with the standard reflection/expansion/contraction/shrink
// coefficients (1, 2, 0.5, 0.5). Terminates when the simplex function spread
// falls below ftol. Returns the best vertex seen; never worse than f(x0).
inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                                    const std::vector<double>& x0,
                                    const std::vector<double>& scale,
                                    double ftol = 1e-8, int max_iter = 2000) {
    const std::size_t n = x0.size();
    if (n == 0 || scale.size() != n)
        throw DegenerateInputError("nelder_mead: empty or mismatched parameter vector");

    auto eval = [&](const std::vector<double>& x) {
        const double f = objective(x);
        if (!std::isfinite(f))
            throw OptimizerError("nelder_mead: objective returned a non-finite value");
        return f;
    };

    std::vector<std::vector<double>> vertex(n + 1, x0);
    std::vector<double> fval(n + 1);
    for (std::size_t i = 0; i < n; ++i) vertex[i + 1][i] += scale[i];
    for (std::size_t i = 0; i <= n; ++i) fval[i] = eval(vertex[i]);

    NelderMeadResult res;
    res.iterations = max_iter;
    std::vector<std::size_t> order(n + 1);
    for (int iter = 0; iter < max_iter; ++iter) {
        for (std::size_t i = 0; i <= n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return fval[a] < fval[b]; });
        const std::size_t best = order[0], worst = order[n], second = order[n - 1];

        res.iterations = iter;
        if (fval[worst] - fval[best] < ftol) {
            res.converged = true;
            break;
        }

        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t j = 0; j < n; ++j) centroid[j] += vertex[i][j];
        }
        for (auto& cj : centroid) cj /= static_cast<double>(n);

        auto along = [&](double coeff) {
            std::vector<double> x(n);
            for (std::size_t j = 0; j < n; ++j)
                x[j] = centroid[j] + coeff * (centroid[j] - vertex[worst][j]);
            return x;
        };

        const auto xr = along(1.0);
        const double fr = eval(xr);
        if (fr < fval[best]) {
            const auto xe = along(2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                vertex[worst] = xe;
                fval[worst] = fe;
            } else {
                vertex[worst] = xr;
                fval[worst] = fr;
            }
        } else if (fr < fval[second]) {
            vertex[worst] = xr;
            fval[worst] = fr;
        } else {
            const auto xc = fr < fval[worst] ? along(0.5) : along(-0.5);
            const double fc = eval(xc);
            if (fc < std::min(fr, fval[worst])) {
                vertex[worst] = xc;
                fval[worst] = fc;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        vertex[i][j] = vertex[best][j] + 0.5 * (vertex[i][j] - vertex[best][j]);
                    fval[i] = eval(vertex[i]);
                }
            }
        }
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i <= n; ++i)
        if (fval[i] < fval[best]) best = i;
    res.x = vertex[best];
    res.f = fval[best];
    return res;
}

struct RegistrationSettings {
    double translate_step = 2.0;  // initial simplex step, pixels
    double linear_step = 0.05;    // initial simplex step, matrix entries
    double ftol = 1e-8;
    int coarse_max_iter = 1500;
    int fine_max_iter = 300;
    bool use_pyramid = true;
};

template <int D>
struct RegistrationResult {
    Affine<D> transform;
    double final_metric = 0.0;
    int iterations = 0;
    bool converged = false;
};

inline Grid2<float> downsample2x(const Grid2<float>& g) {
    const int nx = std::max(1, (g.nx() + 1) / 2);
    const int ny = std::max(1, (g.ny() + 1) / 2);
    Grid2<float> out(nx, ny, 0.0f);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dy = 0; dy <= 1; ++dy)
                for (int dx = 0; dx <= 1; ++dx) {
                    const int px = 2 * x + dx, py = 2 * y + dy;
                    if (g.in_bounds(px, py)) {
                        acc += g(px, py);
                        ++cnt;
                    }
                }
            out(x, y) = static_cast<float>(acc / cnt);
        }
    return out;
}

inline Grid3<float> downsample2x(const Grid3<float>& g) {
    const int nx = std::max(1, (g.nx() + 1) / 2);
    const int ny = std::max(1, (g.ny() + 1) / 2);
    const int nz = std::max(1, (g.nz() + 1) / 2);
    Grid3<float> out(nx, ny, nz, 0.0f);
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int dz = 0; dz <= 1; ++dz)
                    for (int dy = 0; dy <= 1; ++dy)
                        for (int dx = 0; dx <= 1; ++dx) {
                            const int px = 2 * x + dx, py = 2 * y + dy, pz = 2 * z + dz;
                            if (g.in_bounds(px, py, pz)) {
                                acc += g(px, py, pz);
                                ++cnt;
                            }
                        }
                out(x, y, z) = static_cast<float>(acc / cnt);
            }
    return out;
}

namespace detail {

template <int D>
inline Affine<D> affine_from_params(const Affine<D>& init, const std::vector<double>& p) {
    Affine<D> a = init;
    for (int i = 0; i < D * D; ++i) a.m[i] += p[i];
    for (int i = 0; i < D; ++i) a.t[i] += p[D * D + i];
    return a;
}

template <int D>
inline Affine<D> scale_affine_coords(const Affine<D>& a, double s) {
    // same transform expressed in coordinates scaled by s (half res: s = 0.5)
    Affine<D> out = a;
    for (int i = 0; i < D; ++i) {
        out.t[i] = a.t[i] * s;
        out.c[i] = a.c[i] * s;
    }
    return out;
}

template <typename GridT, int D>
inline RegistrationResult<D> register_level(const GridT& fixed, const GridT& moving,
                                            const Affine<D>& init,
                                            const RegistrationSettings& s, int max_iter) {
    std::vector<double> x0(D * D + D, 0.0);
    std::vector<double> scale(D * D + D, s.linear_step);
    for (int i = 0; i < D; ++i) scale[D * D + i] = s.translate_step;

    auto objective = [&](const std::vector<double>& p) {
        const auto t = affine_from_params(init, p);
        if (std::abs(t.det()) < 1e-9) return std::numeric_limits<double>::max() * 0.5;
        return ssd(fixed, moving, t);
    };
    const auto nm = nelder_mead(objective, x0, scale, s.ftol, max_iter);

    RegistrationResult<D> r;
    r.transform = affine_from_params(init, nm.x);
    r.final_metric = nm.f;
    r.iterations = nm.iterations;
    r.converged = nm.converged;
    return r;
}

}  // namespace detail

// Optimizes mean SSD over the full affine parameter set (6 in 2D, 12 in 3D),
// as perturbations of `init`, with a half-resolution pass first.
inline RegistrationResult<2> register_affine(const Grid2<float>& fixed,
                                             const Grid2<float>& moving,
                                             const Affine2& init,
                                             const RegistrationSettings& s = {}) {
    if (fixed.empty() || moving.empty())
        throw DegenerateInputError("register_affine: empty image");
    RegistrationResult<2> coarse;
    Affine2 start = init;
    int iters = 0;
    if (s.use_pyramid && fixed.nx() >= 16 && fixed.ny() >= 16) {
        const auto fh = downsample2x(fixed);
        const auto mh = downsample2x(moving);
        coarse = detail::register_level<Grid2<float>, 2>(
            fh, mh, detail::scale_affine_coords(init, 0.5), s, s.coarse_max_iter);
        start = detail::scale_affine_coords(coarse.transform, 2.0);
        iters = coarse.iterations;
    }
    auto fine = detail::register_level<Grid2<float>, 2>(fixed, moving, start, s,
                                                        s.fine_max_iter);
    fine.iterations += iters;
    return fine;
}

inline RegistrationResult<3> register_affine(const Grid3<float>& fixed,
                                             const Grid3<float>& moving,
                                             const Affine3& init,
                                             const RegistrationSettings& s = {}) {
    if (fixed.empty() || moving.empty())
        throw DegenerateInputError("register_affine: empty volume");
    RegistrationResult<3> coarse;
    Affine3 start = init;
    int iters = 0;
    if (s.use_pyramid && fixed.nx() >= 16 && fixed.ny() >= 16) {
        const auto fh = downsample2x(fixed);
        const auto mh = downsample2x(moving);
        coarse = detail::register_level<Grid3<float>, 3>(
            fh, mh, detail::scale_affine_coords(init, 0.5), s, s.coarse_max_iter);
        start = detail::scale_affine_coords(coarse.transform, 2.0);
        iters = coarse.iterations;
    }
    auto fine = detail::register_level<Grid3<float>, 3>(fixed, moving, start, s,
                                                        s.fine_max_iter);
    fine.iterations += iters;
    return fine;
}

inline Affine2 centered_identity(int nx, int ny) {
    Affine2 a = Affine2::identity();
    a.c = {0.5 * (nx - 1), 0.5 * (ny - 1)};
    return a;
}

inline Affine3 centered_identity(int nx, int ny, int nz) {
    Affine3 a = Affine3::identity();
    a.c = {0.5 * (nx - 1), 0.5 * (ny - 1), 0.5 * (nz - 1)};
    return a;
}

}  // namespace atlascut
