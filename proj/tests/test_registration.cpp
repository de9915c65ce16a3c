#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "atlascut/registration.hpp"
#include "atlascut/validation.hpp"

using namespace atlascut;

namespace {

Grid2<float> phantom_mid_slice() {
    PhantomSpec spec;
    spec.noise_sigma = 4.0;
    spec.jitter_amplitude = 0.0;
    const Phantom ph = generate_phantom(spec);
    return extract_slice(ph.frames[0], spec.n_slices / 2).pix;
}

Affine2 translation2(double tx, double ty) {
    Affine2 t = Affine2::identity();
    t.t = {tx, ty};
    return t;
}

}  // namespace

TEST_CASE("resample with the identity reproduces the input exactly", "[registration]") {
    const auto img = phantom_mid_slice();
    const auto out = resample(img, centered_identity(img.nx(), img.ny()), img.nx(), img.ny());
    CHECK(out == img);
}

TEST_CASE("resample by a pure translation shifts columns and zero-fills", "[registration]") {
    Grid2<float> img(4, 3, 0.0f);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) img(x, y) = static_cast<float>(10 * y + x);
    const auto out = resample(img, translation2(1.0, 0.0), 4, 3);
    for (int y = 0; y < 3; ++y) {
        CHECK(out(0, y) == 0.0f);  // boundary fill
        for (int x = 1; x < 4; ++x) CHECK(out(x, y) == img(x - 1, y));
    }
}

TEST_CASE("resample by scale 2 doubles a centered disk", "[registration]") {
    const int n = 64;
    Grid2<float> img(n, n, 0.0f);
    const double c = (n - 1) / 2.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if ((x - c) * (x - c) + (y - c) * (y - c) <= 100.0) img(x, y) = 100.0f;

    Affine2 t = centered_identity(n, n);
    t.m = {2.0, 0.0, 0.0, 2.0};
    const auto out = resample(img, t, n, n);

    // oracle: analytic disk of radius 20 about the center
    int wrong = 0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const bool inside = (x - c) * (x - c) + (y - c) * (y - c) <= 400.0;
            const bool bright = out(x, y) > 50.0f;
            if (inside != bright) ++wrong;
        }
    // disagreement confined to the 1-px interpolation band around the edge
    CHECK(wrong < 2 * 3.1416 * 20.0 * 1.5);
}

TEST_CASE("nearest-neighbor resampling keeps masks binary", "[registration]") {
    Mask2 m(8, 8, 0);
    m(2, 2) = m(3, 2) = 1;
    const auto out = resample_nearest(m, translation2(2.0, 1.0), 8, 8);
    CHECK(out(4, 3) == 1);
    CHECK(out(5, 3) == 1);
    CHECK(count_foreground(out) == 2);
}

TEST_CASE("ssd closed forms", "[registration]") {
    Grid2<float> a(5, 4, 3.0f), b(5, 4, 3.0f);
    const Affine2 id = Affine2::identity();
    CHECK(ssd(a, b, id) == 0.0);

    for (auto& v : b.raw()) v += 2.0f;  // constant difference c -> c^2
    CHECK(ssd(a, b, id) == Catch::Approx(4.0));

    b = a;
    b(1, 1) += 7.0f;  // one pixel differs by d -> d^2 / n
    CHECK(ssd(a, b, id) == Catch::Approx(49.0 / 20.0));
}

TEST_CASE("nelder_mead solves the shifted quadratic", "[registration]") {
    auto f = [](const std::vector<double>& x) {
        return (x[0] - 3.0) * (x[0] - 3.0) + (x[1] + 1.0) * (x[1] + 1.0);
    };
    const auto r = nelder_mead(f, {0.0, 0.0}, {1.0, 1.0});
    CHECK(r.converged);
    CHECK(r.x[0] == Catch::Approx(3.0).margin(1e-5));
    CHECK(r.x[1] == Catch::Approx(-1.0).margin(1e-5));
}

TEST_CASE("nelder_mead on a constant objective returns x0", "[registration]") {
    auto f = [](const std::vector<double>&) { return 5.0; };
    const auto r = nelder_mead(f, {2.0, 4.0}, {1.0, 1.0});
    CHECK(r.converged);
    CHECK(r.iterations == 0);
    CHECK(r.x[0] == 2.0);
    CHECK(r.x[1] == 4.0);
}

TEST_CASE("nelder_mead solves Rosenbrock from the classical start", "[registration]") {
    auto rosen = [](const std::vector<double>& x) {
        const double a = 1.0 - x[0];
        const double b = x[1] - x[0] * x[0];
        return a * a + 100.0 * b * b;
    };
    const auto r = nelder_mead(rosen, {-1.2, 1.0}, {0.5, 0.5});
    CHECK(r.x[0] == Catch::Approx(1.0).margin(1e-3));
    CHECK(r.x[1] == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("nelder_mead aborts on a non-finite objective", "[registration]") {
    auto f = [](const std::vector<double>& x) {
        return x[0] > 0.5 ? std::numeric_limits<double>::quiet_NaN() : x[0];
    };
    CHECK_THROWS_AS(nelder_mead(f, {0.0}, {1.0}), OptimizerError);
}

TEST_CASE("nelder_mead never returns worse than the start", "[registration]") {
    std::mt19937 rng(8);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const double a = u(rng), b = u(rng), c = u(rng);
        auto f = [&](const std::vector<double>& x) {
            return std::abs(a * x[0]) + std::cos(b * x[1]) * c + 0.1 * x[0] * x[0];
        };
        const std::vector<double> x0{u(rng), u(rng)};
        const auto r = nelder_mead(f, x0, {0.3, 0.3}, 1e-8, 200);
        CHECK(r.f <= f(x0) + 1e-12);
    }
}

TEST_CASE("registering an image to itself stays at identity", "[registration]") {
    const auto img = phantom_mid_slice();
    const auto r = register_affine(img, img, centered_identity(img.nx(), img.ny()));
    CHECK(r.final_metric < 1e-6);
    CHECK(r.transform.param_norm() < 0.01);
}

TEST_CASE("registration recovers a known translation within half a pixel",
          "[registration]") {
    const auto img = phantom_mid_slice();
    Affine2 shift = centered_identity(img.nx(), img.ny());
    shift.t = {3.0, 2.0};
    const auto moving = resample(img, shift, img.nx(), img.ny());

    const auto r = register_affine(img, moving, centered_identity(img.nx(), img.ny()));
    const Affine2 roundtrip = compose(r.transform, shift);
    double err = 0.0;
    int n = 0;
    for (double lx : {34.0, 64.0, 94.0})
        for (double ly : {34.0, 64.0, 94.0}) {
            const auto p = roundtrip.apply({lx, ly});
            err += std::hypot(p[0] - lx, p[1] - ly);
            ++n;
        }
    CHECK(err / n < 0.5);
}

TEST_CASE("registration recovers a known scale within 0.02", "[registration]") {
    const auto img = phantom_mid_slice();
    Affine2 grow = centered_identity(img.nx(), img.ny());
    grow.m = {1.1, 0.0, 0.0, 1.1};
    const auto moving = resample(img, grow, img.nx(), img.ny());
    const auto r = register_affine(img, moving, centered_identity(img.nx(), img.ny()));
    CHECK(r.transform.m[0] == Catch::Approx(1.0 / 1.1).margin(0.02));
    CHECK(r.transform.m[3] == Catch::Approx(1.0 / 1.1).margin(0.02));
}

TEST_CASE("resample with t then its inverse stays within interpolation blur",
          "[registration]") {
    const auto img = phantom_mid_slice();
    Affine2 t = centered_identity(img.nx(), img.ny());
    t.m = {1.05, 0.03, -0.02, 0.97};
    t.t = {2.0, -1.5};
    const auto warped = resample(img, t, img.nx(), img.ny());
    const auto back = resample(warped, t.inverse(), img.nx(), img.ny());
    // dynamic range is 255 after phantom normalization territory; stay under 1%
    CHECK(ssd(img, back, Affine2::identity()) < 0.01 * 255.0 * 255.0);
}

TEST_CASE("affine inverse composes to identity", "[registration]") {
    Affine3 t = centered_identity(10, 12, 6);
    t.m = {1.1, 0.02, 0.0, -0.03, 0.95, 0.01, 0.0, 0.02, 1.04};
    t.t = {1.5, -2.0, 0.5};
    const Affine3 id = compose(t, t.inverse());
    for (int i = 0; i < 9; ++i)
        CHECK(id.m[i] == Catch::Approx(i % 4 == 0 ? 1.0 : 0.0).margin(1e-6));
    for (int i = 0; i < 3; ++i) CHECK(id.t[i] == Catch::Approx(0.0).margin(1e-6));

    Affine2 singular = Affine2::identity();
    singular.m = {1.0, 2.0, 0.5, 1.0};  // det = 0
    CHECK_THROWS_AS(singular.inverse(), DegenerateInputError);
}

TEST_CASE("affine JSON round-trip", "[registration]") {
    Affine2 t = centered_identity(20, 30);
    t.m = {0.9, 0.1, -0.1, 1.2};
    t.t = {4.0, -2.5};
    const auto back = affine_from_json<2>(affine_to_json(t));
    CHECK(back.m == t.m);
    CHECK(back.t == t.t);
    CHECK(back.c == t.c);
    CHECK_THROWS_AS(affine_from_json<3>(affine_to_json(t)), FormatError);
}

TEST_CASE("3D registration recovers a volume translation", "[registration]") {
    PhantomSpec spec;
    spec.noise_sigma = 4.0;
    const Phantom ph = generate_phantom(spec);
    const Grid3<float>& vol = ph.frames[0].vox;

    Affine3 shift = centered_identity(vol.nx(), vol.ny(), vol.nz());
    shift.t = {2.0, -3.0, 0.0};
    const auto moving = resample(vol, shift, vol.nx(), vol.ny(), vol.nz());
    const auto r = register_affine(vol, moving,
                                   centered_identity(vol.nx(), vol.ny(), vol.nz()));
    CHECK(r.transform.t[0] == Catch::Approx(-2.0).margin(0.5));
    CHECK(r.transform.t[1] == Catch::Approx(3.0).margin(0.5));
}
