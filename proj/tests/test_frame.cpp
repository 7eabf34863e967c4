#include <doctest.h>

#include "helpers.hpp"
#include "vdb/frame.hpp"

#include <cmath>
#include <vector>

using namespace vdb;
using testutil::Rng;

TEST_CASE("gradient: forward differences, zero at the far edge") {
    Frame f(2, 1);
    f.at(0, 0) = 0.f;
    f.at(1, 0) = 1.f;
    Gradient2 g = gradient(f);
    CHECK(g.dx.at(0, 0) == doctest::Approx(1.0));
    CHECK(g.dx.at(1, 0) == doctest::Approx(0.0));
    CHECK(g.dy.at(0, 0) == doctest::Approx(0.0));
    CHECK(g.dy.at(1, 0) == doctest::Approx(0.0));

    Frame c(5, 4, 1, 0.5f);
    Gradient2 gc = gradient(c);
    for (float v : gc.dx.data)
        CHECK(v == 0.f);
    for (float v : gc.dy.data)
        CHECK(v == 0.f);
}

TEST_CASE("gradient: matches a dense finite-difference matrix on 8x8") {
    const int W = 8, H = 8, n = W * H;
    Rng rng(11);
    Frame f = testutil::random_frame(W, H, rng);

    // Row p of Dx is -1 at p, +1 at the right neighbor, empty on the last column.
    std::vector<double> dx(static_cast<size_t>(n) * n, 0.0), dy(static_cast<size_t>(n) * n, 0.0);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            int p = y * W + x;
            if (x + 1 < W) {
                dx[static_cast<size_t>(p) * n + p] = -1;
                dx[static_cast<size_t>(p) * n + p + 1] = 1;
            }
            if (y + 1 < H) {
                dy[static_cast<size_t>(p) * n + p] = -1;
                dy[static_cast<size_t>(p) * n + p + W] = 1;
            }
        }
    Gradient2 g = gradient(f);
    for (int p = 0; p < n; p++) {
        double ex = 0, ey = 0;
        for (int q = 0; q < n; q++) {
            ex += dx[static_cast<size_t>(p) * n + q] * f.data[q];
            ey += dy[static_cast<size_t>(p) * n + q] * f.data[q];
        }
        CHECK(g.dx.data[p] == doctest::Approx(ex).epsilon(1e-6));
        CHECK(g.dy.data[p] == doctest::Approx(ey).epsilon(1e-6));
    }
}

TEST_CASE("gradient_adjoint is the transpose: <Gf, p> == <f, G^T p>") {
    Rng rng(12);
    Frame f = testutil::random_frame(9, 7, rng);
    Frame px = testutil::random_frame(9, 7, rng);
    Frame py = testutil::random_frame(9, 7, rng);
    Gradient2 g = gradient(f);
    double lhs = testutil::dot(g.dx, px) + testutil::dot(g.dy, py);
    double rhs = testutil::dot(f, gradient_adjoint(px, py));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("warp: integer and half-pixel shifts of a ramp") {
    Frame ramp(4, 1);
    ramp.at(0, 0) = 0.f;
    ramp.at(1, 0) = 0.25f;
    ramp.at(2, 0) = 0.5f;
    ramp.at(3, 0) = 0.75f;

    WarpResult one = warp(ramp, FlowField(4, 1, 1.f, 0.f));
    const float want1[4] = {0.25f, 0.5f, 0.75f, 0.75f};
    for (int x = 0; x < 4; x++)
        CHECK(one.frame.at(x, 0) == doctest::Approx(want1[x]));
    CHECK(one.in_bounds[2] == 1);
    CHECK(one.in_bounds[3] == 0); // sampled past the last column

    WarpResult half = warp(ramp, FlowField(4, 1, 0.5f, 0.f));
    const float want2[4] = {0.125f, 0.375f, 0.625f, 0.75f};
    for (int x = 0; x < 4; x++)
        CHECK(half.frame.at(x, 0) == doctest::Approx(want2[x]));
}

TEST_CASE("warp: zero flow is the identity, mismatched sizes throw") {
    Rng rng(13);
    Frame f = testutil::random_frame(12, 9, rng);
    WarpResult r = warp(f, FlowField(12, 9));
    CHECK(testutil::max_abs_diff(f, r.frame) == 0.0);
    for (auto b : r.in_bounds)
        CHECK(b == 1);
    CHECK_THROWS(warp(f, FlowField(12, 8)));
}

TEST_CASE("build_pyramid: geometry, constancy, and the minimum-size guard") {
    Frame f(64, 64, 1, 0.37f);
    Pyramid p = build_pyramid(f, 3, 0.5);
    REQUIRE(p.levels.size() == 3);
    CHECK(p.levels[0].width == 16);
    CHECK(p.levels[1].width == 32);
    CHECK(p.levels[2].width == 64);
    for (const Frame &lvl : p.levels)
        for (float v : lvl.data)
            CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));

    Pyramid single = build_pyramid(f, 1, 0.5);
    CHECK(single.levels.size() == 1);
    CHECK(testutil::max_abs_diff(single.levels[0], f) == 0.0);

    Pyramid deep = build_pyramid(f, 4, 0.5); // coarsest exactly 8x8: allowed
    CHECK(deep.levels[0].width == 8);
    CHECK_THROWS(build_pyramid(f, 5, 0.5)); // coarsest would drop to 4x4
}

TEST_CASE("upscale_flow: scaling rule and node alignment") {
    FlowField c(16, 16, 2.f, 1.f);
    FlowField up = upscale_flow(c, 32, 32);
    for (size_t i = 0; i < up.pixel_count(); i++) {
        CHECK(up.u[i] == doctest::Approx(4.f));
        CHECK(up.v[i] == doctest::Approx(2.f));
    }

    Rng rng(14);
    FlowField r = testutil::random_flow(8, 8, rng, 2.0);
    FlowField r2 = upscale_flow(r, 16, 16);
    // Sampled back at the source grid nodes the doubled field holds 2x values.
    for (int y = 0; y < 7; y++)
        for (int x = 0; x < 7; x++) {
            CHECK(r2.u[r2.idx(2 * x, 2 * y)] == doctest::Approx(2.f * r.u[r.idx(x, y)]).epsilon(1e-5));
            CHECK(r2.v[r2.idx(2 * x, 2 * y)] == doctest::Approx(2.f * r.v[r.idx(x, y)]).epsilon(1e-5));
        }

    FlowField z(8, 8);
    FlowField zu = upscale_flow(z, 24, 24);
    for (size_t i = 0; i < zu.pixel_count(); i++)
        CHECK(zu.u[i] == 0.f);
    CHECK_THROWS(upscale_flow(c, 8, 8)); // downscale request
}

TEST_CASE("psnr: exact values, infinity sentinel, symmetry") {
    Frame a(10, 10, 1, 0.f), b(10, 10, 1, 0.1f);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6)); // MSE 0.01, up to float storage
    CHECK(psnr(a, a) == std::numeric_limits<double>::infinity());
    Rng rng(15);
    Frame x = testutil::random_frame(10, 10, rng), y = testutil::random_frame(10, 10, rng);
    CHECK(psnr(x, y) == doctest::Approx(psnr(y, x)));

    double mse = 0;
    for (size_t i = 0; i < x.data.size(); i++)
        mse += (x.data[i] - y.data[i]) * static_cast<double>(x.data[i] - y.data[i]);
    mse /= x.data.size();
    CHECK(psnr(x, y) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-7));
    CHECK_THROWS(psnr(a, Frame(10, 9)));
}

TEST_CASE("luminance: Rec.601 weights") {
    Frame rgb(1, 1, 3);
    rgb.at(0, 0, 0) = 1.f;
    rgb.at(0, 0, 1) = 0.5f;
    rgb.at(0, 0, 2) = 0.25f;
    Frame y = luminance(rgb);
    CHECK(y.channels == 1);
    CHECK(y.at(0, 0) == doctest::Approx(0.299 + 0.587 * 0.5 + 0.114 * 0.25));
    Frame gray = testutil::texture(6, 6, 3);
    CHECK(testutil::max_abs_diff(luminance(gray), gray) == 0.0);
}

TEST_CASE("shock_filter: steepens a smeared edge, stays in range, calm on sharp input") {
    // Smeared step: the hard step under a few passes of a 3-tap box, giving
    // the sigmoid profile (with an inflection) that shock filtering restores.
    Frame step(32, 16), soft(32, 16);
    for (int y = 0; y < 16; y++)
        for (int x = 0; x < 32; x++)
            step.at(x, y) = x < 16 ? 0.2f : 0.8f;
    soft = step;
    for (int pass = 0; pass < 4; pass++) {
        Frame next = soft;
        for (int y = 0; y < 16; y++)
            for (int x = 0; x < 32; x++)
                next.at(x, y) = (soft.at_clamped(x - 1, y) + soft.at(x, y) +
                                 soft.at_clamped(x + 1, y)) / 3.f;
        soft = next;
    }
    auto sse = [](const Frame &p, const Frame &q) {
        double s = 0;
        for (size_t i = 0; i < p.data.size(); i++)
            s += (p.data[i] - q.data[i]) * static_cast<double>(p.data[i] - q.data[i]);
        return s;
    };
    Frame sharpened = shock_filter(soft, 2);
    CHECK(sse(sharpened, step) < 0.25 * sse(soft, step));
    for (float v : shock_filter(soft, 8).data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
    // A hard step box-smooths to a locally linear profile with zero curvature
    // at the jump, so it is a fixed point.
    Frame again = shock_filter(step, 4);
    CHECK(testutil::max_abs_diff(again, step) < 1e-4);
    // Zero iterations: identity.
    CHECK(testutil::max_abs_diff(shock_filter(soft, 0), soft) == 0.0);
}

TEST_CASE("resample_bilinear and resample_labels keep content put") {
    Frame f = testutil::texture(16, 16, 4);
    Frame same = resample_bilinear(f, 16, 16);
    CHECK(testutil::max_abs_diff(f, same) < 1e-6);

    LabelMap m(8, 8);
    for (int y = 0; y < 8; y++)
        for (int x = 0; x < 8; x++)
            m.at(x, y) = x < 4 ? 0 : 7;
    LabelMap up = resample_labels(m, 16, 16);
    CHECK(up.width == 16);
    CHECK(up.at(0, 0) == 0);
    CHECK(up.at(15, 15) == 7);
    for (int y = 0; y < 16; y++)
        for (int x = 0; x < 16; x++)
            CHECK((up.at(x, y) == 0 || up.at(x, y) == 7)); // categorical: no invented ids
}
