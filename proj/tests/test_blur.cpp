#include <doctest.h>

#include "helpers.hpp"
#include "vdb/blur.hpp"

#include <cmath>
#include <vector>

using namespace vdb;
using testutil::Rng;

TEST_CASE("remap_flow: hand values, clamp, zero direction") {
    Vec2 f{3.f, 4.f};
    Vec2 r = remap_flow(f, {0, 1, 0});
    CHECK(r.x == doctest::Approx(3.f));
    CHECK(r.y == doctest::Approx(4.f));

    r = remap_flow(f, {0, 0.5, 0});
    CHECK(r.x == doctest::Approx(1.5f));
    CHECK(r.y == doctest::Approx(2.f));

    // |f| = 5 -> t = 0.1*25 + 5 = 7.5, direction (0.6, 0.8).
    r = remap_flow(f, {0.1, 1, 0});
    CHECK(r.x == doctest::Approx(4.5f).epsilon(1e-6));
    CHECK(r.y == doctest::Approx(6.0f).epsilon(1e-6));

    // Negative remapped length clamps to zero motion.
    r = remap_flow(f, {0, -1, 0});
    CHECK(r.x == 0.f);
    CHECK(r.y == 0.f);

    // Zero flow has no direction; stays zero even with c > 0.
    r = remap_flow({0.f, 0.f}, {0, 1, 5});
    CHECK(r.x == 0.f);
    CHECK(r.y == 0.f);
}

TEST_CASE("build_kernel: no motion gives the delta kernel") {
    PixelKernel k = build_kernel({0, 0}, {0, 0}, {0, 1, 0}, {0, 1, 0}, DutyCycle{0.5},
                                 KernelMode::LinearSegments);
    REQUIRE(k.samples.size() == 1);
    CHECK(k.samples[0].dx == 0.f);
    CHECK(k.samples[0].dy == 0.f);
    CHECK(k.samples[0].w == doctest::Approx(1.f));
}

TEST_CASE("build_kernel: symmetric linear streak stays on the x axis") {
    PixelKernel k = build_kernel({4, 0}, {4, 0}, {0, 1, 0}, {0, 1, 0}, DutyCycle{1.0},
                                 KernelMode::LinearSegments);
    double sum = 0;
    for (const auto &s : k.samples) {
        CHECK(s.dy == 0.f);
        CHECK(s.dx >= -4.f);
        CHECK(s.dx <= 4.f);
        CHECK(s.w >= 0.f);
        sum += s.w;
        // Mirror tap with equal weight.
        bool found = false;
        for (const auto &o : k.samples)
            if (o.dx == -s.dx && std::fabs(o.w - s.w) < 1e-6f)
                found = true;
        CHECK(found);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("kernel_trajectory: linear endpoints sit exactly at +-tau * flow") {
    Vec2 fwd{3.f, -2.f}, bwd{1.f, 4.f};
    auto pts = kernel_trajectory(fwd, bwd, {0, 1, 0}, {0, 1, 0}, DutyCycle{0.5},
                                 KernelMode::LinearSegments);
    bool has_fwd_end = false, has_bwd_end = false;
    for (const auto &p : pts) {
        if (p.x == 0.5f * fwd.x && p.y == 0.5f * fwd.y)
            has_fwd_end = true;
        if (p.x == -0.5f * bwd.x && p.y == -0.5f * bwd.y)
            has_bwd_end = true;
        // No sample leaves the segment hull.
        CHECK(p.x * p.x + p.y * p.y <=
              std::max(0.25f * (fwd.x * fwd.x + fwd.y * fwd.y),
                       0.25f * (bwd.x * bwd.x + bwd.y * bwd.y)) + 1e-6f);
    }
    CHECK(has_fwd_end);
    CHECK(has_bwd_end);
}

TEST_CASE("kernel_trajectory: curved samples satisfy the quadratic arc") {
    // rf=(4,0), rb=(0,4), tau=1: q(s) = s*(2,2) + s^2*(2,-2), q(1)=(4,0), q(-1)=(0,-4).
    auto pts =
        kernel_trajectory({4, 0}, {0, 4}, {0, 1, 0}, {0, 1, 0}, DutyCycle{1.0}, KernelMode::Curved);
    REQUIRE(pts.size() >= 3);
    const int n = static_cast<int>(pts.size());
    for (int j = 0; j < n; j++) {
        double s = -1.0 + 2.0 * j / (n - 1);
        CHECK(pts[j].x == doctest::Approx(s * 2 + s * s * 2).epsilon(1e-5));
        CHECK(pts[j].y == doctest::Approx(s * 2 - s * s * 2).epsilon(1e-5));
    }
    CHECK(pts.front().x == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(pts.front().y == doctest::Approx(-4.0).epsilon(1e-6));
    CHECK(pts.back().x == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(pts.back().y == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("kernel weights: normalized and non-negative for random inputs") {
    Rng rng(31);
    for (int trial = 0; trial < 200; trial++) {
        Vec2 fwd{static_cast<float>(rng.uniform(-6, 6)), static_cast<float>(rng.uniform(-6, 6))};
        Vec2 bwd{static_cast<float>(rng.uniform(-6, 6)), static_cast<float>(rng.uniform(-6, 6))};
        TrajectoryParams pf{rng.uniform(-0.05, 0.05), rng.uniform(0.5, 1.5), 0};
        TrajectoryParams pb{rng.uniform(-0.05, 0.05), rng.uniform(0.5, 1.5), 0};
        DutyCycle tau{rng.uniform(0.05, 1.0)};
        KernelMode mode = trial % 2 ? KernelMode::Curved : KernelMode::LinearSegments;
        PixelKernel k = build_kernel(fwd, bwd, pf, pb, tau, mode);
        double sum = 0;
        for (const auto &s : k.samples) {
            CHECK(s.w >= 0.f);
            sum += s.w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("build_kernel input validation") {
    CHECK_THROWS(build_kernel({1, 0}, {0, 0}, {0, 1, 0}, {0, 1, 0}, DutyCycle{0.0},
                              KernelMode::LinearSegments));
    CHECK_THROWS(build_kernel({1, 0}, {0, 0}, {0, 1, 0}, {0, 1, 0}, DutyCycle{1.5},
                              KernelMode::LinearSegments));
    float nan = std::nanf("");
    CHECK_THROWS(build_kernel({nan, 0}, {0, 0}, {0, 1, 0}, {0, 1, 0}, DutyCycle{0.5},
                              KernelMode::LinearSegments));
}

namespace {

// Dense matrix assembled pixel by pixel from build_kernel, clamp rule included.
std::vector<double> dense_operator(const FlowField &fwd, const FlowField &bwd,
                                   const TrajectoryParams &pf, const TrajectoryParams &pb,
                                   DutyCycle tau, KernelMode mode) {
    const int W = fwd.width, H = fwd.height, n = W * H;
    std::vector<double> M(static_cast<size_t>(n) * n, 0.0);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t i = fwd.idx(x, y);
            PixelKernel k = build_kernel({fwd.u[i], fwd.v[i]}, {bwd.u[i], bwd.v[i]}, pf, pb, tau, mode);
            for (const auto &s : k.samples) {
                int tx = std::min(W - 1, std::max(0, x + static_cast<int>(s.dx)));
                int ty = std::min(H - 1, std::max(0, y + static_cast<int>(s.dy)));
                M[i * n + static_cast<size_t>(ty) * W + tx] += s.w;
            }
        }
    return M;
}

} // namespace

TEST_CASE("apply_blur and adjoint match the dense operator on 8x8") {
    const int W = 8, H = 8, n = W * H;
    Rng rng(32);
    for (KernelMode mode : {KernelMode::LinearSegments, KernelMode::Curved}) {
        FlowField fwd = testutil::random_flow(W, H, rng, 2.5);
        FlowField bwd = testutil::random_flow(W, H, rng, 2.5);
        TrajectoryParams pf{0.02, 0.9, 0}, pb{-0.01, 1.1, 0};
        DutyCycle tau{0.7};
        auto M = dense_operator(fwd, bwd, pf, pb, tau, mode);

        Frame l = testutil::random_frame(W, H, rng);
        Frame y = testutil::random_frame(W, H, rng);
        Frame Kl = apply_blur(l, fwd, bwd, pf, pb, tau, mode);
        Frame Kty = apply_blur_adjoint(y, fwd, bwd, pf, pb, tau, mode);
        for (int p = 0; p < n; p++) {
            double fwd_sum = 0, adj_sum = 0;
            for (int q = 0; q < n; q++) {
                fwd_sum += M[static_cast<size_t>(p) * n + q] * l.data[q];
                adj_sum += M[static_cast<size_t>(q) * n + p] * y.data[q]; // transpose row
            }
            CHECK(Kl.data[p] == doctest::Approx(fwd_sum).epsilon(1e-6));
            CHECK(Kty.data[p] == doctest::Approx(adj_sum).epsilon(1e-6));
        }
    }
}

TEST_CASE("adjoint identity <Kl, y> == <l, K^T y> on 16x16") {
    Rng rng(33);
    for (int trial = 0; trial < 5; trial++) {
        FlowField fwd = testutil::random_flow(16, 16, rng, 4.0);
        FlowField bwd = testutil::random_flow(16, 16, rng, 4.0);
        TrajectoryParams pf{rng.uniform(-0.03, 0.03), rng.uniform(0.7, 1.3), 0};
        TrajectoryParams pb{rng.uniform(-0.03, 0.03), rng.uniform(0.7, 1.3), 0};
        DutyCycle tau{rng.uniform(0.3, 1.0)};
        KernelMode mode = trial % 2 ? KernelMode::Curved : KernelMode::LinearSegments;
        Frame l = testutil::random_frame(16, 16, rng);
        Frame y = testutil::random_frame(16, 16, rng);
        Frame Kl = apply_blur(l, fwd, bwd, pf, pb, tau, mode);
        Frame Kt = apply_blur_adjoint(y, fwd, bwd, pf, pb, tau, mode);
        double lhs = testutil::dot(Kl, y), rhs = testutil::dot(l, Kt);
        CHECK(std::fabs(lhs - rhs) / (testutil::norm2(Kl) * testutil::norm2(y)) <= 1e-5);
    }
}

TEST_CASE("apply_blur: linearity, constants, zero flow identity, size checks") {
    Rng rng(34);
    FlowField fwd = testutil::random_flow(12, 10, rng, 3.0);
    FlowField bwd = testutil::random_flow(12, 10, rng, 3.0);
    TrajectoryParams p{0, 1, 0};
    DutyCycle tau{0.5};
    KernelField kf = build_kernel_field(fwd, bwd, p, p, tau, KernelMode::LinearSegments);

    Frame a = testutil::random_frame(12, 10, rng), b = testutil::random_frame(12, 10, rng);
    Frame mix(12, 10);
    for (size_t i = 0; i < mix.data.size(); i++)
        mix.data[i] = 0.3f * a.data[i] + 0.7f * b.data[i];
    Frame Kmix = apply_blur(mix, kf), Ka = apply_blur(a, kf), Kb = apply_blur(b, kf);
    for (size_t i = 0; i < Kmix.data.size(); i++)
        CHECK(Kmix.data[i] == doctest::Approx(0.3f * Ka.data[i] + 0.7f * Kb.data[i]).epsilon(1e-6));

    Frame c(12, 10, 1, 0.42f);
    Frame Kc = apply_blur(c, kf);
    for (float v : Kc.data)
        CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));

    Frame z = apply_blur(a, FlowField(12, 10), FlowField(12, 10), p, p, tau,
                         KernelMode::LinearSegments);
    CHECK(testutil::max_abs_diff(z, a) == 0.0);

    CHECK_THROWS(apply_blur(Frame(5, 5), kf));
    CHECK_THROWS(build_kernel_field(FlowField(4, 4), FlowField(5, 4), p, p, tau,
                                    KernelMode::LinearSegments));
}

TEST_CASE("per-pixel parameter field matches the scalar variant when uniform") {
    Rng rng(35);
    FlowField fwd = testutil::random_flow(9, 9, rng, 3.0);
    FlowField bwd = testutil::random_flow(9, 9, rng, 3.0);
    TrajectoryParams pf{0.01, 1.05, 0}, pb{0, 0.95, 0};
    std::vector<TrajectoryParams> vf(fwd.pixel_count(), pf), vb(fwd.pixel_count(), pb);
    DutyCycle tau{0.6};
    Frame l = testutil::random_frame(9, 9, rng);
    Frame s = apply_blur(l, build_kernel_field(fwd, bwd, pf, pb, tau, KernelMode::Curved));
    Frame v = apply_blur(l, build_kernel_field(fwd, bwd, vf, vb, tau, KernelMode::Curved));
    CHECK(testutil::max_abs_diff(s, v) == 0.0);
    std::vector<TrajectoryParams> short_list(3);
    CHECK_THROWS(build_kernel_field(fwd, bwd, short_list, vb, tau, KernelMode::Curved));
}
