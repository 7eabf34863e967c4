#include <doctest.h>

#include "helpers.hpp"
#include "vdb/energy.hpp"
#include "vdb/flow.hpp"

#include <array>
#include <cmath>
#include <vector>

using namespace vdb;
using testutil::Rng;

namespace {

double mean_epe(const FlowField &f, float gu, float gv) {
    double sum = 0;
    for (size_t i = 0; i < f.pixel_count(); i++)
        sum += std::hypot(f.u[i] - gu, f.v[i] - gv);
    return sum / static_cast<double>(f.pixel_count());
}

// Integer-shifted copy so the correspondence is exact away from the border.
Frame shifted(const Frame &base, int dx, int dy) {
    Frame out(base.width, base.height, base.channels);
    for (int y = 0; y < base.height; y++)
        for (int x = 0; x < base.width; x++)
            for (int c = 0; c < base.channels; c++)
                out.at(x, y, c) = base.at_clamped(x - dx, y - dy, c);
    return out;
}

} // namespace

TEST_CASE("tvl1_flow: identical frames give near-zero flow") {
    Frame a = testutil::texture(48, 48, 101);
    FlowField f = tvl1_flow(a, a);
    CHECK(mean_epe(f, 0, 0) < 0.05);
}

TEST_CASE("tvl1_flow: constant frames give zero flow") {
    Frame a(32, 32, 1, 0.5f), b(32, 32, 1, 0.5f);
    FlowField f = tvl1_flow(a, b);
    CHECK(mean_epe(f, 0, 0) < 1e-6);
}

TEST_CASE("tvl1_flow: recovers an integer translation on texture") {
    Frame a = testutil::texture(64, 64, 102);
    Frame b = shifted(a, 3, 2);
    FlowField f = tvl1_flow(a, b);
    // Flow a->b of a scene moving by (3,2): skip the border band the shift invalidated.
    double sum = 0;
    int count = 0;
    for (int y = 6; y < 58; y++)
        for (int x = 6; x < 58; x++) {
            size_t i = f.idx(x, y);
            sum += std::hypot(f.u[i] - 3.0, f.v[i] - 2.0);
            count++;
        }
    CHECK(sum / count < 0.5);
}

TEST_CASE("tvl1_flow: rejects frames below the minimum size") {
    Frame a(12, 12), b(12, 12);
    CHECK_THROWS(tvl1_flow(a, b));
}

TEST_CASE("fit_affine: exact fits") {
    FlowField c = testutil::constant_flow(24, 24, 2.f, 1.f);
    auto m = fit_affine(c);
    REQUIRE(m.has_value());
    CHECK(m->t[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(m->t[1] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(m->t[2] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(m->t[3] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(m->t[4] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(m->t[5] == doctest::Approx(1.0).epsilon(1e-6));

    FlowField s(24, 24);
    for (int y = 0; y < 24; y++)
        for (int x = 0; x < 24; x++)
            s.u[s.idx(x, y)] = 0.1f * x;
    auto ms = fit_affine(s);
    REQUIRE(ms.has_value());
    CHECK(std::fabs(ms->t[0] - 0.1) < 1e-4);
    CHECK(std::fabs(ms->t[2]) < 1e-3);
}

TEST_CASE("fit_affine: shrugs off sparse outliers") {
    Rng rng(103);
    FlowField f(32, 32);
    AffineModel truth;
    truth.t[0] = 0.02;
    truth.t[1] = -0.01;
    truth.t[2] = 1.5;
    truth.t[4] = 0.03;
    truth.t[5] = -0.8;
    for (int y = 0; y < 32; y++)
        for (int x = 0; x < 32; x++) {
            Vec2 g = truth.eval(x, y);
            size_t i = f.idx(x, y);
            f.u[i] = g.x;
            f.v[i] = g.y;
        }
    // 5% of pixels replaced with garbage.
    for (int k = 0; k < 51; k++) {
        size_t i = static_cast<size_t>(rng.uniform(0, 1023.99));
        f.u[i] = static_cast<float>(rng.uniform(-20, 20));
        f.v[i] = static_cast<float>(rng.uniform(-20, 20));
    }
    auto m = fit_affine(f);
    REQUIRE(m.has_value());
    for (int j = 0; j < 6; j++)
        CHECK(std::fabs(m->t[j] - truth.t[j]) < 0.05);
}

TEST_CASE("fit_affine: too few or collinear pixels yield nullopt") {
    FlowField f = testutil::constant_flow(16, 16, 1.f, 0.f);
    std::vector<std::uint8_t> mask(f.pixel_count(), 0);
    mask[3] = mask[40] = mask[77] = mask[100] = mask[200] = 1; // 5 < 6
    CHECK_FALSE(fit_affine(f, &mask).has_value());

    // One row: x varies, y fixed -> rank-deficient design.
    std::vector<std::uint8_t> row(f.pixel_count(), 0);
    for (int x = 0; x < 16; x++)
        row[f.idx(x, 7)] = 1;
    CHECK_FALSE(fit_affine(f, &row).has_value());
}

TEST_CASE("edge_map: flat, step, and recompute checks") {
    Frame flat(16, 16, 1, 0.3f);
    Frame g = edge_map(flat, 0.1);
    for (float v : g.data)
        CHECK(v == doctest::Approx(1.f));

    Frame step(16, 16);
    for (int y = 0; y < 16; y++)
        for (int x = 8; x < 16; x++)
            step.at(x, y) = 1.f;
    Frame gs = edge_map(step, 0.1);
    CHECK(gs.at(7, 8) == doctest::Approx(std::exp(-10.0)).epsilon(1e-4));
    CHECK(gs.at(2, 8) == doctest::Approx(1.f));

    Rng rng(104);
    Frame noise = testutil::random_frame(20, 14, rng);
    Frame gn = edge_map(noise, 0.25);
    Gradient2 grad = gradient(noise);
    for (size_t i = 0; i < gn.data.size(); i++) {
        double mag = std::hypot(grad.dx.data[i], grad.dy.data[i]);
        CHECK(gn.data[i] == doctest::Approx(std::exp(-mag / 0.25)).epsilon(1e-5));
    }
}

namespace {

struct FlowFixture {
    std::vector<Frame> sharp, blurry;
    FlowSet gt;
    std::vector<std::array<TrajectoryParams, 2>> params;
    DutyCycle tau{0.5};
    EnergyWeights weights;
    int W = 48, H = 48;

    FlowFixture() {
        Frame base = testutil::texture(W, H, 105);
        const int dx = 2, dy = 1, T = 3;
        gt.per_frame.resize(T);
        for (int t = 0; t < T; t++) {
            sharp.push_back(shifted(base, dx * t, dy * t));
            params.push_back({TrajectoryParams{0, 1, 0}, TrajectoryParams{0, 1, 0}});
            if (t + 1 < T)
                gt.put(t, +1, testutil::constant_flow(W, H, dx, dy));
            if (t > 0)
                gt.put(t, -1, testutil::constant_flow(W, H, -dx, -dy));
        }
        for (int t = 0; t < T; t++) {
            auto [kf, kb] = kernel_flow_args(gt, t, W, H);
            blurry.push_back(apply_blur(sharp[t], kf, kb, params[t][0], params[t][1], tau,
                                        KernelMode::LinearSegments));
        }
        weights.window = 1;
    }
};

double set_epe(const FlowSet &flows, const FlowSet &gt) {
    double sum = 0;
    int fields = 0;
    for (int i = 0; i < flows.frames(); i++)
        for (const auto &[n, f] : flows.per_frame[i]) {
            const FlowField &g = gt.get(i, n);
            double acc = 0;
            for (size_t k = 0; k < f.pixel_count(); k++)
                acc += std::hypot(f.u[k] - g.u[k], f.v[k] - g.v[k]);
            sum += acc / static_cast<double>(f.pixel_count());
            fields++;
        }
    return sum / fields;
}

} // namespace

TEST_CASE("refine_flow: ground truth is close to a fixed point") {
    FlowFixture fx;
    FlowRefineOptions opts;
    opts.linearizations = 4;
    std::vector<FlowRefineFieldReport> report;
    FlowSet out = refine_flow(fx.sharp, fx.blurry, fx.gt, nullptr, fx.params, fx.tau,
                              KernelMode::LinearSegments, fx.weights, opts, &report);
    CHECK(set_epe(out, fx.gt) < 0.05);
    REQUIRE(report.size() == 4); // two +1 fields, two -1 fields
    for (const auto &r : report) {
        CHECK(r.refined_energy <= r.input_energy + 1e-9);
        CHECK((r.chosen == 0 || r.chosen == 1));
    }
}

TEST_CASE("refine_flow: pulls a perturbed field back toward the truth") {
    FlowFixture fx;
    FlowSet bad = fx.gt;
    for (auto &per : bad.per_frame)
        for (auto &[n, f] : per)
            for (size_t k = 0; k < f.pixel_count(); k++) {
                f.u[k] += 0.75f;
                f.v[k] -= 0.5f;
            }
    double before = set_epe(bad, fx.gt);
    FlowRefineOptions opts;
    opts.linearizations = 16;
    FlowSet out = refine_flow(fx.sharp, fx.blurry, bad, nullptr, fx.params, fx.tau,
                              KernelMode::LinearSegments, fx.weights, opts);
    double after = set_epe(out, fx.gt);
    CHECK(after < 0.5 * before);
}

TEST_CASE("refine_flow: reseed rescues a structurally wrong start") {
    FlowFixture fx;
    FlowSet wrong = fx.gt;
    for (auto &per : wrong.per_frame)
        for (auto &[n, f] : per)
            for (size_t k = 0; k < f.pixel_count(); k++) {
                f.u[k] = -f.u[k]; // opposite direction; local steps cannot cross this
                f.v[k] = -f.v[k];
            }
    FlowRefineOptions opts;
    opts.linearizations = 4;
    opts.tvl1_reseed = true;
    std::vector<FlowRefineFieldReport> report;
    FlowSet out = refine_flow(fx.sharp, fx.blurry, wrong, nullptr, fx.params, fx.tau,
                              KernelMode::LinearSegments, fx.weights, opts, &report);
    double start = set_epe(wrong, fx.gt);
    CHECK(set_epe(out, fx.gt) < 0.5 * start);
    bool any_reseed = false;
    for (const auto &r : report) {
        if (r.chosen == 2)
            any_reseed = true;
        CHECK(r.reseed_energy > 0);
    }
    CHECK(any_reseed);
}
