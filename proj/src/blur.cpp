#include "vdb/blur.hpp"

#include <algorithm>
#include <cmath>

namespace vdb {

namespace {

void check_tau(DutyCycle tau) {
    if (!(tau.tau > 0.0 && tau.tau <= 1.0))
        throw std::invalid_argument("duty cycle must lie in (0, 1]");
}

void check_finite(Vec2 f, const char *what) {
    if (!std::isfinite(f.x) || !std::isfinite(f.y))
        throw std::invalid_argument(std::string("non-finite flow in ") + what);
}

struct RawSample {
    float x, y, w;
};

// Trapezoid sampling of a straight segment from the origin to `end` carrying
// `mass` uniformly along its length. Segments under one pixel collapse onto
// their midpoint so kernels degrade to a delta as motion vanishes.
void sample_segment(Vec2 end, float mass, std::vector<RawSample> &out) {
    float len = std::sqrt(end.x * end.x + end.y * end.y);
    if (len < 1.f) {
        out.push_back({0.5f * end.x, 0.5f * end.y, mass});
        return;
    }
    int n = std::max(3, static_cast<int>(std::ceil(2.f * len)) + 1);
    float base = mass / (n - 1);
    for (int j = 0; j < n; j++) {
        float t = static_cast<float>(j) / (n - 1);
        float w = (j == 0 || j == n - 1) ? 0.5f * base : base;
        out.push_back({end.x * t, end.y * t, w});
    }
}

// Quadratic arc q(s) = s*m + s^2*n over s in [-tau, tau], endpoints
// q(tau) = tau*r_fwd and q(-tau) = -tau*r_bwd, mass 1 uniform in s.
void sample_arc(Vec2 rf, Vec2 rb, double tau, std::vector<RawSample> &out) {
    double mx = 0.5 * (rf.x + rb.x), my = 0.5 * (rf.y + rb.y);
    double nx = (rf.x - rb.x) / (2.0 * tau), ny = (rf.y - rb.y) / (2.0 * tau);
    auto q = [&](double s) {
        return Vec2{static_cast<float>(s * mx + s * s * nx), static_cast<float>(s * my + s * s * ny)};
    };
    double arc = 0.0;
    Vec2 prev = q(-tau);
    for (int j = 1; j <= 64; j++) {
        Vec2 cur = q(-tau + 2.0 * tau * j / 64.0);
        arc += std::hypot(cur.x - prev.x, cur.y - prev.y);
        prev = cur;
    }
    int n = std::max(3, static_cast<int>(std::ceil(2.0 * arc)) + 1);
    for (int j = 0; j < n; j++) {
        Vec2 p = q(-tau + 2.0 * tau * j / (n - 1));
        float w = ((j == 0 || j == n - 1) ? 0.5f : 1.f) / (n - 1);
        out.push_back({p.x, p.y, w});
    }
}

void raw_samples(Vec2 fwd, Vec2 bwd, const TrajectoryParams &pf, const TrajectoryParams &pb,
                 DutyCycle tau, KernelMode mode, std::vector<RawSample> &out) {
    out.clear();
    Vec2 rf = remap_flow(fwd, pf);
    Vec2 rb = remap_flow(bwd, pb);
    float t = static_cast<float>(tau.tau);
    if (mode == KernelMode::LinearSegments) {
        sample_segment({t * rf.x, t * rf.y}, 0.5f, out);
        sample_segment({-t * rb.x, -t * rb.y}, 0.5f, out);
    } else {
        sample_arc(rf, rb, tau.tau, out);
    }
}

// Scratch for splatting one pixel's samples onto an integer grid without
// per-pixel allocation. Only touched cells are written and re-zeroed.
struct Splatter {
    std::vector<float> acc;
    std::vector<int> touched;
    int min_x = 0, min_y = 0, bw = 0, bh = 0;

    void splat(const std::vector<RawSample> &samples) {
        float lo_x = 0.f, hi_x = 0.f, lo_y = 0.f, hi_y = 0.f;
        for (const auto &s : samples) {
            lo_x = std::min(lo_x, s.x);
            hi_x = std::max(hi_x, s.x);
            lo_y = std::min(lo_y, s.y);
            hi_y = std::max(hi_y, s.y);
        }
        min_x = static_cast<int>(std::floor(lo_x));
        min_y = static_cast<int>(std::floor(lo_y));
        bw = static_cast<int>(std::floor(hi_x)) - min_x + 2;
        bh = static_cast<int>(std::floor(hi_y)) - min_y + 2;
        if (static_cast<size_t>(bw) * bh > acc.size())
            acc.assign(static_cast<size_t>(bw) * bh, 0.f);
        touched.clear();
        for (const auto &s : samples) {
            int x0 = static_cast<int>(std::floor(s.x));
            int y0 = static_cast<int>(std::floor(s.y));
            float fx = s.x - x0, fy = s.y - y0;
            int base = (y0 - min_y) * bw + (x0 - min_x);
            const float wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            const int offs[4] = {base, base + 1, base + bw, base + bw + 1};
            for (int k = 0; k < 4; k++) {
                if (wts[k] == 0.f)
                    continue;
                if (acc[offs[k]] == 0.f)
                    touched.push_back(offs[k]);
                acc[offs[k]] += s.w * wts[k];
            }
        }
        std::sort(touched.begin(), touched.end());
    }

    template <typename Emit> void drain(Emit &&emit) {
        float sum = 0.f;
        for (int idx : touched)
            sum += acc[idx];
        float norm = sum > 0.f ? 1.f / sum : 0.f;
        for (int idx : touched) {
            emit(min_x + idx % bw, min_y + idx / bw, acc[idx] * norm);
            acc[idx] = 0.f;
        }
    }
};

template <typename ParamsAt>
KernelField build_field_impl(const FlowField &fwd, const FlowField &bwd, ParamsAt &&params_at,
                             DutyCycle tau, KernelMode mode) {
    check_tau(tau);
    if (fwd.width != bwd.width || fwd.height != bwd.height)
        throw std::invalid_argument("build_kernel_field: flow dimensions differ");
    KernelField kf;
    kf.width = fwd.width;
    kf.height = fwd.height;
    kf.start.reserve(fwd.pixel_count() + 1);
    kf.start.push_back(0);
    std::vector<RawSample> samples;
    Splatter sp;
    for (size_t i = 0; i < fwd.pixel_count(); i++) {
        Vec2 ff{fwd.u[i], fwd.v[i]}, fb{bwd.u[i], bwd.v[i]};
        check_finite(ff, "forward flow");
        check_finite(fb, "backward flow");
        auto [pf, pb] = params_at(i);
        raw_samples(ff, fb, pf, pb, tau, mode, samples);
        sp.splat(samples);
        sp.drain([&](int dx, int dy, float w) {
            kf.taps.push_back({static_cast<std::int16_t>(dx), static_cast<std::int16_t>(dy), w});
        });
        kf.start.push_back(static_cast<std::uint32_t>(kf.taps.size()));
    }
    return kf;
}

} // namespace

Vec2 remap_flow(Vec2 f, const TrajectoryParams &p) {
    float mag = std::sqrt(f.x * f.x + f.y * f.y);
    if (mag == 0.f)
        return {0.f, 0.f};
    float t = static_cast<float>(std::max(0.0, p.eval(mag)));
    return {f.x / mag * t, f.y / mag * t};
}

PixelKernel build_kernel(Vec2 fwd, Vec2 bwd, const TrajectoryParams &pf,
                         const TrajectoryParams &pb, DutyCycle tau, KernelMode mode) {
    check_tau(tau);
    check_finite(fwd, "forward flow");
    check_finite(bwd, "backward flow");
    std::vector<RawSample> samples;
    raw_samples(fwd, bwd, pf, pb, tau, mode, samples);
    Splatter sp;
    sp.splat(samples);
    PixelKernel k;
    sp.drain([&](int dx, int dy, float w) {
        k.samples.push_back({static_cast<float>(dx), static_cast<float>(dy), w});
    });
    return k;
}

std::vector<Vec2> kernel_trajectory(Vec2 fwd, Vec2 bwd, const TrajectoryParams &pf,
                                    const TrajectoryParams &pb, DutyCycle tau, KernelMode mode) {
    check_tau(tau);
    std::vector<RawSample> samples;
    raw_samples(fwd, bwd, pf, pb, tau, mode, samples);
    std::vector<Vec2> pts;
    pts.reserve(samples.size());
    for (const auto &s : samples)
        pts.push_back({s.x, s.y});
    return pts;
}

KernelField build_kernel_field(const FlowField &fwd, const FlowField &bwd,
                               const TrajectoryParams &pf, const TrajectoryParams &pb,
                               DutyCycle tau, KernelMode mode) {
    return build_field_impl(
        fwd, bwd, [&](size_t) { return std::pair<TrajectoryParams, TrajectoryParams>{pf, pb}; }, tau,
        mode);
}

KernelField build_kernel_field(const FlowField &fwd, const FlowField &bwd,
                               const std::vector<TrajectoryParams> &pf,
                               const std::vector<TrajectoryParams> &pb, DutyCycle tau,
                               KernelMode mode) {
    if (pf.size() != fwd.pixel_count() || pb.size() != fwd.pixel_count())
        throw std::invalid_argument("build_kernel_field: per-pixel params size mismatch");
    return build_field_impl(
        fwd, bwd,
        [&](size_t i) { return std::pair<TrajectoryParams, TrajectoryParams>{pf[i], pb[i]}; }, tau,
        mode);
}

Frame apply_blur(const Frame &latent, const KernelField &kernels) {
    if (latent.width != kernels.width || latent.height != kernels.height)
        throw std::invalid_argument("apply_blur: kernel field does not match frame");
    Frame out(latent.width, latent.height, latent.channels);
    for (int y = 0; y < latent.height; y++)
        for (int x = 0; x < latent.width; x++) {
            size_t i = static_cast<size_t>(y) * latent.width + x;
            for (int c = 0; c < latent.channels; c++) {
                float acc = 0.f;
                for (std::uint32_t t = kernels.start[i]; t < kernels.start[i + 1]; t++) {
                    const auto &tap = kernels.taps[t];
                    acc += tap.w * latent.at_clamped(x + tap.dx, y + tap.dy, c);
                }
                out.at(x, y, c) = acc;
            }
        }
    return out;
}

Frame apply_blur_adjoint(const Frame &img, const KernelField &kernels) {
    if (img.width != kernels.width || img.height != kernels.height)
        throw std::invalid_argument("apply_blur_adjoint: kernel field does not match frame");
    Frame out(img.width, img.height, img.channels, 0.f);
    int w = img.width, h = img.height;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            size_t i = static_cast<size_t>(y) * w + x;
            for (std::uint32_t t = kernels.start[i]; t < kernels.start[i + 1]; t++) {
                const auto &tap = kernels.taps[t];
                int tx = std::clamp(x + tap.dx, 0, w - 1);
                int ty = std::clamp(y + tap.dy, 0, h - 1);
                for (int c = 0; c < img.channels; c++)
                    out.at(tx, ty, c) += tap.w * img.at(x, y, c);
            }
        }
    return out;
}

Frame apply_blur(const Frame &latent, const FlowField &fwd, const FlowField &bwd,
                 const TrajectoryParams &pf, const TrajectoryParams &pb, DutyCycle tau,
                 KernelMode mode) {
    return apply_blur(latent, build_kernel_field(fwd, bwd, pf, pb, tau, mode));
}

Frame apply_blur_adjoint(const Frame &img, const FlowField &fwd, const FlowField &bwd,
                         const TrajectoryParams &pf, const TrajectoryParams &pb, DutyCycle tau,
                         KernelMode mode) {
    return apply_blur_adjoint(img, build_kernel_field(fwd, bwd, pf, pb, tau, mode));
}

} // namespace vdb
