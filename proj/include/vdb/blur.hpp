#pragma once

#include "vdb/frame.hpp"

#include <cstdint>
#include <vector>

namespace vdb {

/** Quadratic remap of flow magnitude to streak length: t(m) = a m^2 + b m + c. */
struct TrajectoryParams {
    double a = 0.0;
    double b = 1.0;
    double c = 0.0;

    double eval(double mag) const { return a * mag * mag + b * mag + c; }
};

/** Exposure fraction per frame interval; valid range (0, 1]. */
struct DutyCycle {
    double tau = 0.5;
};

enum class KernelMode { LinearSegments, Curved };

struct Vec2 {
    float x = 0.f, y = 0.f;
};

struct KernelSample {
    float dx = 0.f, dy = 0.f;
    float w = 0.f;
};

/** Discrete blur kernel for one pixel: integer-offset taps, weights sum to 1. */
struct PixelKernel {
    std::vector<KernelSample> samples;
};

/** Per-pixel kernels for a whole frame, taps stored back to back (CSR layout). */
struct KernelField {
    int width = 0, height = 0;
    std::vector<std::uint32_t> start; // pixel_count()+1 offsets into taps
    struct Tap {
        std::int16_t dx, dy;
        float w;
    };
    std::vector<Tap> taps;
};

/** f_hat * max(0, t(|f|)); zero vectors stay zero. */
Vec2 remap_flow(Vec2 f, const TrajectoryParams &p);

/**
 * Blur kernel from one pixel's bidirectional flow.
 *
 * fwd is the motion toward the next frame; bwd is the motion arriving from
 * the previous frame (negate an i->i-1 flow before passing it). The support
 * runs from -tau*remap(bwd) through the pixel to +tau*remap(fwd), either as
 * two straight segments of mass 1/2 each or as one quadratic arc through the
 * origin. Samples are splatted bilinearly onto integer offsets and the tap
 * weights renormalized to sum 1.
 */
PixelKernel build_kernel(Vec2 fwd, Vec2 bwd, const TrajectoryParams &pf,
                         const TrajectoryParams &pb, DutyCycle tau, KernelMode mode);

// Pre-splat trajectory sample positions, in traversal order. Test/debug aid.
std::vector<Vec2> kernel_trajectory(Vec2 fwd, Vec2 bwd, const TrajectoryParams &pf,
                                    const TrajectoryParams &pb, DutyCycle tau, KernelMode mode);

KernelField build_kernel_field(const FlowField &fwd, const FlowField &bwd,
                               const TrajectoryParams &pf, const TrajectoryParams &pb,
                               DutyCycle tau, KernelMode mode);

// Per-pixel parameter variant; used by the synthesizer for multi-region scenes.
KernelField build_kernel_field(const FlowField &fwd, const FlowField &bwd,
                               const std::vector<TrajectoryParams> &pf,
                               const std::vector<TrajectoryParams> &pb,
                               DutyCycle tau, KernelMode mode);

/** out(x) = sum_taps w * latent(clamp(x + d)), per channel. */
Frame apply_blur(const Frame &latent, const KernelField &kernels);

/** Exact transpose of apply_blur: scatters w * img(x) onto clamp(x + d). */
Frame apply_blur_adjoint(const Frame &img, const KernelField &kernels);

// Convenience wrappers that build the field on the fly.
Frame apply_blur(const Frame &latent, const FlowField &fwd, const FlowField &bwd,
                 const TrajectoryParams &pf, const TrajectoryParams &pb, DutyCycle tau,
                 KernelMode mode);
Frame apply_blur_adjoint(const Frame &img, const FlowField &fwd, const FlowField &bwd,
                         const TrajectoryParams &pf, const TrajectoryParams &pb, DutyCycle tau,
                         KernelMode mode);

} // namespace vdb
