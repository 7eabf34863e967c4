#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdb {

/** Planar-interleaved float image, values nominally in [0,1], row major. */
struct Frame {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Frame() = default;
    Frame(int w, int h, int c = 1, float fill = 0.f)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {
        if (w <= 0 || h <= 0 || c <= 0)
            throw std::invalid_argument("Frame: non-positive dimensions");
    }

    float &at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    // Clamp-to-edge access; the boundary rule everywhere in this codebase.
    float at_clamped(int x, int y, int c = 0) const {
        x = x < 0 ? 0 : (x >= width ? width - 1 : x);
        y = y < 0 ? 0 : (y >= height ? height - 1 : y);
        return at(x, y, c);
    }
    bool empty() const { return data.empty(); }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Frame &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/** Dense per-pixel displacement field tagged with its (source, target) frame pair. */
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u, v;
    int src = -1;
    int dst = -1;

    FlowField() = default;
    FlowField(int w, int h, float fu = 0.f, float fv = 0.f)
        : width(w), height(h), u(static_cast<size_t>(w) * h, fu),
          v(static_cast<size_t>(w) * h, fv) {}

    size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Label id reserved for out-of-frame temporal references; never stored in a map.
constexpr std::uint8_t kUnknownLabel = 255;

/** Per-pixel class ids. Ids index into a sequence-level palette. */
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), labels(static_cast<size_t>(w) * h, fill) {}

    std::uint8_t &at(int x, int y) { return labels[static_cast<size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return labels[static_cast<size_t>(y) * width + x]; }
    std::uint8_t at_clamped(int x, int y) const {
        x = x < 0 ? 0 : (x >= width ? width - 1 : x);
        y = y < 0 ? 0 : (y >= height ? height - 1 : y);
        return at(x, y);
    }
};

/** Image stack ordered coarsest first; each finer level is 1/scale larger. */
struct Pyramid {
    std::vector<Frame> levels;
    double scale = 0.5;
};

struct Gradient2 {
    Frame dx, dy;
};

struct WarpResult {
    Frame frame;
    // 1 where the sample point fell inside the source rectangle, else 0.
    std::vector<std::uint8_t> in_bounds;
};

/** Forward differences, last column/row zero. One gx/gy plane per channel. */
Gradient2 gradient(const Frame &f);

// Adjoint of gradient(): consumes one (gx, gy) pair per channel.
Frame gradient_adjoint(const Frame &gx, const Frame &gy);

float sample_bilinear(const Frame &f, float x, float y, int c = 0);

/** Backward warp by bilinear sampling at x + flow(x), clamp-to-edge. */
WarpResult warp(const Frame &f, const FlowField &flow);

/** Low-pass (5-tap Gaussian, sigma = 0.8/scale) then bilinear resample per level. */
Pyramid build_pyramid(const Frame &f, int num_levels, double scale_factor);

Frame resample_bilinear(const Frame &f, int new_w, int new_h);

LabelMap resample_labels(const LabelMap &m, int new_w, int new_h);

/** Bilinear flow upsample with vectors scaled by the size ratio per axis. */
FlowField upscale_flow(const FlowField &f, int new_w, int new_h);

/**
 * Osher-Rudin shock filter: l -= dt * sign(smoothed laplacian) * |grad l|,
 * clamped to [0,1]. Steepens smeared edges toward steps; near-idempotent on
 * images that are already sharp. The sign field uses a 3x3 box smooth of the
 * current iterate so single-pixel noise does not flip it.
 */
Frame shock_filter(const Frame &f, int iterations, float dt = 0.7f);

/** 10*log10(1/MSE) over all pixels and channels; +inf for identical images. */
double psnr(const Frame &a, const Frame &b);

// Rec.601 luma; used wherever flow, labels, or kernels need one channel.
Frame luminance(const Frame &f);

} // namespace vdb
