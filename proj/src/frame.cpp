#include "vdb/frame.hpp"

#include <algorithm>
#include <cmath>

namespace vdb {

Gradient2 gradient(const Frame &f) {
    Gradient2 g{Frame(f.width, f.height, f.channels), Frame(f.width, f.height, f.channels)};
    for (int c = 0; c < f.channels; c++)
        for (int y = 0; y < f.height; y++)
            for (int x = 0; x < f.width; x++) {
                g.dx.at(x, y, c) = x + 1 < f.width ? f.at(x + 1, y, c) - f.at(x, y, c) : 0.f;
                g.dy.at(x, y, c) = y + 1 < f.height ? f.at(x, y + 1, c) - f.at(x, y, c) : 0.f;
            }
    return g;
}

Frame gradient_adjoint(const Frame &gx, const Frame &gy) {
    if (!gx.same_shape(gy))
        throw std::invalid_argument("gradient_adjoint: shape mismatch");
    Frame out(gx.width, gx.height, gx.channels, 0.f);
    // Transpose of forward differences with zeroed last column/row.
    for (int c = 0; c < gx.channels; c++)
        for (int y = 0; y < gx.height; y++)
            for (int x = 0; x < gx.width; x++) {
                if (x + 1 < gx.width) {
                    out.at(x, y, c) -= gx.at(x, y, c);
                    out.at(x + 1, y, c) += gx.at(x, y, c);
                }
                if (y + 1 < gx.height) {
                    out.at(x, y, c) -= gy.at(x, y, c);
                    out.at(x, y + 1, c) += gy.at(x, y, c);
                }
            }
    return out;
}

float sample_bilinear(const Frame &f, float x, float y, int c) {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    float fx = x - x0, fy = y - y0;
    float v00 = f.at_clamped(x0, y0, c), v10 = f.at_clamped(x0 + 1, y0, c);
    float v01 = f.at_clamped(x0, y0 + 1, c), v11 = f.at_clamped(x0 + 1, y0 + 1, c);
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11);
}

WarpResult warp(const Frame &f, const FlowField &flow) {
    if (f.width != flow.width || f.height != flow.height)
        throw std::invalid_argument("warp: flow dimensions do not match frame");
    WarpResult r{Frame(f.width, f.height, f.channels), std::vector<std::uint8_t>(f.pixel_count(), 0)};
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++) {
            size_t i = flow.idx(x, y);
            float sx = x + flow.u[i];
            float sy = y + flow.v[i];
            r.in_bounds[i] = sx >= 0.f && sx <= f.width - 1.f && sy >= 0.f && sy <= f.height - 1.f;
            for (int c = 0; c < f.channels; c++)
                r.frame.at(x, y, c) = sample_bilinear(f, sx, sy, c);
        }
    return r;
}

Frame resample_bilinear(const Frame &f, int new_w, int new_h) {
    if (new_w <= 0 || new_h <= 0)
        throw std::invalid_argument("resample_bilinear: bad target size");
    Frame out(new_w, new_h, f.channels);
    // Corner-anchored mapping so integer upscales hit source nodes exactly.
    float rx = static_cast<float>(f.width) / new_w;
    float ry = static_cast<float>(f.height) / new_h;
    for (int y = 0; y < new_h; y++)
        for (int x = 0; x < new_w; x++)
            for (int c = 0; c < f.channels; c++)
                out.at(x, y, c) = sample_bilinear(f, x * rx, y * ry, c);
    return out;
}

LabelMap resample_labels(const LabelMap &m, int new_w, int new_h) {
    LabelMap out(new_w, new_h);
    float rx = static_cast<float>(m.width) / new_w;
    float ry = static_cast<float>(m.height) / new_h;
    for (int y = 0; y < new_h; y++)
        for (int x = 0; x < new_w; x++)
            out.at(x, y) = m.at_clamped(static_cast<int>(std::lround(x * rx)),
                                        static_cast<int>(std::lround(y * ry)));
    return out;
}

static Frame gaussian5(const Frame &f, double sigma) {
    float k[5];
    float sum = 0.f;
    for (int i = -2; i <= 2; i++) {
        k[i + 2] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        sum += k[i + 2];
    }
    for (float &w : k)
        w /= sum;
    Frame tmp(f.width, f.height, f.channels), out(f.width, f.height, f.channels);
    for (int c = 0; c < f.channels; c++) {
        for (int y = 0; y < f.height; y++)
            for (int x = 0; x < f.width; x++) {
                float acc = 0.f;
                for (int i = -2; i <= 2; i++)
                    acc += k[i + 2] * f.at_clamped(x + i, y, c);
                tmp.at(x, y, c) = acc;
            }
        for (int y = 0; y < f.height; y++)
            for (int x = 0; x < f.width; x++) {
                float acc = 0.f;
                for (int i = -2; i <= 2; i++)
                    acc += k[i + 2] * tmp.at_clamped(x, y + i, c);
                out.at(x, y, c) = acc;
            }
    }
    return out;
}

Pyramid build_pyramid(const Frame &f, int num_levels, double scale_factor) {
    if (num_levels < 1)
        throw std::invalid_argument("build_pyramid: need at least one level");
    if (!(scale_factor > 0.0 && scale_factor < 1.0))
        throw std::invalid_argument("build_pyramid: scale factor must be in (0,1)");
    std::vector<Frame> fine_first;
    fine_first.push_back(f);
    for (int l = 1; l < num_levels; l++) {
        const Frame &prev = fine_first.back();
        int w = static_cast<int>(std::ceil(prev.width * scale_factor));
        int h = static_cast<int>(std::ceil(prev.height * scale_factor));
        if (w < 8 || h < 8)
            throw std::invalid_argument("build_pyramid: coarsest level would drop below 8x8");
        fine_first.push_back(resample_bilinear(gaussian5(prev, 0.8 / scale_factor), w, h));
    }
    Pyramid p;
    p.scale = scale_factor;
    p.levels.assign(fine_first.rbegin(), fine_first.rend());
    return p;
}

FlowField upscale_flow(const FlowField &f, int new_w, int new_h) {
    if (new_w < f.width || new_h < f.height)
        throw std::invalid_argument("upscale_flow: target size is smaller than the source");
    FlowField out(new_w, new_h);
    out.src = f.src;
    out.dst = f.dst;
    float rx = static_cast<float>(f.width) / new_w;
    float ry = static_cast<float>(f.height) / new_h;
    float su = static_cast<float>(new_w) / f.width;
    float sv = static_cast<float>(new_h) / f.height;
    Frame uf(f.width, f.height, 1), vf(f.width, f.height, 1);
    std::copy(f.u.begin(), f.u.end(), uf.data.begin());
    std::copy(f.v.begin(), f.v.end(), vf.data.begin());
    for (int y = 0; y < new_h; y++)
        for (int x = 0; x < new_w; x++) {
            size_t i = out.idx(x, y);
            out.u[i] = sample_bilinear(uf, x * rx, y * ry) * su;
            out.v[i] = sample_bilinear(vf, x * rx, y * ry) * sv;
        }
    return out;
}

Frame shock_filter(const Frame &f, int iterations, float dt) {
    Frame l = f;
    const int W = l.width, H = l.height, C = l.channels;
    Frame sm(W, H, C);
    for (int it = 0; it < iterations; it++) {
        for (int c = 0; c < C; c++)
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    float s = 0.f;
                    for (int dy = -1; dy <= 1; dy++)
                        for (int dx = -1; dx <= 1; dx++)
                            s += l.at_clamped(x + dx, y + dy, c);
                    sm.at(x, y, c) = s / 9.f;
                }
        Frame next = l;
        for (int c = 0; c < C; c++)
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    float lap = sm.at_clamped(x + 1, y, c) + sm.at_clamped(x - 1, y, c) +
                                sm.at_clamped(x, y + 1, c) + sm.at_clamped(x, y - 1, c) -
                                4.f * sm.at(x, y, c);
                    float gx = 0.5f * (l.at_clamped(x + 1, y, c) - l.at_clamped(x - 1, y, c));
                    float gy = 0.5f * (l.at_clamped(x, y + 1, c) - l.at_clamped(x, y - 1, c));
                    float g = std::sqrt(gx * gx + gy * gy);
                    // Deadzone: rounding residue in a flat or linear profile
                    // must not read as curvature, or sharp steps would erode.
                    float sgn = lap > 1e-6f ? 1.f : (lap < -1e-6f ? -1.f : 0.f);
                    next.at(x, y, c) = std::clamp(l.at(x, y, c) - dt * sgn * g, 0.f, 1.f);
                }
        l = std::move(next);
    }
    return l;
}

double psnr(const Frame &a, const Frame &b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); i++) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

Frame luminance(const Frame &f) {
    if (f.channels == 1)
        return f;
    if (f.channels < 3)
        throw std::invalid_argument("luminance: expected 1 or >=3 channels");
    Frame out(f.width, f.height, 1);
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++)
            out.at(x, y) = 0.299f * f.at(x, y, 0) + 0.587f * f.at(x, y, 1) + 0.114f * f.at(x, y, 2);
    return out;
}

} // namespace vdb
