#include "vdb/energy.hpp"

#include <cmath>

namespace vdb {

namespace {
constexpr double kCharbEps2 = 1e-6;
const double kCharbZero = std::pow(kCharbEps2, 0.45);

FlowField negated(const FlowField &f) {
    FlowField out = f;
    for (size_t i = 0; i < out.u.size(); i++) {
        out.u[i] = -out.u[i];
        out.v[i] = -out.v[i];
    }
    return out;
}
} // namespace

double charbonnier(double z2) { return std::pow(z2 + kCharbEps2, 0.45) - kCharbZero; }

double blur_data_term(const Frame &latent, const Frame &blurry, const KernelField &kernels,
                      double lambda) {
    if (!latent.same_shape(blurry))
        throw std::invalid_argument("blur_data_term: latent/blurry shapes differ");
    Frame b = apply_blur(latent, kernels);
    Gradient2 gb = gradient(b);
    Gradient2 gy = gradient(blurry);
    double sum = 0.0;
    for (size_t i = 0; i < gb.dx.data.size(); i++) {
        double dx = static_cast<double>(gb.dx.data[i]) - gy.dx.data[i];
        double dy = static_cast<double>(gb.dy.data[i]) - gy.dy.data[i];
        sum += dx * dx + dy * dy;
    }
    return lambda * sum;
}

std::pair<FlowField, FlowField> kernel_flow_args(const FlowSet &flows, int i, int width,
                                                 int height) {
    const FlowField *fwd = flows.has(i, 1) ? &flows.get(i, 1) : nullptr;
    const FlowField *bwd = flows.has(i, -1) ? &flows.get(i, -1) : nullptr;
    FlowField zero(width, height);
    if (fwd && bwd)
        return {*fwd, negated(*bwd)};
    if (fwd && !bwd)
        return {*fwd, *fwd}; // mirror: assume constant velocity at the boundary
    if (!fwd && bwd) {
        FlowField n = negated(*bwd);
        return {n, n};
    }
    return {zero, zero};
}

AffineModel segment_affine(const FlowField &flow, const std::vector<std::uint8_t> *mask) {
    if (auto m = fit_affine(flow, mask))
        return *m;
    // Degenerate segment: fall back to the mean displacement.
    double su = 0, sv = 0;
    size_t n = 0;
    for (size_t i = 0; i < flow.u.size(); i++) {
        if (mask && !(*mask)[i])
            continue;
        su += flow.u[i];
        sv += flow.v[i];
        n++;
    }
    AffineModel m;
    if (n > 0) {
        m.t[2] = su / n;
        m.t[5] = sv / n;
    }
    return m;
}

EnergyBreakdown energy_total(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                             const FlowSet &flows, const std::vector<LabelMap> *labels,
                             const std::vector<std::array<TrajectoryParams, 2>> &params,
                             DutyCycle tau, KernelMode mode, const EnergyWeights &w) {
    const int F = static_cast<int>(latents.size());
    if (static_cast<int>(blurry.size()) != F || static_cast<int>(params.size()) != F)
        throw std::invalid_argument("energy_total: window sizes differ");
    if (labels && static_cast<int>(labels->size()) != F)
        throw std::invalid_argument("energy_total: label count differs");
    EnergyBreakdown e;
    if (F == 0)
        return e;
    const int W = latents[0].width, H = latents[0].height;

    for (int i = 0; i < F; i++) {
        auto [fa, ba] = kernel_flow_args(flows, i, W, H);
        KernelField kf = build_kernel_field(fa, ba, params[i][0], params[i][1], tau, mode);
        e.data += blur_data_term(latents[i], blurry[i], kf, w.lambda);

        e.param_reg += w.beta * (params[i][0].a * params[i][0].a + params[i][1].a * params[i][1].a);
        double dbf = params[i][0].b - w.prior_center, dbb = params[i][1].b - w.prior_center;
        e.param_reg += w.gamma * (dbf * dbf + dbb * dbb);

        Gradient2 gl = gradient(latents[i]);
        for (size_t p = 0; p < gl.dx.data.size(); p++)
            e.tv_latent += std::sqrt(static_cast<double>(gl.dx.data[p]) * gl.dx.data[p] +
                                     static_cast<double>(gl.dy.data[p]) * gl.dy.data[p]);

        Frame g = edge_map(latents[i], w.eta);
        const LabelMap *lab = labels ? &(*labels)[i] : nullptr;

        if (i < flows.frames())
            for (const auto &[n, f] : flows.per_frame[i]) {
                // Robust affine prior, fit per segment of this frame's labels.
                std::vector<int> ids;
                if (lab) {
                    std::array<bool, 256> seen{};
                    for (std::uint8_t l : lab->labels)
                        seen[l] = true;
                    for (int id = 0; id < 256; id++)
                        if (seen[id])
                            ids.push_back(id);
                } else {
                    ids.push_back(-1);
                }
                for (int id : ids) {
                    std::vector<std::uint8_t> mask;
                    const std::vector<std::uint8_t> *mp = nullptr;
                    if (id >= 0) {
                        mask.resize(f.pixel_count());
                        for (size_t p = 0; p < mask.size(); p++)
                            mask[p] = lab->labels[p] == id;
                        mp = &mask;
                    }
                    AffineModel th = segment_affine(f, mp);
                    for (int y = 0; y < H; y++)
                        for (int x = 0; x < W; x++) {
                            size_t p = f.idx(x, y);
                            if (mp && !mask[p])
                                continue;
                            Vec2 pred = th.eval(x, y);
                            double ru = f.u[p] - pred.x, rv = f.v[p] - pred.y;
                            e.motion_affine += charbonnier(ru * ru + rv * rv);
                        }
                }
                // Intra-segment quadratic smoothness over ordered 4-neighbor pairs.
                for (int y = 0; y < H; y++)
                    for (int x = 0; x < W; x++) {
                        size_t p = f.idx(x, y);
                        const int nx[4] = {x + 1, x - 1, x, x};
                        const int ny[4] = {y, y, y + 1, y - 1};
                        for (int k = 0; k < 4; k++) {
                            if (nx[k] < 0 || nx[k] >= W || ny[k] < 0 || ny[k] >= H)
                                continue;
                            size_t q = f.idx(nx[k], ny[k]);
                            if (lab && lab->labels[p] != lab->labels[q])
                                continue;
                            double du = f.u[p] - f.u[q], dv = f.v[p] - f.v[q];
                            e.motion_smooth += du * du + dv * dv;
                        }
                    }
                // Edge-weighted total variation of the flow.
                for (int y = 0; y < H; y++)
                    for (int x = 0; x < W; x++) {
                        size_t p = f.idx(x, y);
                        double ux = x + 1 < W ? f.u[p + 1] - f.u[p] : 0;
                        double uy = y + 1 < H ? f.u[p + W] - f.u[p] : 0;
                        double vx = x + 1 < W ? f.v[p + 1] - f.v[p] : 0;
                        double vy = y + 1 < H ? f.v[p + W] - f.v[p] : 0;
                        e.tv_flow += g.data[p] * (std::sqrt(ux * ux + uy * uy) +
                                                  std::sqrt(vx * vx + vy * vy));
                    }
                // Temporal brightness constancy along this flow.
                int j = i + n;
                if (j >= 0 && j < F) {
                    WarpResult wr = warp(latents[j], f);
                    for (int y = 0; y < H; y++)
                        for (int x = 0; x < W; x++) {
                            size_t p = f.idx(x, y);
                            if (!wr.in_bounds[p])
                                continue;
                            for (int c = 0; c < latents[i].channels; c++)
                                e.temporal_brightness +=
                                    w.mu * std::fabs(latents[i].at(x, y, c) - wr.frame.at(x, y, c));
                        }
                    if (labels) {
                        const LabelMap &lj = (*labels)[j];
                        for (int y = 0; y < H; y++)
                            for (int x = 0; x < W; x++) {
                                size_t p = f.idx(x, y);
                                int tx = static_cast<int>(std::lround(x + f.u[p]));
                                int ty = static_cast<int>(std::lround(y + f.v[p]));
                                if (tx < 0 || tx >= W || ty < 0 || ty >= H)
                                    continue;
                                if (lab->labels[p] != lj.at(tx, ty))
                                    e.temporal_labels += w.mu;
                            }
                    }
                }
            }

        // Pairwise Potts term on the frame's own labels.
        if (lab) {
            Frame lum = luminance(latents[i]);
            double inv_s2 = 1.0 / (w.sigma * w.sigma);
            int R = w.potts_radius;
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    std::uint8_t me = lab->at(x, y);
                    for (int dy = -R; dy <= R; dy++)
                        for (int dx = -R; dx <= R; dx++) {
                            if ((dx == 0 && dy == 0) || dx * dx + dy * dy > R * R)
                                continue;
                            int rx = x + dx, ry = y + dy;
                            if (rx < 0 || rx >= W || ry < 0 || ry >= H)
                                continue;
                            if (lab->at(rx, ry) == me)
                                continue;
                            double dl = 255.0 * (lum.at(x, y) - lum.at(rx, ry));
                            e.potts += std::exp(-(dx * dx + dy * dy + dl * dl) * inv_s2);
                        }
                }
        }
    }
    return e;
}

} // namespace vdb
