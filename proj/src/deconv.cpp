#include "vdb/deconv.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace vdb {

namespace {

// Bilinear gather fixed by one flow field, with its exact scatter adjoint.
struct WarpOp {
    int n = 0; // neighbor offset
    std::vector<std::array<int, 4>> idx;
    std::vector<std::array<float, 4>> wgt;
    std::vector<std::uint8_t> mask; // 0 where the sample point left the frame

    void build(const FlowField &f) {
        size_t np = f.pixel_count();
        idx.resize(np);
        wgt.resize(np);
        mask.resize(np);
        int W = f.width, H = f.height;
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                size_t p = f.idx(x, y);
                float sx = x + f.u[p], sy = y + f.v[p];
                mask[p] = sx >= 0.f && sx <= W - 1.f && sy >= 0.f && sy <= H - 1.f;
                int x0 = static_cast<int>(std::floor(sx));
                int y0 = static_cast<int>(std::floor(sy));
                float fx = sx - x0, fy = sy - y0;
                int x0c = std::clamp(x0, 0, W - 1), x1c = std::clamp(x0 + 1, 0, W - 1);
                int y0c = std::clamp(y0, 0, H - 1), y1c = std::clamp(y0 + 1, 0, H - 1);
                idx[p] = {y0c * W + x0c, y0c * W + x1c, y1c * W + x0c, y1c * W + x1c};
                wgt[p] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            }
    }

    void gather(const float *src, float *dst) const {
        for (size_t p = 0; p < idx.size(); p++)
            dst[p] = wgt[p][0] * src[idx[p][0]] + wgt[p][1] * src[idx[p][1]] +
                     wgt[p][2] * src[idx[p][2]] + wgt[p][3] * src[idx[p][3]];
    }

    void scatter_add(const float *src, float *dst) const {
        for (size_t p = 0; p < idx.size(); p++)
            for (int k = 0; k < 4; k++)
                dst[idx[p][k]] += wgt[p][k] * src[p];
    }
};

struct Plane {
    std::vector<float> v;
    explicit Plane(size_t n = 0) : v(n, 0.f) {}
};

// Forward differences on a flat plane, matching gradient()/gradient_adjoint().
void grad_plane(const float *src, float *gx, float *gy, int W, int H) {
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t p = static_cast<size_t>(y) * W + x;
            gx[p] = x + 1 < W ? src[p + 1] - src[p] : 0.f;
            gy[p] = y + 1 < H ? src[p + W] - src[p] : 0.f;
        }
}

void grad_adjoint_plane(const float *gx, const float *gy, float *out, int W, int H) {
    std::fill(out, out + static_cast<size_t>(W) * H, 0.f);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t p = static_cast<size_t>(y) * W + x;
            if (x + 1 < W) {
                out[p] -= gx[p];
                out[p + 1] += gx[p];
            }
            if (y + 1 < H) {
                out[p] -= gy[p];
                out[p + W] += gy[p];
            }
        }
}

void blur_plane(const KernelField &kf, const float *src, float *dst) {
    int W = kf.width, H = kf.height;
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t p = static_cast<size_t>(y) * W + x;
            float acc = 0.f;
            for (std::uint32_t t = kf.start[p]; t < kf.start[p + 1]; t++) {
                const auto &tap = kf.taps[t];
                int tx = std::clamp(x + tap.dx, 0, W - 1);
                int ty = std::clamp(y + tap.dy, 0, H - 1);
                acc += tap.w * src[static_cast<size_t>(ty) * W + tx];
            }
            dst[p] = acc;
        }
}

void blur_adjoint_plane(const KernelField &kf, const float *src, float *dst) {
    int W = kf.width, H = kf.height;
    std::fill(dst, dst + static_cast<size_t>(W) * H, 0.f);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t p = static_cast<size_t>(y) * W + x;
            for (std::uint32_t t = kf.start[p]; t < kf.start[p + 1]; t++) {
                const auto &tap = kf.taps[t];
                int tx = std::clamp(x + tap.dx, 0, W - 1);
                int ty = std::clamp(y + tap.dy, 0, H - 1);
                dst[static_cast<size_t>(ty) * W + tx] += tap.w * src[p];
            }
        }
}

} // namespace

double latent_objective(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                        const FlowSet &flows,
                        const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                        KernelMode mode, const EnergyWeights &w) {
    const int F = static_cast<int>(latents.size());
    double total = 0.0;
    for (int i = 0; i < F; i++) {
        auto [fa, ba] = kernel_flow_args(flows, i, latents[i].width, latents[i].height);
        KernelField kf = build_kernel_field(fa, ba, params[i][0], params[i][1], tau, mode);
        total += blur_data_term(latents[i], blurry[i], kf, w.lambda);
        Gradient2 g = gradient(latents[i]);
        for (size_t p = 0; p < g.dx.data.size(); p++)
            total += std::sqrt(static_cast<double>(g.dx.data[p]) * g.dx.data[p] +
                               static_cast<double>(g.dy.data[p]) * g.dy.data[p]);
        if (i < flows.frames())
            for (const auto &[n, f] : flows.per_frame[i]) {
                int j = i + n;
                if (j < 0 || j >= F)
                    continue;
                WarpResult wr = warp(latents[j], f);
                for (size_t p = 0; p < wr.in_bounds.size(); p++) {
                    if (!wr.in_bounds[p])
                        continue;
                    int x = static_cast<int>(p) % latents[i].width;
                    int y = static_cast<int>(p) / latents[i].width;
                    for (int c = 0; c < latents[i].channels; c++)
                        total += w.mu * std::fabs(latents[i].at(x, y, c) - wr.frame.at(x, y, c));
                }
            }
    }
    return total;
}

// Primal-dual with diagonal preconditioning: the data rows carry sqrt(2*lambda)
// and the temporal rows carry mu, so every dual stays O(1), and the per-row /
// per-column step sizes (reciprocal absolute row and column sums) balance the
// wildly different term weights without a global operator-norm estimate.
std::vector<Frame> estimate_latent(const std::vector<Frame> &blurry, const FlowSet &flows,
                                   const std::vector<std::array<TrajectoryParams, 2>> &params,
                                   DutyCycle tau, KernelMode mode, const EnergyWeights &w,
                                   const DeconvOptions &opts, const std::vector<Frame> *init,
                                   std::vector<DeconvTraceRow> *trace) {
    const int F = static_cast<int>(blurry.size());
    if (F == 0)
        return {};
    if (static_cast<int>(params.size()) != F)
        throw std::invalid_argument("estimate_latent: params count differs from frames");
    if (init && (static_cast<int>(init->size()) != F || !(*init)[0].same_shape(blurry[0])))
        throw std::invalid_argument("estimate_latent: init does not match window");
    const int W = blurry[0].width, H = blurry[0].height, C = blurry[0].channels;
    const size_t np = static_cast<size_t>(W) * H;

    std::vector<Frame> start = init ? *init : blurry;
    double obj_in = latent_objective(start, blurry, flows, params, tau, mode, w);

    // Frozen linear operators for the whole solve.
    std::vector<KernelField> kf(F);
    std::vector<std::vector<WarpOp>> warps(F); // warps[i]: couplings l_i vs l_{i+n}
    for (int i = 0; i < F; i++) {
        auto [fa, ba] = kernel_flow_args(flows, i, W, H);
        kf[i] = build_kernel_field(fa, ba, params[i][0], params[i][1], tau, mode);
        if (i < flows.frames())
            for (const auto &[n, f] : flows.per_frame[i]) {
                if (i + n < 0 || i + n >= F)
                    continue;
                WarpOp op;
                op.build(f);
                op.n = n;
                warps[i].push_back(std::move(op));
            }
    }

    const float s_d = static_cast<float>(std::sqrt(2.0 * w.lambda));
    const float mu = static_cast<float>(w.mu);
    const float sig_d = s_d > 0 ? 1.f / (2.f * s_d) : 0.f; // data row sums are at most 2*s_d
    const float sig_tv = 0.5f;
    const float sig_t = mu > 0 ? 1.f / (2.f * mu) : 0.f;

    // Primal steps: reciprocal column sums of the stacked weighted operator.
    std::vector<Plane> tau_k(F, Plane(np));
    {
        Plane ones(np), colK(np), tmp(np);
        std::fill(ones.v.begin(), ones.v.end(), 1.f);
        for (int i = 0; i < F; i++) {
            blur_adjoint_plane(kf[i], ones.v.data(), colK.v.data());
            for (size_t p = 0; p < np; p++)
                tau_k[i].v[p] = 4.f * s_d * colK.v[p] + 4.f; // blur-gradient rows + tv rows
            for (const WarpOp &op : warps[i])
                for (size_t p = 0; p < np; p++)
                    if (op.mask[p])
                        tau_k[i].v[p] += mu;
        }
        for (int i = 0; i < F; i++)
            for (const WarpOp &op : warps[i]) {
                std::fill(tmp.v.begin(), tmp.v.end(), 0.f);
                for (size_t p = 0; p < np; p++)
                    if (op.mask[p])
                        for (int k = 0; k < 4; k++)
                            tmp.v[op.idx[p][k]] += mu * op.wgt[p][k];
                for (size_t p = 0; p < np; p++)
                    tau_k[i + op.n].v[p] += tmp.v[p];
            }
        for (int i = 0; i < F; i++)
            for (size_t p = 0; p < np; p++)
                tau_k[i].v[p] = 1.f / std::max(tau_k[i].v[p], 1e-6f);
    }

    // Primal and dual state, per channel.
    auto planes = [&](int count) { return std::vector<Plane>(count, Plane(np)); };
    std::vector<std::vector<Plane>> l(F, planes(C)), lb(F, planes(C)), qdx(F, planes(C)),
        qdy(F, planes(C)), px(F, planes(C)), py(F, planes(C));
    std::vector<std::vector<std::vector<Plane>>> qt(F);
    std::vector<std::vector<Plane>> gyx(F, planes(C)), gyy(F, planes(C)); // grad of blurry
    for (int i = 0; i < F; i++) {
        qt[i].assign(warps[i].size(), planes(C));
        for (int c = 0; c < C; c++) {
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++)
                    l[i][c].v[static_cast<size_t>(y) * W + x] = start[i].at(x, y, c);
            lb[i][c] = l[i][c];
            Plane yb(np);
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++)
                    yb.v[static_cast<size_t>(y) * W + x] = blurry[i].at(x, y, c);
            grad_plane(yb.v.data(), gyx[i][c].v.data(), gyy[i][c].v.data(), W, H);
        }
    }

    const float data_damp = 1.f / (1.f + sig_d);
    std::deque<double> rel_hist;
    Plane t1(np), t2(np), t3(np), accum(np);

    // The data dual starts at its stationary value for the initial primal
    // (it is proportional to the residual, so this is exact) and the TV dual
    // at the projected gradient direction. From all-zero duals a warm start
    // is torn apart: the unit-ball terms saturate within a few iterations
    // while the data dual, whose ramp rate scales with the already-small
    // residual, takes hundreds of iterations to push back. The temporal dual
    // stays at zero; its saturating rows exert a residual-independent force,
    // so guessing saturation where the converged residual would be zero kicks
    // the primal much harder than letting it ramp.
    {
        const float th = 1e-3f;
        for (int i = 0; i < F; i++)
            for (int c = 0; c < C; c++) {
                if (s_d > 0) {
                    blur_plane(kf[i], l[i][c].v.data(), t1.v.data());
                    grad_plane(t1.v.data(), t2.v.data(), t3.v.data(), W, H);
                    for (size_t p = 0; p < np; p++) {
                        qdx[i][c].v[p] = s_d * (t2.v[p] - gyx[i][c].v[p]);
                        qdy[i][c].v[p] = s_d * (t3.v[p] - gyy[i][c].v[p]);
                    }
                }
                grad_plane(l[i][c].v.data(), t2.v.data(), t3.v.data(), W, H);
                for (size_t p = 0; p < np; p++) {
                    float nrm = std::sqrt(t2.v[p] * t2.v[p] + t3.v[p] * t3.v[p]);
                    float s = 1.f / std::max(nrm, th);
                    px[i][c].v[p] = t2.v[p] * s;
                    py[i][c].v[p] = t3.v[p] * s;
                }
            }
    }

    auto snapshot = [&]() {
        std::vector<Frame> out(F, Frame(W, H, C));
        for (int i = 0; i < F; i++)
            for (int c = 0; c < C; c++)
                for (int y = 0; y < H; y++)
                    for (int x = 0; x < W; x++)
                        out[i].at(x, y, c) = l[i][c].v[static_cast<size_t>(y) * W + x];
        return out;
    };

    for (int it = 0; it < opts.max_iters; it++) {
        // Dual ascent at the extrapolated point.
        for (int i = 0; i < F; i++)
            for (int c = 0; c < C; c++) {
                if (s_d > 0) {
                    blur_plane(kf[i], lb[i][c].v.data(), t1.v.data());
                    grad_plane(t1.v.data(), t2.v.data(), t3.v.data(), W, H);
                    for (size_t p = 0; p < np; p++) {
                        qdx[i][c].v[p] =
                            (qdx[i][c].v[p] + sig_d * s_d * (t2.v[p] - gyx[i][c].v[p])) * data_damp;
                        qdy[i][c].v[p] =
                            (qdy[i][c].v[p] + sig_d * s_d * (t3.v[p] - gyy[i][c].v[p])) * data_damp;
                    }
                }
                grad_plane(lb[i][c].v.data(), t2.v.data(), t3.v.data(), W, H);
                for (size_t p = 0; p < np; p++) {
                    float ax = px[i][c].v[p] + sig_tv * t2.v[p];
                    float ay = py[i][c].v[p] + sig_tv * t3.v[p];
                    float nrm = std::sqrt(ax * ax + ay * ay);
                    float s = nrm > 1.f ? 1.f / nrm : 1.f;
                    px[i][c].v[p] = ax * s;
                    py[i][c].v[p] = ay * s;
                }
                if (mu > 0)
                    for (size_t wi = 0; wi < warps[i].size(); wi++) {
                        const WarpOp &op = warps[i][wi];
                        op.gather(lb[i + op.n][c].v.data(), t1.v.data());
                        for (size_t p = 0; p < np; p++) {
                            float q = qt[i][wi][c].v[p];
                            q += op.mask[p] ? sig_t * mu * (lb[i][c].v[p] - t1.v[p]) : 0.f;
                            qt[i][wi][c].v[p] = std::clamp(q, -1.f, 1.f);
                        }
                    }
            }
        // Primal descent and extrapolation.
        double diff2 = 0, base2 = 0;
        for (int i = 0; i < F; i++)
            for (int c = 0; c < C; c++) {
                if (s_d > 0) {
                    grad_adjoint_plane(qdx[i][c].v.data(), qdy[i][c].v.data(), t1.v.data(), W, H);
                    blur_adjoint_plane(kf[i], t1.v.data(), accum.v.data());
                    for (size_t p = 0; p < np; p++)
                        accum.v[p] *= s_d;
                } else {
                    std::fill(accum.v.begin(), accum.v.end(), 0.f);
                }
                grad_adjoint_plane(px[i][c].v.data(), py[i][c].v.data(), t1.v.data(), W, H);
                for (size_t p = 0; p < np; p++)
                    accum.v[p] += t1.v[p];
                if (mu > 0) {
                    for (size_t wi = 0; wi < warps[i].size(); wi++)
                        for (size_t p = 0; p < np; p++)
                            accum.v[p] += mu * qt[i][wi][c].v[p];
                    for (int j = 0; j < F; j++)
                        for (size_t wi = 0; wi < warps[j].size(); wi++) {
                            if (j + warps[j][wi].n != i)
                                continue;
                            std::fill(t1.v.begin(), t1.v.end(), 0.f);
                            warps[j][wi].scatter_add(qt[j][wi][c].v.data(), t1.v.data());
                            for (size_t p = 0; p < np; p++)
                                accum.v[p] -= mu * t1.v[p];
                        }
                }
                for (size_t p = 0; p < np; p++) {
                    float old = l[i][c].v[p];
                    float nw = std::clamp(old - tau_k[i].v[p] * accum.v[p], 0.f, 1.f);
                    l[i][c].v[p] = nw;
                    lb[i][c].v[p] = 2.f * nw - old;
                    diff2 += static_cast<double>(nw - old) * (nw - old);
                    base2 += static_cast<double>(old) * old;
                }
            }
        if (!std::isfinite(diff2) || !std::isfinite(base2))
            throw std::runtime_error("estimate_latent: diverged at iteration " +
                                     std::to_string(it + 1));
        double rel = std::sqrt(diff2) / std::max(std::sqrt(base2), 1e-12);
        if (trace) {
            auto cur = snapshot();
            trace->push_back(
                {it + 1, latent_objective(cur, blurry, flows, params, tau, mode, w), rel});
        }
        rel_hist.push_back(rel);
        if (rel_hist.size() > 5)
            rel_hist.pop_front();
        if (rel_hist.size() == 5) {
            double avg = 0;
            for (double r : rel_hist)
                avg += r;
            if (avg / 5.0 < opts.tol)
                break;
        }
    }

    std::vector<Frame> out = snapshot();
    double obj_out = latent_objective(out, blurry, flows, params, tau, mode, w);
    if (obj_out > obj_in)
        return start; // guard: never hand back a worse window than we started with
    return out;
}

} // namespace vdb
