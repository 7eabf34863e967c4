#include "vdb/energy.hpp"
#include "vdb/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace vdb {

namespace {

// Kernel arguments at one pixel with the refined field's value overridden,
// following the same mirror/negation rules as kernel_flow_args.
struct PixelArgs {
    const FlowField *fwd = nullptr; // stored (i,+1) field, if any
    const FlowField *bwd = nullptr; // stored (i,-1) field, if any
    int refined_n = 0;

    std::pair<Vec2, Vec2> at(size_t p, float cu, float cv) const {
        Vec2 fv{}, bv{};
        if (fwd)
            fv = refined_n == 1 ? Vec2{cu, cv} : Vec2{fwd->u[p], fwd->v[p]};
        if (bwd)
            bv = refined_n == -1 ? Vec2{cu, cv} : Vec2{bwd->u[p], bwd->v[p]};
        if (fwd && bwd)
            return {fv, {-bv.x, -bv.y}};
        if (fwd)
            return {fv, fv};
        if (bwd)
            return {{-bv.x, -bv.y}, {-bv.x, -bv.y}};
        return {{}, {}};
    }
};

Frame centered_dx(const Frame &f) {
    Frame g(f.width, f.height, f.channels);
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++)
            for (int c = 0; c < f.channels; c++)
                g.at(x, y, c) = 0.5f * (f.at_clamped(x + 1, y, c) - f.at_clamped(x - 1, y, c));
    return g;
}

Frame centered_dy(const Frame &f) {
    Frame g(f.width, f.height, f.channels);
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++)
            for (int c = 0; c < f.channels; c++)
                g.at(x, y, c) = 0.5f * (f.at_clamped(x, y + 1, c) - f.at_clamped(x, y - 1, c));
    return g;
}

std::vector<int> label_ids(const LabelMap *lab) {
    if (!lab)
        return {-1};
    std::array<bool, 256> seen{};
    for (std::uint8_t l : lab->labels)
        seen[l] = true;
    std::vector<int> ids;
    for (int id = 0; id < 256; id++)
        if (seen[id])
            ids.push_back(id);
    return ids;
}

// Every energy term that depends on the single field set.get(i, n). Guarding a
// field swap with this is equivalent to guarding with the full model energy,
// since all other terms cancel in the difference.
double field_energy(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                    const FlowSet &set, const std::vector<LabelMap> *labels,
                    const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                    KernelMode mode, const EnergyWeights &w, int i, int n) {
    const int F = static_cast<int>(latents.size());
    const int W = latents[i].width, H = latents[i].height;
    const FlowField &f = set.get(i, n);
    const LabelMap *lab = labels ? &(*labels)[i] : nullptr;
    double e = 0;

    if ((n == 1 || n == -1) && w.lambda > 0) {
        auto [fa, ba] = kernel_flow_args(set, i, W, H);
        KernelField kf = build_kernel_field(fa, ba, params[i][0], params[i][1], tau, mode);
        e += blur_data_term(latents[i], blurry[i], kf, w.lambda);
    }

    for (int id : label_ids(lab)) {
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
                e += charbonnier(ru * ru + rv * rv);
            }
    }

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
                e += du * du + dv * dv;
            }
        }

    Frame g = edge_map(latents[i], w.eta);
    for (int y = 0; y < H; y++)
        for (int x = 0; x < W; x++) {
            size_t p = f.idx(x, y);
            double ux = x + 1 < W ? f.u[p + 1] - f.u[p] : 0;
            double uy = y + 1 < H ? f.u[p + W] - f.u[p] : 0;
            double vx = x + 1 < W ? f.v[p + 1] - f.v[p] : 0;
            double vy = y + 1 < H ? f.v[p + W] - f.v[p] : 0;
            e += g.data[p] * (std::sqrt(ux * ux + uy * uy) + std::sqrt(vx * vx + vy * vy));
        }

    int j = i + n;
    if (j >= 0 && j < F) {
        WarpResult wr = warp(latents[j], f);
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                size_t p = f.idx(x, y);
                if (!wr.in_bounds[p])
                    continue;
                for (int c = 0; c < latents[i].channels; c++)
                    e += w.mu * std::fabs(latents[i].at(x, y, c) - wr.frame.at(x, y, c));
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
                        e += w.mu;
                }
        }
    }
    return e;
}

void refine_one_field(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                      const FlowSet &set, const std::vector<LabelMap> *labels,
                      const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                      KernelMode mode, const EnergyWeights &w, const FlowRefineOptions &opts,
                      int i, int n, FlowField &trial) {
    const int F = static_cast<int>(latents.size());
    const int W = trial.width, H = trial.height;
    const size_t np = trial.pixel_count();
    const Frame &li = latents[i];
    const int C = li.channels;
    const LabelMap *lab = labels ? &(*labels)[i] : nullptr;
    const int j = i + n;
    const bool have_j = j >= 0 && j < F;
    const bool data_on = (n == 1 || n == -1) && w.lambda > 0;
    const double lam2 = 2.0 * w.lambda;
    const float h = static_cast<float>(opts.perturbation);

    PixelArgs pargs;
    pargs.fwd = set.has(i, 1) ? &set.get(i, 1) : nullptr;
    pargs.bwd = set.has(i, -1) ? &set.get(i, -1) : nullptr;
    pargs.refined_n = n;

    Frame g = edge_map(li, w.eta);
    Gradient2 gy0 = data_on ? gradient(blurry[i]) : Gradient2{};
    Frame gjx, gjy;
    if (have_j) {
        gjx = centered_dx(latents[j]);
        gjy = centered_dy(latents[j]);
    }

    std::vector<float> pred_u(np), pred_v(np), w_aff(np);
    std::vector<float> tvw_u(np), tvw_v(np);
    std::vector<float> u0(np), v0(np);
    std::vector<float> t_r0(np * C), t_gx(np * C), t_gy(np * C), t_w(np * C);
    std::vector<std::uint8_t> t_mask(np);
    std::vector<float> Ju(data_on ? np * C : 0), Jv(data_on ? np * C : 0);
    Frame Pdx, Pdy;

    auto blurred_at = [&](int x, int y, size_t p, float cu, float cv, float *out) {
        auto [fa, ba] = pargs.at(p, cu, cv);
        PixelKernel k = build_kernel(fa, ba, params[i][0], params[i][1], tau, mode);
        for (int c = 0; c < C; c++)
            out[c] = 0.f;
        for (const KernelSample &s : k.samples) {
            int dx = static_cast<int>(std::lround(s.dx));
            int dy = static_cast<int>(std::lround(s.dy));
            for (int c = 0; c < C; c++)
                out[c] += s.w * li.at_clamped(x + dx, y + dy, c);
        }
    };

    std::vector<float> bp(C), bm(C);
    for (int pass = 0; pass < opts.linearizations; pass++) {
        std::copy(trial.u.begin(), trial.u.end(), u0.begin());
        std::copy(trial.v.begin(), trial.v.end(), v0.begin());

        // Robust affine prior around the current per-segment fits.
        for (int id : label_ids(lab)) {
            std::vector<std::uint8_t> mask;
            const std::vector<std::uint8_t> *mp = nullptr;
            if (id >= 0) {
                mask.resize(np);
                for (size_t p = 0; p < np; p++)
                    mask[p] = lab->labels[p] == id;
                mp = &mask;
            }
            AffineModel th = segment_affine(trial, mp);
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    size_t p = trial.idx(x, y);
                    if (mp && !mask[p])
                        continue;
                    Vec2 pr = th.eval(x, y);
                    double ru = trial.u[p] - pr.x, rv = trial.v[p] - pr.y;
                    pred_u[p] = pr.x;
                    pred_v[p] = pr.y;
                    w_aff[p] = static_cast<float>(0.9 * std::pow(ru * ru + rv * rv + 1e-6, -0.55));
                }
        }

        // Lagged diffusivities for the edge-weighted TV of the flow.
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                size_t p = trial.idx(x, y);
                double ux = x + 1 < W ? trial.u[p + 1] - trial.u[p] : 0;
                double uy = y + 1 < H ? trial.u[p + W] - trial.u[p] : 0;
                double vx = x + 1 < W ? trial.v[p + 1] - trial.v[p] : 0;
                double vy = y + 1 < H ? trial.v[p + W] - trial.v[p] : 0;
                tvw_u[p] = g.data[p] / std::max(std::sqrt(ux * ux + uy * uy), 1e-3);
                tvw_v[p] = g.data[p] / std::max(std::sqrt(vx * vx + vy * vy), 1e-3);
            }

        // Brightness constancy linearized at the warped point.
        if (have_j)
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    size_t p = trial.idx(x, y);
                    float sx = x + trial.u[p], sy = y + trial.v[p];
                    t_mask[p] = sx >= 0.f && sx <= W - 1.f && sy >= 0.f && sy <= H - 1.f;
                    if (!t_mask[p])
                        continue;
                    for (int c = 0; c < C; c++) {
                        float wv = sample_bilinear(latents[j], sx, sy, c);
                        float r = li.at(x, y, c) - wv;
                        t_r0[p * C + c] = r;
                        t_gx[p * C + c] = sample_bilinear(gjx, sx, sy, c);
                        t_gy[p * C + c] = sample_bilinear(gjy, sx, sy, c);
                        t_w[p * C + c] =
                            static_cast<float>(w.mu / std::max(std::fabs((double)r), 1e-3));
                    }
                }

        // Blur residual and numeric kernel Jacobian at the current flow.
        if (data_on) {
            FlowField fa(W, H), ba(W, H);
            for (size_t p = 0; p < np; p++) {
                auto [a, b] = pargs.at(p, trial.u[p], trial.v[p]);
                fa.u[p] = a.x;
                fa.v[p] = a.y;
                ba.u[p] = b.x;
                ba.v[p] = b.y;
            }
            KernelField kf = build_kernel_field(fa, ba, params[i][0], params[i][1], tau, mode);
            Frame B = apply_blur(li, kf);
            Gradient2 gB = gradient(B);
            Pdx = gB.dx;
            Pdy = gB.dy;
            for (size_t q = 0; q < Pdx.data.size(); q++) {
                Pdx.data[q] -= gy0.dx.data[q];
                Pdy.data[q] -= gy0.dy.data[q];
            }
            for (int y = 0; y < H; y++)
                for (int x = 0; x < W; x++) {
                    size_t p = trial.idx(x, y);
                    blurred_at(x, y, p, trial.u[p] + h, trial.v[p], bp.data());
                    blurred_at(x, y, p, trial.u[p] - h, trial.v[p], bm.data());
                    for (int c = 0; c < C; c++)
                        Ju[p * C + c] = (bp[c] - bm[c]) / (2 * h);
                    blurred_at(x, y, p, trial.u[p], trial.v[p] + h, bp.data());
                    blurred_at(x, y, p, trial.u[p], trial.v[p] - h, bm.data());
                    for (int c = 0; c < C; c++)
                        Jv[p * C + c] = (bp[c] - bm[c]) / (2 * h);
                }
        }

        for (int sweep = 0; sweep < opts.solver_sweeps; sweep++)
            for (int parity = 0; parity < 2; parity++)
                for (int y = 0; y < H; y++)
                    for (int x = (y + parity) & 1; x < W; x += 2) {
                        size_t p = trial.idx(x, y);
                        double A00 = w_aff[p], A01 = 0, A11 = w_aff[p];
                        double b0 = w_aff[p] * pred_u[p], b1 = w_aff[p] * pred_v[p];

                        const int nx[4] = {x + 1, x - 1, x, x};
                        const int ny[4] = {y, y, y + 1, y - 1};
                        for (int k = 0; k < 4; k++) {
                            if (nx[k] < 0 || nx[k] >= W || ny[k] < 0 || ny[k] >= H)
                                continue;
                            size_t q = trial.idx(nx[k], ny[k]);
                            if (lab && lab->labels[p] != lab->labels[q])
                                continue;
                            A00 += 4;
                            A11 += 4;
                            b0 += 4 * trial.u[q];
                            b1 += 4 * trial.v[q];
                        }

                        if (x + 1 < W) {
                            A00 += tvw_u[p];
                            b0 += tvw_u[p] * trial.u[p + 1];
                            A11 += tvw_v[p];
                            b1 += tvw_v[p] * trial.v[p + 1];
                        }
                        if (x > 0) {
                            A00 += tvw_u[p - 1];
                            b0 += tvw_u[p - 1] * trial.u[p - 1];
                            A11 += tvw_v[p - 1];
                            b1 += tvw_v[p - 1] * trial.v[p - 1];
                        }
                        if (y + 1 < H) {
                            A00 += tvw_u[p];
                            b0 += tvw_u[p] * trial.u[p + W];
                            A11 += tvw_v[p];
                            b1 += tvw_v[p] * trial.v[p + W];
                        }
                        if (y > 0) {
                            A00 += tvw_u[p - W];
                            b0 += tvw_u[p - W] * trial.u[p - W];
                            A11 += tvw_v[p - W];
                            b1 += tvw_v[p - W] * trial.v[p - W];
                        }

                        if (have_j && t_mask[p])
                            for (int c = 0; c < C; c++) {
                                double wt = t_w[p * C + c];
                                double gx = t_gx[p * C + c], gy = t_gy[p * C + c];
                                double rhs = gx * u0[p] + gy * v0[p] + t_r0[p * C + c];
                                A00 += wt * gx * gx;
                                A01 += wt * gx * gy;
                                A11 += wt * gy * gy;
                                b0 += wt * rhs * gx;
                                b1 += wt * rhs * gy;
                            }

                        if (data_on)
                            for (int c = 0; c < C; c++) {
                                double ju = Ju[p * C + c], jv = Jv[p * C + c];
                                if (ju == 0 && jv == 0)
                                    continue;
                                double dot0 = ju * u0[p] + jv * v0[p];
                                double a00 = lam2 * ju * ju, a01 = lam2 * ju * jv,
                                       a11 = lam2 * jv * jv;
                                // residual pairs of the blur gradient touching this pixel
                                double rs[4];
                                int srs[4], cnt = 0;
                                if (x + 1 < W) {
                                    rs[cnt] = Pdx.at(x, y, c);
                                    srs[cnt++] = -1;
                                }
                                if (x > 0) {
                                    rs[cnt] = Pdx.at(x - 1, y, c);
                                    srs[cnt++] = 1;
                                }
                                if (y + 1 < H) {
                                    rs[cnt] = Pdy.at(x, y, c);
                                    srs[cnt++] = -1;
                                }
                                if (y > 0) {
                                    rs[cnt] = Pdy.at(x, y - 1, c);
                                    srs[cnt++] = 1;
                                }
                                for (int k = 0; k < cnt; k++) {
                                    A00 += a00;
                                    A01 += a01;
                                    A11 += a11;
                                    double t = dot0 - srs[k] * rs[k];
                                    b0 += lam2 * ju * t;
                                    b1 += lam2 * jv * t;
                                }
                            }

                        double det = A00 * A11 - A01 * A01;
                        if (det <= 1e-12)
                            continue;
                        trial.u[p] = static_cast<float>((b0 * A11 - b1 * A01) / det);
                        trial.v[p] = static_cast<float>((A00 * b1 - A01 * b0) / det);
                    }

        float max_step = 0.f;
        for (size_t p = 0; p < np; p++)
            max_step = std::max({max_step, std::fabs(trial.u[p] - u0[p]),
                                 std::fabs(trial.v[p] - v0[p])});
        if (max_step < 1e-4f)
            break;
    }
}

} // namespace

FlowSet refine_flow(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                    const FlowSet &flows, const std::vector<LabelMap> *labels,
                    const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                    KernelMode mode, const EnergyWeights &weights, const FlowRefineOptions &opts,
                    std::vector<FlowRefineFieldReport> *report) {
    FlowSet out = flows;
    const int F = static_cast<int>(latents.size());
    for (int i = 0; i < std::min(F, out.frames()); i++) {
        std::vector<int> offsets;
        for (const auto &[n, f] : out.per_frame[i])
            offsets.push_back(n);
        for (int n : offsets) {
            FlowRefineFieldReport rep;
            rep.frame = i;
            rep.offset = n;
            rep.input_energy =
                field_energy(latents, blurry, out, labels, params, tau, mode, weights, i, n);
            double best = rep.input_energy;
            auto consider = [&](FlowField seed, int tag) {
                refine_one_field(latents, blurry, out, labels, params, tau, mode, weights, opts,
                                 i, n, seed);
                FlowSet cand = out;
                cand.put(i, n, std::move(seed));
                double e =
                    field_energy(latents, blurry, cand, labels, params, tau, mode, weights, i, n);
                if (e <= best) {
                    best = e;
                    out = std::move(cand);
                    rep.chosen = tag;
                }
                return e;
            };
            rep.refined_energy = consider(out.get(i, n), 1);
            // A fresh solve between the observed frames, polished the same way;
            // comparing the raw seeds instead would let border smoothness veto
            // a field whose interior is far closer to the truth.
            if (opts.tvl1_reseed && i + n >= 0 && i + n < F &&
                std::min(blurry[i].width, blurry[i].height) >= 16)
                rep.reseed_energy = consider(
                    tvl1_flow(blurry[i], blurry[static_cast<size_t>(i) + n], opts.tvl1), 2);
            if (report)
                report->push_back(rep);
        }
    }
    return out;
}

} // namespace vdb
