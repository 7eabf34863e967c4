#include "vdb/trajectory.hpp"

#include <algorithm>
#include <cmath>

namespace vdb {

namespace {

bool flow_is_zero(const FlowField &f) {
    for (size_t p = 0; p < f.u.size(); p++)
        if (std::fabs(f.u[p]) > 1e-6f || std::fabs(f.v[p]) > 1e-6f)
            return false;
    return true;
}

// Scan-time stand-in for the full data term. The fit is a sum of independent
// per-pixel comparisons between gradients of the re-blurred latent and of the
// observed frame, so it can be evaluated on bands of three consecutive rows
// placed every 3*stride rows: x-differences live on all band rows,
// y-differences on the first two. Each partial sum is rescaled by its row
// coverage so magnitudes stay comparable with the exact term.
struct BandedFit {
    const Frame &latent, &blurry;
    const FlowField &fwd, &bwd;
    DutyCycle tau;
    KernelMode mode;
    double lambda;
    int stride;
    Gradient2 gy; // gradient of the observed frame, shared by every eval

    BandedFit(const Frame &l, const Frame &y, const FlowField &f, const FlowField &b,
              DutyCycle t, KernelMode m, double lam, int s)
        : latent(l), blurry(y), fwd(f), bwd(b), tau(t), mode(m), lambda(lam), stride(s),
          gy(gradient(y)) {}

    double operator()(const std::array<TrajectoryParams, 2> &p) const {
        const int W = latent.width, H = latent.height, C = latent.channels;
        std::array<std::vector<float>, 3> band;
        double sum_dx = 0.0, sum_dy = 0.0;
        long rows_dx = 0, rows_dy = 0;
        for (int y0 = 0; y0 < H; y0 += 3 * stride) {
            const int nrows = std::min(3, H - y0);
            for (int ry = 0; ry < nrows; ry++) {
                const int yy = y0 + ry;
                auto &row = band[ry];
                row.assign(static_cast<size_t>(W) * C, 0.f);
                for (int x = 0; x < W; x++) {
                    const size_t i = static_cast<size_t>(yy) * W + x;
                    PixelKernel k = build_kernel({fwd.u[i], fwd.v[i]}, {bwd.u[i], bwd.v[i]},
                                                 p[0], p[1], tau, mode);
                    for (const KernelSample &s : k.samples) {
                        const int sx = std::clamp(x + static_cast<int>(s.dx), 0, W - 1);
                        const int sy = std::clamp(yy + static_cast<int>(s.dy), 0, H - 1);
                        for (int c = 0; c < C; c++)
                            row[static_cast<size_t>(x) * C + c] += s.w * latent.at(sx, sy, c);
                    }
                }
            }
            rows_dx += nrows;
            rows_dy += std::max(0, nrows - 1);
            for (int ry = 0; ry < nrows; ry++) {
                const int yy = y0 + ry;
                for (int x = 0; x < W; x++)
                    for (int c = 0; c < C; c++) {
                        const size_t xc = static_cast<size_t>(x) * C + c;
                        if (x + 1 < W) {
                            const double d =
                                static_cast<double>(band[ry][xc + C]) - band[ry][xc] -
                                gy.dx.at(x, yy, c);
                            sum_dx += d * d;
                        }
                        if (ry + 1 < nrows) {
                            const double d =
                                static_cast<double>(band[ry + 1][xc]) - band[ry][xc] -
                                gy.dy.at(x, yy, c);
                            sum_dy += d * d;
                        }
                    }
            }
        }
        double data = 0.0;
        if (rows_dx > 0)
            data += sum_dx * static_cast<double>(H) / rows_dx;
        if (rows_dy > 0)
            data += sum_dy * static_cast<double>(H - 1) / rows_dy;
        return lambda * data;
    }
};

struct Best {
    double a, b, obj;
    double pa, pb; // distance from the prior, the tiebreak

    void consider(double ca, double cb, double obj_c, double prior_b) {
        double da = std::fabs(ca), db = std::fabs(cb - prior_b);
        if (obj_c < obj || (obj_c == obj && (da < pa || (da == pa && db < pb)))) {
            a = ca;
            b = cb;
            obj = obj_c;
            pa = da;
            pb = db;
        }
    }
};

} // namespace

double trajectory_objective(const Frame &latent, const Frame &blurry, const FlowField &fwd,
                            const FlowField &bwd, const std::array<TrajectoryParams, 2> &params,
                            DutyCycle tau, KernelMode mode, const EnergyWeights &w) {
    KernelField kf = build_kernel_field(fwd, bwd, params[0], params[1], tau, mode);
    double total = blur_data_term(latent, blurry, kf, w.lambda);
    for (const TrajectoryParams &p : params)
        total += w.beta * p.a * p.a + w.gamma * (p.b - w.prior_center) * (p.b - w.prior_center);
    return total;
}

ParamSearchResult estimate_params(const Frame &latent, const Frame &blurry, const FlowField &fwd,
                                  const FlowField &bwd,
                                  const std::array<TrajectoryParams, 2> &incumbent, DutyCycle tau,
                                  KernelMode mode, const EnergyWeights &w,
                                  const ParamSearchOptions &opts) {
    ParamSearchResult res;
    res.params = incumbent;
    res.degenerate = {flow_is_zero(fwd), flow_is_zero(bwd)};
    for (int d = 0; d < 2; d++)
        if (res.degenerate[d]) {
            res.params[d].a = 0.f;
            res.params[d].b = static_cast<float>(w.prior_center);
        }

    const int stride = std::max(1, opts.scan_stride);
    BandedFit fit(latent, blurry, fwd, bwd, tau, mode, w.lambda, stride);
    auto reg = [&](const std::array<TrajectoryParams, 2> &p) {
        double r = 0.0;
        for (int d = 0; d < 2; d++)
            r += w.beta * p[d].a * p[d].a +
                 w.gamma * (p[d].b - w.prior_center) * (p[d].b - w.prior_center);
        return r;
    };
    // every scan step runs on the banded fit; exact objectives only bracket
    // the search so the incumbent can never lose to sampling noise
    auto eval = [&](int dir, double a, double b) {
        std::array<TrajectoryParams, 2> p = res.params;
        p[dir].a = static_cast<float>(a);
        p[dir].b = static_cast<float>(b);
        return fit(p) + reg(p);
    };

    const std::array<TrajectoryParams, 2> entry = res.params;
    const double exact_entry = trajectory_objective(latent, blurry, fwd, bwd, entry, tau, mode, w);
    double scan_obj = fit(res.params) + reg(res.params);

    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int round = 0; round < opts.rounds; round++)
        for (int dir = 0; dir < 2; dir++) {
            if (res.degenerate[dir])
                continue;
            Best best{res.params[dir].a, res.params[dir].b, scan_obj,
                      std::fabs(res.params[dir].a),
                      std::fabs(res.params[dir].b - w.prior_center)};
            // full grid first, then ever tighter windows around the incumbent
            double astep = opts.a_step, bstep = opts.b_step;
            double alo = opts.a_min, ahi = opts.a_max, blo = opts.b_min, bhi = opts.b_max;
            if (round > 0 || !opts.global) {
                // refinement of a grid winner may roam a little; a local-only
                // search is a trust region and stays within one step per round
                const int hw = opts.global || round > 0 ? 3 : 1;
                astep = opts.a_step / (1 << round);
                bstep = opts.b_step / (1 << round);
                alo = std::max(opts.a_min, best.a - hw * astep);
                ahi = std::min(opts.a_max, best.a + hw * astep);
                blo = std::max(opts.b_min, best.b - hw * bstep);
                bhi = std::min(opts.b_max, best.b + hw * bstep);
            }
            int na = static_cast<int>(std::round((ahi - alo) / astep)) + 1;
            int nb = static_cast<int>(std::round((bhi - blo) / bstep)) + 1;
            for (int ia = 0; ia < na; ia++)
                for (int ib = 0; ib < nb; ib++) {
                    double ca = alo + ia * astep;
                    double cb = blo + ib * bstep;
                    best.consider(ca, cb, eval(dir, ca, cb), w.prior_center);
                }
            // golden-section polish, one axis at a time within one grid cell
            for (int axis = 0; axis < 2; axis++) {
                double step = axis == 0 ? astep : bstep;
                double lo = (axis == 0 ? best.a : best.b) - step;
                double hi = (axis == 0 ? best.a : best.b) + step;
                auto g = [&](double t) {
                    return axis == 0 ? eval(dir, t, best.b) : eval(dir, best.a, t);
                };
                double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
                double f1 = g(x1), f2 = g(x2);
                for (int it = 0; it < opts.golden_iters; it++) {
                    if (f1 < f2) {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - gr * (hi - lo);
                        f1 = g(x1);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + gr * (hi - lo);
                        f2 = g(x2);
                    }
                }
                double xm = f1 < f2 ? x1 : x2, fm = std::min(f1, f2);
                if (fm < best.obj) { // strict: polish never displaces a prior-tied grid point
                    (axis == 0 ? best.a : best.b) = xm;
                    best.obj = fm;
                    best.pa = std::fabs(best.a);
                    best.pb = std::fabs(best.b - w.prior_center);
                }
            }
            res.params[dir].a = static_cast<float>(best.a);
            res.params[dir].b = static_cast<float>(best.b);
            scan_obj = best.obj;
        }

    res.objective = trajectory_objective(latent, blurry, fwd, bwd, res.params, tau, mode, w);
    if (res.objective > exact_entry) { // banded fit misled; keep what we came with
        res.params = entry;
        res.objective = exact_entry;
    }
    return res;
}

} // namespace vdb
