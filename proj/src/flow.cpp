#include "vdb/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace vdb {

namespace {

// Joint min-max normalization to [0,255] so the data/TV balance matches the
// published constants regardless of input scale. Flat inputs stay zero.
void normalize_pair(const Frame &a, const Frame &b, Frame &na, Frame &nb) {
    float lo = a.data[0], hi = a.data[0];
    for (float v : a.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (float v : b.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    na = a;
    nb = b;
    float range = hi - lo;
    if (range <= 0.f) {
        std::fill(na.data.begin(), na.data.end(), 0.f);
        std::fill(nb.data.begin(), nb.data.end(), 0.f);
        return;
    }
    for (float &v : na.data)
        v = (v - lo) * 255.f / range;
    for (float &v : nb.data)
        v = (v - lo) * 255.f / range;
}

void centered_gradient(const Frame &f, Frame &gx, Frame &gy) {
    gx = Frame(f.width, f.height, 1);
    gy = Frame(f.width, f.height, 1);
    for (int y = 0; y < f.height; y++)
        for (int x = 0; x < f.width; x++) {
            gx.at(x, y) = 0.5f * (f.at_clamped(x + 1, y) - f.at_clamped(x - 1, y));
            gy.at(x, y) = 0.5f * (f.at_clamped(x, y + 1) - f.at_clamped(x, y - 1));
        }
}

float median_of(std::array<float, 25> &vals, int n) {
    std::nth_element(vals.begin(), vals.begin() + n / 2, vals.begin() + n);
    return vals[n / 2];
}

void median_filter(std::vector<float> &img, int w, int h, int radius) {
    if (radius <= 0)
        return;
    std::vector<float> src = img;
    std::array<float, 25> vals;
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            int n = 0;
            for (int dy = -radius; dy <= radius; dy++)
                for (int dx = -radius; dx <= radius; dx++) {
                    int sx = std::clamp(x + dx, 0, w - 1);
                    int sy = std::clamp(y + dy, 0, h - 1);
                    vals[n++] = src[static_cast<size_t>(sy) * w + sx];
                }
            img[static_cast<size_t>(y) * w + x] = median_of(vals, n);
        }
}

// One pyramid level of the Zach-Pock-Bischof duality scheme.
void tvl1_level(const Frame &i0, const Frame &i1, std::vector<float> &u, std::vector<float> &v,
                const FlowOptions &opts) {
    const int w = i0.width, h = i0.height;
    const size_t n = static_cast<size_t>(w) * h;
    const float theta = 0.3f;
    const float tau_step = 0.25f;
    const float l_t = static_cast<float>(opts.data_weight / opts.tv_weight) * theta;
    const float grad_eps = 1e-10f;

    Frame i1x, i1y;
    centered_gradient(i1, i1x, i1y);

    std::vector<float> p11(n, 0.f), p12(n, 0.f), p21(n, 0.f), p22(n, 0.f);
    std::vector<float> i1w(n), i1wx(n), i1wy(n), grad(n), rho_c(n), v1(n), v2(n);

    for (int warp = 0; warp < opts.warps_per_level; warp++) {
        for (int y = 0; y < h; y++)
            for (int x = 0; x < w; x++) {
                size_t i = static_cast<size_t>(y) * w + x;
                float sx = x + u[i], sy = y + v[i];
                i1w[i] = sample_bilinear(i1, sx, sy);
                i1wx[i] = sample_bilinear(i1x, sx, sy);
                i1wy[i] = sample_bilinear(i1y, sx, sy);
                grad[i] = i1wx[i] * i1wx[i] + i1wy[i] * i1wy[i];
                rho_c[i] = i1w[i] - i1wx[i] * u[i] - i1wy[i] * v[i] - i0.data[i];
            }
        std::fill(p11.begin(), p11.end(), 0.f);
        std::fill(p12.begin(), p12.end(), 0.f);
        std::fill(p21.begin(), p21.end(), 0.f);
        std::fill(p22.begin(), p22.end(), 0.f);

        for (int it = 0; it < opts.inner_iterations; it++) {
            // Pointwise thresholding of the linearized residual.
            for (size_t i = 0; i < n; i++) {
                float rho = rho_c[i] + i1wx[i] * u[i] + i1wy[i] * v[i];
                float d1, d2;
                if (rho < -l_t * grad[i]) {
                    d1 = l_t * i1wx[i];
                    d2 = l_t * i1wy[i];
                } else if (rho > l_t * grad[i]) {
                    d1 = -l_t * i1wx[i];
                    d2 = -l_t * i1wy[i];
                } else if (grad[i] < grad_eps) {
                    d1 = d2 = 0.f;
                } else {
                    d1 = -rho / grad[i] * i1wx[i];
                    d2 = -rho / grad[i] * i1wy[i];
                }
                v1[i] = u[i] + d1;
                v2[i] = v[i] + d2;
            }
            // u = v - theta * div(p), then ascend the dual variables.
            for (int y = 0; y < h; y++)
                for (int x = 0; x < w; x++) {
                    size_t i = static_cast<size_t>(y) * w + x;
                    float div1 = (x > 0 ? p11[i] - p11[i - 1] : p11[i]) +
                                 (y > 0 ? p12[i] - p12[i - w] : p12[i]);
                    float div2 = (x > 0 ? p21[i] - p21[i - 1] : p21[i]) +
                                 (y > 0 ? p22[i] - p22[i - w] : p22[i]);
                    if (x == w - 1)
                        div1 -= p11[i], div2 -= p21[i];
                    if (y == h - 1)
                        div1 -= p12[i], div2 -= p22[i];
                    u[i] = v1[i] + theta * div1;
                    v[i] = v2[i] + theta * div2;
                }
            for (int y = 0; y < h; y++)
                for (int x = 0; x < w; x++) {
                    size_t i = static_cast<size_t>(y) * w + x;
                    float ux = x + 1 < w ? u[i + 1] - u[i] : 0.f;
                    float uy = y + 1 < h ? u[i + w] - u[i] : 0.f;
                    float vx = x + 1 < w ? v[i + 1] - v[i] : 0.f;
                    float vy = y + 1 < h ? v[i + w] - v[i] : 0.f;
                    float ng1 = 1.f + tau_step / theta * std::sqrt(ux * ux + uy * uy);
                    float ng2 = 1.f + tau_step / theta * std::sqrt(vx * vx + vy * vy);
                    p11[i] = (p11[i] + tau_step / theta * ux) / ng1;
                    p12[i] = (p12[i] + tau_step / theta * uy) / ng1;
                    p21[i] = (p21[i] + tau_step / theta * vx) / ng2;
                    p22[i] = (p22[i] + tau_step / theta * vy) / ng2;
                }
        }
        median_filter(u, w, h, opts.median_filter_radius);
        median_filter(v, w, h, opts.median_filter_radius);
    }
}

} // namespace

FlowField tvl1_flow(const Frame &a, const Frame &b, const FlowOptions &opts) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("tvl1_flow: frame dimensions differ");
    if (a.width < 16 || a.height < 16)
        throw std::invalid_argument("tvl1_flow: frames smaller than 16x16");
    if (opts.tv_weight <= 0 || opts.data_weight <= 0 || opts.warps_per_level <= 0 ||
        opts.inner_iterations <= 0)
        throw std::invalid_argument("tvl1_flow: options must be positive");

    Frame ga = luminance(a), gb = luminance(b);
    Frame na, nb;
    normalize_pair(ga, gb, na, nb);

    int min_dim = std::min(a.width, a.height);
    int num_levels = 1 + static_cast<int>(std::floor(std::log2(min_dim / 16.0)));
    num_levels = std::max(1, num_levels);
    Pyramid pa = build_pyramid(na, num_levels, 0.5);
    Pyramid pb = build_pyramid(nb, num_levels, 0.5);

    std::vector<float> u, v;
    for (int l = 0; l < num_levels; l++) {
        const Frame &l0 = pa.levels[l], &l1 = pb.levels[l];
        if (l == 0) {
            u.assign(l0.pixel_count(), 0.f);
            v.assign(l0.pixel_count(), 0.f);
        } else {
            FlowField prev(pa.levels[l - 1].width, pa.levels[l - 1].height);
            prev.u = u;
            prev.v = v;
            FlowField up = upscale_flow(prev, l0.width, l0.height);
            u = std::move(up.u);
            v = std::move(up.v);
        }
        tvl1_level(l0, l1, u, v, opts);
    }

    FlowField out(a.width, a.height);
    out.u = std::move(u);
    out.v = std::move(v);
    return out;
}

std::optional<AffineModel> fit_affine(const FlowField &flow, const std::vector<std::uint8_t> *mask,
                                      int irls_iters) {
    size_t count = 0;
    double cx = 0, cy = 0;
    for (int y = 0; y < flow.height; y++)
        for (int x = 0; x < flow.width; x++) {
            size_t i = flow.idx(x, y);
            if (mask && !(*mask)[i])
                continue;
            cx += x;
            cy += y;
            count++;
        }
    if (count < 6)
        return std::nullopt;
    cx /= count;
    cy /= count;

    const double eps2 = 1e-6; // Charbonnier epsilon squared
    std::array<double, 6> th{0, 0, 0, 0, 0, 0};
    for (int iter = 0; iter <= irls_iters; iter++) {
        // Weighted normal equations; u and v share weights so two 3x3 solves.
        double A[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        double bu[3] = {0, 0, 0}, bv[3] = {0, 0, 0};
        for (int y = 0; y < flow.height; y++)
            for (int x = 0; x < flow.width; x++) {
                size_t i = flow.idx(x, y);
                if (mask && !(*mask)[i])
                    continue;
                double px = x - cx, py = y - cy;
                double w = 1.0;
                if (iter > 0) {
                    double ru = flow.u[i] - (th[0] * px + th[1] * py + th[2]);
                    double rv = flow.v[i] - (th[3] * px + th[4] * py + th[5]);
                    double r2 = ru * ru + rv * rv;
                    w = 0.45 * std::pow(r2 + eps2, -0.55);
                }
                double row[3] = {px, py, 1.0};
                for (int r = 0; r < 3; r++) {
                    for (int c = 0; c < 3; c++)
                        A[r][c] += w * row[r] * row[c];
                    bu[r] += w * row[r] * flow.u[i];
                    bv[r] += w * row[r] * flow.v[i];
                }
            }
        // Gaussian elimination with partial pivoting on the 3x3 system.
        double M[3][4];
        auto solve3 = [&](const double rhs[3], double out[3]) -> bool {
            for (int r = 0; r < 3; r++) {
                for (int c = 0; c < 3; c++)
                    M[r][c] = A[r][c];
                M[r][3] = rhs[r];
            }
            for (int col = 0; col < 3; col++) {
                int piv = col;
                for (int r = col + 1; r < 3; r++)
                    if (std::fabs(M[r][col]) > std::fabs(M[piv][col]))
                        piv = r;
                if (std::fabs(M[piv][col]) < 1e-9 * count)
                    return false;
                std::swap(M[piv], M[col]);
                for (int r = 0; r < 3; r++) {
                    if (r == col)
                        continue;
                    double f = M[r][col] / M[col][col];
                    for (int c = col; c < 4; c++)
                        M[r][c] -= f * M[col][c];
                }
            }
            for (int r = 0; r < 3; r++)
                out[r] = M[r][3] / M[r][r];
            return true;
        };
        double su[3], sv[3];
        if (!solve3(bu, su) || !solve3(bv, sv))
            return std::nullopt;
        th = {su[0], su[1], su[2], sv[0], sv[1], sv[2]};
    }

    AffineModel m;
    m.t[0] = th[0];
    m.t[1] = th[1];
    m.t[2] = th[2] - th[0] * cx - th[1] * cy;
    m.t[3] = th[3];
    m.t[4] = th[4];
    m.t[5] = th[5] - th[3] * cx - th[4] * cy;
    return m;
}

Frame edge_map(const Frame &latent, double eta) {
    if (eta <= 0)
        throw std::invalid_argument("edge_map: eta must be positive");
    Frame lum = luminance(latent);
    Gradient2 g = gradient(lum);
    Frame out(lum.width, lum.height, 1);
    for (size_t i = 0; i < out.data.size(); i++) {
        double mag = std::sqrt(static_cast<double>(g.dx.data[i]) * g.dx.data[i] +
                               static_cast<double>(g.dy.data[i]) * g.dy.data[i]);
        out.data[i] = static_cast<float>(std::exp(-mag / eta));
    }
    return out;
}

} // namespace vdb
