#include "vdb/segment.hpp"

#include <algorithm>
#include <cmath>

namespace vdb {

namespace {

struct DiscOffset {
    int dx, dy;
    float dist2;
};

std::vector<DiscOffset> disc_offsets(int radius) {
    std::vector<DiscOffset> offs;
    for (int dy = -radius; dy <= radius; dy++)
        for (int dx = -radius; dx <= radius; dx++) {
            if (dx == 0 && dy == 0)
                continue;
            int d2 = dx * dx + dy * dy;
            if (d2 <= radius * radius)
                offs.push_back({dx, dy, static_cast<float>(d2)});
        }
    return offs;
}

// Precomputed state shared by the objective and the ICM sweeps.
struct SegContext {
    const SegmentationOptions &opts;
    double mu;
    std::vector<DiscOffset> offs;
    std::vector<Frame> lum;                     // per frame
    std::vector<std::vector<float>> omega;      // per frame: npix * offs.size(), 0 if off-frame
    std::vector<std::vector<const FlowField *>> coherence; // all flow fields of each frame
    // Outgoing temporal references: per frame, offset -> target pixel index (-1 off-frame).
    std::vector<std::vector<std::pair<int, std::vector<int>>>> outgoing;
    int width, height;

    SegContext(const std::vector<LabelMap> &labels, const std::vector<Frame> &latents,
               const FlowSet &flows, const SegmentationOptions &o, double mu_in)
        : opts(o), mu(mu_in) {
        size_t frames = labels.size();
        if (latents.size() != frames)
            throw std::invalid_argument("segmentation: latent/label counts differ");
        width = labels[0].width;
        height = labels[0].height;
        for (size_t i = 0; i < frames; i++)
            if (latents[i].width != width || latents[i].height != height ||
                labels[i].width != width || labels[i].height != height)
                throw std::invalid_argument("segmentation: latent/label dimensions differ");
        offs = disc_offsets(opts.neighborhood_radius);
        double inv_s2 = 1.0 / (opts.sigma * opts.sigma);
        for (size_t i = 0; i < frames; i++) {
            lum.push_back(luminance(latents[i]));
            std::vector<float> om(static_cast<size_t>(width) * height * offs.size(), 0.f);
            const Frame &L = lum.back();
            for (int y = 0; y < height; y++)
                for (int x = 0; x < width; x++) {
                    size_t base = (static_cast<size_t>(y) * width + x) * offs.size();
                    for (size_t k = 0; k < offs.size(); k++) {
                        int rx = x + offs[k].dx, ry = y + offs[k].dy;
                        if (rx < 0 || rx >= width || ry < 0 || ry >= height)
                            continue;
                        double dl = 255.0 * (L.at(x, y) - L.at(rx, ry));
                        om[base + k] =
                            static_cast<float>(std::exp(-(offs[k].dist2 + dl * dl) * inv_s2));
                    }
                }
            omega.push_back(std::move(om));
        }
        for (size_t i = 0; i < frames; i++) {
            std::vector<const FlowField *> coh;
            std::vector<std::pair<int, std::vector<int>>> out_i;
            if (i < flows.per_frame.size()) {
                for (const auto &[n, field] : flows.per_frame[i]) {
                    coh.push_back(&field);
                    int j = static_cast<int>(i) + n;
                    if (j < 0 || j >= static_cast<int>(frames))
                        continue;
                    std::vector<int> tgt(static_cast<size_t>(width) * height, -1);
                    for (int y = 0; y < height; y++)
                        for (int x = 0; x < width; x++) {
                            size_t p = field.idx(x, y);
                            int tx = static_cast<int>(std::lround(x + field.u[p]));
                            int ty = static_cast<int>(std::lround(y + field.v[p]));
                            if (tx >= 0 && tx < width && ty >= 0 && ty < height)
                                tgt[p] = ty * width + tx;
                        }
                    out_i.emplace_back(n, std::move(tgt));
                }
            }
            coherence.push_back(std::move(coh));
            outgoing.push_back(std::move(out_i));
        }
    }

    double objective(const std::vector<LabelMap> &s) const {
        double total = 0.0;
        for (size_t i = 0; i < s.size(); i++) {
            const auto &lab = s[i].labels;
            for (int y = 0; y < height; y++)
                for (int x = 0; x < width; x++) {
                    size_t p = static_cast<size_t>(y) * width + x;
                    size_t base = p * offs.size();
                    std::uint8_t me = lab[p];
                    for (size_t k = 0; k < offs.size(); k++) {
                        float w = omega[i][base + k];
                        if (w == 0.f)
                            continue;
                        if (lab[(static_cast<size_t>(y + offs[k].dy)) * width + x + offs[k].dx] != me)
                            total += w;
                    }
                    for (const FlowField *f : coherence[i]) {
                        const int nx[4] = {x + 1, x - 1, x, x};
                        const int ny[4] = {y, y, y + 1, y - 1};
                        for (int k = 0; k < 4; k++) {
                            if (nx[k] < 0 || nx[k] >= width || ny[k] < 0 || ny[k] >= height)
                                continue;
                            size_t q = static_cast<size_t>(ny[k]) * width + nx[k];
                            if (lab[q] != me)
                                continue;
                            double du = f->u[p] - f->u[q], dv = f->v[p] - f->v[q];
                            total += du * du + dv * dv;
                        }
                    }
                    for (const auto &[n, tgt] : outgoing[i]) {
                        if (tgt[p] < 0)
                            continue;
                        if (s[i + n].labels[tgt[p]] != me)
                            total += mu;
                    }
                }
        }
        return total;
    }
};

} // namespace

double pairwise_weight(int x0, int y0, int x1, int y1, const Frame &latent, double sigma) {
    if (sigma <= 0)
        throw std::invalid_argument("pairwise_weight: sigma must be positive");
    Frame lum = luminance(latent);
    double dx = x0 - x1, dy = y0 - y1;
    double dl = 255.0 * (lum.at_clamped(x0, y0) - lum.at_clamped(x1, y1));
    return std::exp(-(dx * dx + dy * dy + dl * dl) / (sigma * sigma));
}

LabelWarpResult warp_labels(const LabelMap &m, const FlowField &flow) {
    if (m.width != flow.width || m.height != flow.height)
        throw std::invalid_argument("warp_labels: flow dimensions do not match map");
    LabelWarpResult r{LabelMap(m.width, m.height), std::vector<std::uint8_t>(m.labels.size(), 0)};
    for (int y = 0; y < m.height; y++)
        for (int x = 0; x < m.width; x++) {
            size_t i = flow.idx(x, y);
            int sx = static_cast<int>(std::lround(x + flow.u[i]));
            int sy = static_cast<int>(std::lround(y + flow.v[i]));
            r.in_bounds[i] = sx >= 0 && sx < m.width && sy >= 0 && sy < m.height;
            r.labels.at(x, y) = m.at_clamped(sx, sy);
        }
    return r;
}

double segmentation_objective(const std::vector<LabelMap> &labels,
                              const std::vector<Frame> &latents, const FlowSet &flows,
                              const SegmentationOptions &opts, double mu) {
    if (labels.empty())
        return 0.0;
    return SegContext(labels, latents, flows, opts, mu).objective(labels);
}

RefineLabelsResult refine_labels(const std::vector<LabelMap> &init,
                                 const std::vector<Frame> &latents, const FlowSet &flows,
                                 const SegmentationOptions &opts, double mu) {
    RefineLabelsResult res;
    res.labels = init;
    if (init.empty())
        return res;
    if (opts.movable.empty()) {
        res.empty_movable = true;
        return res;
    }
    SegContext ctx(init, latents, flows, opts, mu);
    const int W = ctx.width, H = ctx.height;
    const size_t frames = init.size();
    res.initial_objective = ctx.objective(res.labels);

    // Candidate set per frame: ids present in the init map plus the movable ids.
    std::vector<std::vector<std::uint8_t>> candidates(frames);
    for (size_t i = 0; i < frames; i++) {
        std::array<bool, 256> seen{};
        for (std::uint8_t l : init[i].labels)
            seen[l] = true;
        for (int id : opts.movable)
            if (id >= 0 && id < 255)
                seen[id] = true;
        for (int id = 0; id < 256; id++)
            if (seen[id])
                candidates[i].push_back(static_cast<std::uint8_t>(id));
    }

    // Incoming temporal references: which (frame, pixel) map onto each pixel.
    std::vector<std::vector<std::vector<std::pair<int, int>>>> incoming(frames);
    for (size_t i = 0; i < frames; i++)
        incoming[i].resize(static_cast<size_t>(W) * H);
    for (size_t j = 0; j < frames; j++)
        for (const auto &[n, tgt] : ctx.outgoing[j])
            for (size_t p = 0; p < tgt.size(); p++)
                if (tgt[p] >= 0)
                    incoming[j + n][tgt[p]].emplace_back(static_cast<int>(j), static_cast<int>(p));

    // Local cost of assigning label k at pixel p: exact energy delta up to a
    // constant, so sequential ICM never increases the global objective.
    auto move_cost = [&](size_t i, int x, int y, std::uint8_t k) {
        size_t p = static_cast<size_t>(y) * W + x;
        const auto &lab = res.labels[i].labels;
        double cost = 0.0;
        size_t base = p * ctx.offs.size();
        for (size_t o = 0; o < ctx.offs.size(); o++) {
            float w = ctx.omega[i][base + o];
            if (w == 0.f)
                continue;
            size_t q = static_cast<size_t>(y + ctx.offs[o].dy) * W + x + ctx.offs[o].dx;
            if (lab[q] != k)
                cost += 2.0 * w;
        }
        for (const FlowField *f : ctx.coherence[i]) {
            const int nx[4] = {x + 1, x - 1, x, x};
            const int ny[4] = {y, y, y + 1, y - 1};
            for (int t = 0; t < 4; t++) {
                if (nx[t] < 0 || nx[t] >= W || ny[t] < 0 || ny[t] >= H)
                    continue;
                size_t q = static_cast<size_t>(ny[t]) * W + nx[t];
                if (lab[q] != k)
                    continue;
                double du = f->u[p] - f->u[q], dv = f->v[p] - f->v[q];
                cost += 2.0 * (du * du + dv * dv);
            }
        }
        for (const auto &[n, tgt] : ctx.outgoing[i])
            if (tgt[p] >= 0 && res.labels[i + n].labels[tgt[p]] != k)
                cost += mu;
        for (const auto &[j, rp] : incoming[i][p])
            if (res.labels[j].labels[rp] != k)
                cost += mu;
        return cost;
    };

    for (int sweep = 0; sweep < opts.icm_sweeps; sweep++) {
        size_t changed = 0;
        for (size_t i = 0; i < frames; i++) {
            for (int parity = 0; parity < 2; parity++)
                for (int y = 0; y < H; y++)
                    for (int x = (y + parity) & 1; x < W; x += 2) {
                        size_t p = static_cast<size_t>(y) * W + x;
                        if (!opts.movable.count(init[i].labels[p]))
                            continue;
                        std::uint8_t cur = res.labels[i].labels[p];
                        double best_cost = move_cost(i, x, y, cur);
                        std::uint8_t best = cur;
                        for (std::uint8_t k : candidates[i]) {
                            if (k == cur)
                                continue;
                            double c = move_cost(i, x, y, k);
                            if (c < best_cost) {
                                best_cost = c;
                                best = k;
                            }
                        }
                        if (best != cur) {
                            res.labels[i].labels[p] = best;
                            changed++;
                        }
                    }
        }
        res.sweep_objectives.push_back(ctx.objective(res.labels));
        if (changed == 0)
            break;
    }
    return res;
}

} // namespace vdb
