#include "vdb/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace vdb {

namespace {

FlowSet init_flows(const std::vector<Frame> &frames, int reach, const FlowOptions &fopts) {
    const int F = static_cast<int>(frames.size());
    FlowSet fs;
    fs.per_frame.resize(F);
    if (F == 0)
        return fs;
    const int W = frames[0].width, H = frames[0].height;
    const bool big_enough = std::min(W, H) >= 16;
    for (int i = 0; i < F; i++)
        for (int n = -reach; n <= reach; n++) {
            if (n == 0 || i + n < 0 || i + n >= F)
                continue;
            FlowField f =
                big_enough ? tvl1_flow(frames[i], frames[i + n], fopts) : FlowField(W, H);
            fs.put(i, n, std::move(f));
        }
    return fs;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

namespace {

// Core alternation; window preconditions are the callers' business so that
// deblur_frame can hand in truncated windows at the sequence boundary.
DeblurResult deblur_impl(const std::vector<Frame> &blurry, const std::vector<LabelMap> *labels,
                         const PipelineConfig &cfg) {
    const int F = static_cast<int>(blurry.size());
    if (F == 0)
        throw std::invalid_argument("deblur_video: empty frame window");
    for (int i = 1; i < F; i++)
        if (!blurry[i].same_shape(blurry[0]))
            throw std::invalid_argument("deblur_video: frame shapes differ");
    if (labels && static_cast<int>(labels->size()) != F)
        throw std::invalid_argument("deblur_video: label count differs from frames");
    if (cfg.pyramid_levels < 1)
        throw std::invalid_argument("deblur_video: need at least one pyramid level");

    std::vector<Pyramid> pyr(F);
    for (int i = 0; i < F; i++)
        pyr[i] = build_pyramid(blurry[i], cfg.pyramid_levels, cfg.pyramid_scale);

    SegmentationOptions seg = cfg.segmentation;
    seg.sigma = cfg.weights.sigma; // ICM descends the same pairwise terms the energy uses
    seg.neighborhood_radius = cfg.weights.potts_radius;

    DeblurResult res;
    std::vector<Frame> level_blur(F);
    std::vector<LabelMap> level_labels;
    const std::vector<LabelMap> *labp = nullptr;

    for (int L = 0; L < cfg.pyramid_levels; L++) {
        auto level_t0 = std::chrono::steady_clock::now();
        const int W = pyr[0].levels[L].width, H = pyr[0].levels[L].height;
        for (int i = 0; i < F; i++)
            level_blur[i] = pyr[i].levels[L];

        if (L == 0) {
            res.latents = level_blur;
            res.flows = init_flows(level_blur, cfg.weights.window, cfg.flow);
            res.params.assign(F, {TrajectoryParams{}, TrajectoryParams{}});
            if (labels) {
                level_labels.resize(F);
                for (int i = 0; i < F; i++)
                    level_labels[i] = resample_labels((*labels)[i], W, H);
                labp = &level_labels;
            }
        } else {
            const int ow = res.latents[0].width;
            const double rho = static_cast<double>(W) / ow;
            for (int i = 0; i < F; i++) {
                res.latents[i] = resample_bilinear(res.latents[i], W, H);
                for (auto &[n, f] : res.flows.per_frame[i])
                    f = upscale_flow(f, W, H);
                for (auto &dir : res.params[i]) {
                    dir.a /= rho;
                    dir.c *= rho;
                }
                if (labp)
                    level_labels[i] = resample_labels(level_labels[i], W, H);
            }
        }

        double E = energy_total(res.latents, level_blur, res.flows, labp, res.params, cfg.tau,
                                cfg.mode, cfg.weights)
                       .total();
        res.trace.push_back({L, -1, "start", E, true, seconds_since(level_t0)});

        for (int outer = 0; outer < cfg.outer_iters; outer++) {
            if (cfg.estimate_params) {
                auto t0 = std::chrono::steady_clock::now();
                // Frames that are still half blurred drag a free curve fit
                // toward far-too-short streaks, so inside the pipeline the
                // search never re-decides globally: each outer round nudges the
                // incumbent (the exposure prior at first) within a small trust
                // region, and the pull toward short kernels fades as the
                // latents sharpen. The quadratic coefficient doubles with each
                // coarsening, so its box and step stretch by the accumulated
                // scale.
                ParamSearchOptions popt = cfg.param_search;
                popt.global = false;
                const double stretch =
                    std::pow(cfg.pyramid_scale, -(cfg.pyramid_levels - 1 - L));
                popt.a_min *= stretch;
                popt.a_max *= stretch;
                popt.a_step *= stretch;
                auto cand = res.params;
                for (int i = 0; i < F; i++) {
                    auto [fa, ba] = kernel_flow_args(res.flows, i, W, H);
                    const Frame pred = cfg.edge_predict_iters > 0
                                           ? shock_filter(res.latents[i], cfg.edge_predict_iters)
                                           : res.latents[i];
                    cand[i] = estimate_params(pred, level_blur[i], fa, ba, res.params[i],
                                              cfg.tau, cfg.mode, cfg.weights, popt)
                                  .params;
                }
                double Ec = energy_total(res.latents, level_blur, res.flows, labp, cand, cfg.tau,
                                         cfg.mode, cfg.weights)
                                .total();
                bool ok = Ec <= E;
                if (ok) {
                    res.params = std::move(cand);
                    E = Ec;
                }
                res.trace.push_back({L, outer, "params", E, ok, seconds_since(t0)});
            }

            if (cfg.refine_flows) {
                auto t0 = std::chrono::steady_clock::now();
                FlowRefineOptions ro = cfg.flow_refine;
                // Flows arriving from a coarser level carry resampling error the
                // local solver cannot shake off; offer it a native-resolution
                // seed once per level.
                ro.tvl1_reseed = L > 0;
                ro.tvl1 = cfg.flow;
                FlowSet cand = refine_flow(res.latents, level_blur, res.flows, labp, res.params,
                                           cfg.tau, cfg.mode, cfg.weights, ro, nullptr);
                double Ec = energy_total(res.latents, level_blur, cand, labp, res.params, cfg.tau,
                                         cfg.mode, cfg.weights)
                                .total();
                bool ok = Ec <= E;
                if (ok) {
                    res.flows = std::move(cand);
                    E = Ec;
                }
                res.trace.push_back({L, outer, "flows", E, ok, seconds_since(t0)});
            }

            {
                auto t0 = std::chrono::steady_clock::now();
                // Fresh solve from the observed frames: the subproblem is convex,
                // and a cold start descends immediately, while chaining the
                // previous latents in would hand the solver a primal point whose
                // temporal dual it cannot guess (see estimate_latent).
                std::vector<Frame> cand =
                    estimate_latent(level_blur, res.flows, res.params, cfg.tau, cfg.mode,
                                    cfg.weights, cfg.deconv, nullptr);
                double Ec = energy_total(cand, level_blur, res.flows, labp, res.params, cfg.tau,
                                         cfg.mode, cfg.weights)
                                .total();
                bool ok = Ec <= E;
                if (ok) {
                    res.latents = std::move(cand);
                    E = Ec;
                }
                res.trace.push_back({L, outer, "latents", E, ok, seconds_since(t0)});
            }

            if (labp && cfg.refine_segmentation) {
                auto t0 = std::chrono::steady_clock::now();
                RefineLabelsResult r =
                    refine_labels(level_labels, res.latents, res.flows, seg, cfg.weights.mu);
                double Ec = energy_total(res.latents, level_blur, res.flows, &r.labels, res.params,
                                         cfg.tau, cfg.mode, cfg.weights)
                                .total();
                bool ok = Ec <= E;
                if (ok) {
                    level_labels = std::move(r.labels);
                    E = Ec;
                }
                res.trace.push_back({L, outer, "labels", E, ok, seconds_since(t0)});
            }
        }

        if (cfg.level_restart && cfg.refine_flows) {
            // The alternation can settle into a rut where half-sharp latents
            // and slightly noisy flows keep excusing each other; states that
            // arrive by upscaling are especially prone, since interpolation
            // softens the latents just enough for the flow step to start
            // absorbing residual ghosts as per-pixel flow noise. Propose a
            // jointly rebuilt state - flows solved between the frames at this
            // resolution, latents solved under them, one polish of each - and
            // keep it only when the full energy agrees.
            auto t0 = std::chrono::steady_clock::now();
            FlowSet pf = init_flows(level_blur, cfg.weights.window, cfg.flow);
            std::vector<Frame> pl = estimate_latent(level_blur, pf, res.params, cfg.tau, cfg.mode,
                                                    cfg.weights, cfg.deconv, nullptr);
            pf = refine_flow(pl, level_blur, pf, labp, res.params, cfg.tau, cfg.mode, cfg.weights,
                             cfg.flow_refine, nullptr);
            pl = estimate_latent(level_blur, pf, res.params, cfg.tau, cfg.mode, cfg.weights,
                                 cfg.deconv, nullptr);
            double Ec = energy_total(pl, level_blur, pf, labp, res.params, cfg.tau, cfg.mode,
                                     cfg.weights)
                            .total();
            bool ok = Ec <= E;
            if (ok) {
                res.flows = std::move(pf);
                res.latents = std::move(pl);
                E = Ec;
            }
            res.trace.push_back({L, cfg.outer_iters, "restart", E, ok, seconds_since(t0)});
        }
    }

    if (labp)
        res.labels = level_labels;
    return res;
}

} // namespace

DeblurResult deblur_video(const std::vector<Frame> &blurry, const std::vector<LabelMap> *labels,
                          const PipelineConfig &cfg) {
    const int need = 2 * cfg.weights.window + 1;
    if (static_cast<int>(blurry.size()) < need)
        throw std::invalid_argument("deblur_video: need at least " + std::to_string(need) +
                                    " frames for temporal window " +
                                    std::to_string(cfg.weights.window));
    return deblur_impl(blurry, labels, cfg);
}

Frame deblur_frame(const std::vector<Frame> &blurry, const std::vector<LabelMap> *labels,
                   int center, const PipelineConfig &cfg) {
    const int F = static_cast<int>(blurry.size());
    if (center < 0 || center >= F)
        throw std::invalid_argument("deblur_frame: center outside the sequence");
    const int N = cfg.weights.window;
    const int lo = std::max(0, center - N), hi = std::min(F - 1, center + N);
    std::vector<Frame> win(blurry.begin() + lo, blurry.begin() + hi + 1);
    std::vector<LabelMap> lwin;
    if (labels)
        lwin.assign(labels->begin() + lo, labels->begin() + hi + 1);
    DeblurResult r = deblur_impl(win, labels ? &lwin : nullptr, cfg);
    return std::move(r.latents[center - lo]);
}

} // namespace vdb
