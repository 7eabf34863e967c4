#pragma once

#include "vdb/blur.hpp"
#include "vdb/deconv.hpp"
#include "vdb/energy.hpp"
#include "vdb/flow.hpp"
#include "vdb/segment.hpp"
#include "vdb/trajectory.hpp"

#include <array>
#include <string>
#include <vector>

namespace vdb {

struct PipelineConfig {
    int pyramid_levels = 3;
    double pyramid_scale = 0.5;
    int outer_iters = 3; // alternation rounds per pyramid level

    DutyCycle tau{0.5};
    KernelMode mode = KernelMode::LinearSegments;
    EnergyWeights weights;

    bool estimate_params = true;
    bool refine_flows = true;
    bool refine_segmentation = true;

    // After the rounds at each level, propose a jointly rebuilt flows+latents
    // state at native resolution and adopt it only if the total energy drops.
    // Rescues the alternation when an upscaled (interpolation-softened) start
    // has settled into a poor local optimum.
    bool level_restart = true;

    // Shock-filter iterations applied to the latents the curve fit sees (the
    // fit itself and its acceptance test are unchanged). Frames that are still
    // partly blurred bias the fit toward too-short streaks; steepened edges
    // stand in for the sharpness the latents will have once deconvolved.
    // 0 fits the raw latents.
    int edge_predict_iters = 4;

    FlowOptions flow;
    FlowRefineOptions flow_refine;
    DeconvOptions deconv;
    SegmentationOptions segmentation; // movable set + sweep count; bandwidths follow weights
    ParamSearchOptions param_search;
};

/** One energy reading; outer == -1 marks the state a level starts from. */
struct PipelineTraceRow {
    int level = 0;
    int outer = -1;
    std::string step;
    double energy = 0;
    bool accepted = true; // false: the step's proposal was rejected and rolled back
    double seconds = 0;   // wall time the step took
};

struct DeblurResult {
    std::vector<Frame> latents;
    FlowSet flows;
    std::vector<LabelMap> labels; // empty when the caller gave no segmentation
    std::vector<std::array<TrajectoryParams, 2>> params;
    std::vector<PipelineTraceRow> trace;
};

/**
 * Coarse-to-fine alternation: trajectory parameters, flows, latents, labels,
 * each proposal kept only if the full model energy does not increase, so the
 * energy trace is non-increasing within every pyramid level.
 */
DeblurResult deblur_video(const std::vector<Frame> &blurry, const std::vector<LabelMap> *labels,
                          const PipelineConfig &cfg);

/** Runs the pipeline on the frames within `window` of center; returns its latent. */
Frame deblur_frame(const std::vector<Frame> &blurry, const std::vector<LabelMap> *labels,
                   int center, const PipelineConfig &cfg);

} // namespace vdb
