#pragma once

#include "vdb/flow.hpp"
#include "vdb/frame.hpp"

#include <set>
#include <vector>

namespace vdb {

struct SegmentationOptions {
    double sigma = 7.0;          // joint space/intensity bandwidth
    int neighborhood_radius = 5; // px radius of the pairwise disc
    int icm_sweeps = 10;
    std::set<int> movable; // class ids eligible for refinement
};

/**
 * exp(-(|x-r|^2 + |l(x)-l(r)|^2) / sigma^2) with intensities on a [0,255]
 * scale; latent is reduced to luminance if it has color channels.
 */
double pairwise_weight(int x0, int y0, int x1, int y1, const Frame &latent, double sigma);

struct LabelWarpResult {
    LabelMap labels; // nearest-neighbor transport, clamp-to-edge values
    std::vector<std::uint8_t> in_bounds;
};

/** Nearest-neighbor label transport along the flow; labels stay categorical. */
LabelWarpResult warp_labels(const LabelMap &m, const FlowField &flow);

struct RefineLabelsResult {
    std::vector<LabelMap> labels;
    bool empty_movable = false;          // movable set was empty, init returned
    double initial_objective = 0.0;
    std::vector<double> sweep_objectives; // after each completed sweep
};

/**
 * Checkerboard ICM over pixels whose initial label is movable. Candidate
 * labels are the ids present in the frame's init map plus the movable set;
 * pixels of other classes are returned bitwise unchanged. Each accepted move
 * strictly lowers the segmentation objective, ties keep the current label.
 */
RefineLabelsResult refine_labels(const std::vector<LabelMap> &init,
                                 const std::vector<Frame> &latents, const FlowSet &flows,
                                 const SegmentationOptions &opts, double mu);

/** The objective refine_labels descends; exposed for tests and diagnostics. */
double segmentation_objective(const std::vector<LabelMap> &labels,
                              const std::vector<Frame> &latents, const FlowSet &flows,
                              const SegmentationOptions &opts, double mu);

} // namespace vdb
