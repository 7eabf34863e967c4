#pragma once

#include "vdb/blur.hpp"
#include "vdb/energy.hpp"
#include "vdb/frame.hpp"

#include <array>

namespace vdb {

struct ParamSearchOptions {
    double a_min = -0.05, a_max = 0.05, a_step = 0.005;
    double b_min = 0.5, b_max = 1.5, b_step = 0.05;
    int rounds = 2;        // block-coordinate passes over the two directions
    int golden_iters = 12; // per-axis refinement after each grid pass
    // The scan objective is a sum of independent per-pixel fits, so the search
    // can run on a subsampled pixel lattice; the final accept/reject against
    // the incumbent is always at full resolution. 1 = scan every pixel.
    int scan_stride = 2;
    // Global scans sweep the whole box once before tightening; local searches
    // only probe a few steps around the incumbent. Half-deblurred frames pull
    // the fit toward too-short streaks, so once a reasonable estimate exists
    // (from a coarser pyramid level), staying near it beats re-deciding from
    // scratch against frames that are not sharp yet.
    bool global = true;
};

struct ParamSearchResult {
    std::array<TrajectoryParams, 2> params; // [forward, backward]
    double objective = 0.0;
    std::array<bool, 2> degenerate = {false, false}; // direction had no usable flow
};

// Blurring fit of one frame under the given curve parameters plus the pull of
// both directions toward (0, prior_center). Same data term the full energy uses.
double trajectory_objective(const Frame &latent, const Frame &blurry, const FlowField &fwd,
                            const FlowField &bwd, const std::array<TrajectoryParams, 2> &params,
                            DutyCycle tau, KernelMode mode, const EnergyWeights &w);

// Coarse grid over (a, b) for one direction at a time, two alternating rounds,
// then golden-section polish on each axis. `fwd`/`bwd` are in kernel convention
// (backward flow already negated). Never returns a worse objective than the
// incumbent; exact ties prefer the candidate closest to (0, prior_center).
// A direction whose flow is identically zero cannot be observed through the
// kernel, so it is reset to the prior and flagged.
ParamSearchResult estimate_params(const Frame &latent, const Frame &blurry, const FlowField &fwd,
                                  const FlowField &bwd,
                                  const std::array<TrajectoryParams, 2> &incumbent, DutyCycle tau,
                                  KernelMode mode, const EnergyWeights &w,
                                  const ParamSearchOptions &opts = {});

} // namespace vdb
