#pragma once

#include "vdb/energy.hpp"

#include <vector>

namespace vdb {

struct DeconvOptions {
    int max_iters = 100;
    double tol = 1e-4; // on the relative primal change, averaged over 5 iterations
};

struct DeconvTraceRow {
    int iter = 0;
    double objective = 0;
    double rel_change = 0;
};

/**
 * Objective of the latent subproblem: blur data term, latent TV, and the
 * masked temporal brightness couplings of every flow in the set. Evaluates
 * the same terms as energy_total does for these components.
 */
double latent_objective(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                        const FlowSet &flows,
                        const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                        KernelMode mode, const EnergyWeights &w);

/**
 * Joint primal-dual estimate of all latent frames in the window. Kernels and
 * warps are frozen from the given flows/params; frames update simultaneously
 * each iteration. Starts from `init` (the blurry frames when null) and falls
 * back to the start point if the objective failed to decrease, so the result
 * never has a higher objective than its input. Latents stay within [0,1].
 */
std::vector<Frame> estimate_latent(const std::vector<Frame> &blurry, const FlowSet &flows,
                                   const std::vector<std::array<TrajectoryParams, 2>> &params,
                                   DutyCycle tau, KernelMode mode, const EnergyWeights &w,
                                   const DeconvOptions &opts = {},
                                   const std::vector<Frame> *init = nullptr,
                                   std::vector<DeconvTraceRow> *trace = nullptr);

} // namespace vdb
