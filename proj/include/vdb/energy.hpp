#pragma once

#include "vdb/blur.hpp"
#include "vdb/flow.hpp"
#include "vdb/frame.hpp"
#include "vdb/segment.hpp"

#include <array>
#include <vector>

namespace vdb {

/** Model weights; defaults follow the published settings (λ=μ=250, β=γ=λ/2). */
struct EnergyWeights {
    double lambda = 250.0;      // blur data fidelity
    double mu = 250.0;          // temporal coupling, per neighbor offset
    double beta = 125.0;        // penalty on the quadratic coefficient a
    double gamma = 125.0;       // penalty on (b - prior_center)
    double sigma = 7.0;         // pairwise Potts bandwidth
    double eta = 0.1;           // edge-map falloff
    double prior_center = 1.0;  // C: the constant-velocity value of b
    int window = 2;             // temporal neighbor reach N
    int potts_radius = 5;       // truncation radius of the pairwise term
};

struct EnergyBreakdown {
    double data = 0;                // lambda * |grad(K l) - grad y|^2
    double param_reg = 0;           // beta a^2 + gamma (b - C)^2, both directions
    double motion_affine = 0;       // robust deviation from per-segment affine fits
    double motion_smooth = 0;       // intra-segment quadratic flow smoothness
    double tv_latent = 0;           // |grad l|
    double tv_flow = 0;             // edge-weighted |grad f|
    double potts = 0;               // omega-weighted label disagreement
    double temporal_brightness = 0; // mu * |l_i - l_{i+n}(x')|
    double temporal_labels = 0;     // mu * label disagreement along flows

    double total() const {
        return data + param_reg + motion_affine + motion_smooth + tv_latent + tv_flow + potts +
               temporal_brightness + temporal_labels;
    }
};

// Generalized Charbonnier (z^2 + eps^2)^0.45, shifted so a zero residual
// costs zero; the shift does not change any minimizer.
double charbonnier(double z2);

/** lambda * |grad(K latent) - grad blurry|^2 summed over pixels and channels. */
double blur_data_term(const Frame &latent, const Frame &blurry, const KernelField &kernels,
                      double lambda);

/**
 * The (fwd, bwd) arguments build_kernel expects for frame i: the forward flow
 * as is and the backward flow negated. A missing direction mirrors the other
 * one (constant-velocity assumption at sequence boundaries).
 */
std::pair<FlowField, FlowField> kernel_flow_args(const FlowSet &flows, int i, int width, int height);

// Per-segment affine fit with a mean-flow fallback for degenerate segments.
AffineModel segment_affine(const FlowField &flow, const std::vector<std::uint8_t> *mask);

/**
 * Full model energy of a frame window. Labels may be null (single segment,
 * no Potts or label terms). Affine models are refit internally, so the value
 * is a pure function of the arguments.
 */
EnergyBreakdown energy_total(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                             const FlowSet &flows, const std::vector<LabelMap> *labels,
                             const std::vector<std::array<TrajectoryParams, 2>> &params,
                             DutyCycle tau, KernelMode mode, const EnergyWeights &w);

} // namespace vdb
