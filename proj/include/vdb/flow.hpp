#pragma once

#include "vdb/blur.hpp"
#include "vdb/frame.hpp"

#include <map>
#include <optional>
#include <vector>

namespace vdb {

struct EnergyWeights;

/** u = t0*x + t1*y + t2, v = t3*x + t4*y + t5. */
struct AffineModel {
    double t[6] = {0, 0, 0, 0, 0, 0};

    Vec2 eval(double x, double y) const {
        return {static_cast<float>(t[0] * x + t[1] * y + t[2]),
                static_cast<float>(t[3] * x + t[4] * y + t[5])};
    }
};

struct FlowOptions {
    double tv_weight = 1.0;
    double data_weight = 0.15;
    int warps_per_level = 5;
    int inner_iterations = 50;
    int median_filter_radius = 2;
};

/** All pairwise flows of a window: get(i, n) maps frame i onto frame i+n. */
struct FlowSet {
    std::vector<std::map<int, FlowField>> per_frame;

    int frames() const { return static_cast<int>(per_frame.size()); }
    bool has(int i, int n) const {
        return i >= 0 && i < frames() && per_frame[i].count(n) > 0;
    }
    const FlowField &get(int i, int n) const { return per_frame[i].at(n); }
    FlowField &get(int i, int n) { return per_frame[i].at(n); }
    void put(int i, int n, FlowField f) {
        f.src = i;
        f.dst = i + n;
        per_frame[i][n] = std::move(f);
    }
};

/** Duality-based TV-L1 flow from `a` to `b`, coarse to fine with warping. */
FlowField tvl1_flow(const Frame &a, const Frame &b, const FlowOptions &opts = {});

/**
 * Robust affine fit to a flow field over the masked pixels (IRLS with a
 * generalized Charbonnier loss). Fewer than 6 pixels or a rank-deficient
 * design yields nullopt so callers can fall back per segment.
 */
std::optional<AffineModel> fit_affine(const FlowField &flow,
                                      const std::vector<std::uint8_t> *mask = nullptr,
                                      int irls_iters = 10);

/** g = exp(-|grad l| / eta), in (0, 1]; small where the latent has edges. */
Frame edge_map(const Frame &latent, double eta = 0.1);

struct FlowRefineOptions {
    int linearizations = 10; // outer relinearization passes
    int solver_sweeps = 30;  // red-black Gauss-Seidel sweeps per pass
    double perturbation = 0.5; // px step for numeric kernel derivatives

    // Also propose a fresh TV-L1 solve between the blurry frames as a seed and
    // polish whichever of {current, fresh} scores the lower field energy. The
    // local solver cannot undo a structured error in its starting point, so a
    // caller whose flows came from another resolution should enable this.
    bool tvl1_reseed = false;
    FlowOptions tvl1;
};

/** What happened to one field during refine_flow. */
struct FlowRefineFieldReport {
    int frame = 0;
    int offset = 0;
    double input_energy = 0;   // field energy of the field as given
    double refined_energy = 0; // after polishing the given field
    double reseed_energy = 0;  // after polishing the fresh seed (0 when disabled)
    int chosen = 0;            // 0 kept input, 1 polished input, 2 polished fresh seed
};

/**
 * Block-coordinate refinement of every flow in the set against the blur,
 * affine-prior, smoothness, and temporal terms. A refined field replaces its
 * input only when the full model energy does not increase. Null labels mean
 * a single global segment.
 */
FlowSet refine_flow(const std::vector<Frame> &latents, const std::vector<Frame> &blurry,
                    const FlowSet &flows, const std::vector<LabelMap> *labels,
                    const std::vector<std::array<TrajectoryParams, 2>> &params, DutyCycle tau,
                    KernelMode mode, const EnergyWeights &weights,
                    const FlowRefineOptions &opts = {},
                    std::vector<FlowRefineFieldReport> *report = nullptr);

} // namespace vdb
