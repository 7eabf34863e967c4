#pragma once

#include "vdb/blur.hpp"
#include "vdb/flow.hpp"
#include "vdb/frame.hpp"
#include "vdb/io.hpp"

#include <array>
#include <set>
#include <string>
#include <vector>

namespace vdb {

/** One scripted region: where it is, how it moves, how its streaks scale. */
struct RegionMotion {
    enum class Kind { Full, Rect, Mask } kind = Kind::Full;
    int x = 0, y = 0, w = 0, h = 0; // rect regions
    std::string mask_path;          // mask regions: nonzero pixels belong

    // Per-frame displacement u = c0 x + c1 y + c2, v = c3 x + c4 y + c5.
    // Constant motions only set c2, c5.
    std::array<double, 6> motion{};

    TrajectoryParams fwd, bwd;
    int label = -1; // -1: region index
};

/**
 * Text description of a synthetic sequence. Grammar, one directive per line
 * ('#' comments):
 *
 *   frames N
 *   tau T               exposure duty cycle (default 0.5)
 *   mode linear|curved  kernel discretization (default linear)
 *   noise SIGMA         gaussian sigma added to the blurry frames (default 0)
 *   seed S              noise rng seed
 *   movable ID...       label ids marked movable in the palette
 *   region full|rect X Y W H|mask PATH
 *   motion constant U V
 *   motion affine C0 C1 C2 C3 C4 C5
 *   params fwd|bwd A B C
 *   label ID
 *
 * motion/params/label apply to the most recent region directive.
 */
struct MotionScript {
    int frames = 0;
    double tau = 0.5;
    KernelMode mode = KernelMode::LinearSegments;
    double noise = 0.0;
    std::uint64_t seed = 0;
    std::vector<RegionMotion> regions;
    std::set<int> movable; // empty: labels of every region with nonzero motion
};

MotionScript parse_motion_script(const std::string &text);
MotionScript load_motion_script(const std::string &path);

struct SynthBundle {
    std::vector<Frame> sharp;
    std::vector<Frame> blurry;
    std::vector<LabelMap> labels; // the static region partition, per frame
    LabelPalette palette;
    FlowSet flows; // ground-truth +-1 flows
    std::vector<std::array<TrajectoryParams, 2>> params; // primary region, per frame
};

/**
 * Renders the script over a base image: region contents slide by the exact
 * per-frame maps, each frame is blurred with per-pixel kernels built from the
 * scripted flows and curve parameters, and the true flows come along.
 */
SynthBundle synthesize(const Frame &base, const MotionScript &script);

struct PsnrReport {
    std::vector<double> per_frame;
    double mean = 0;  // over the finite entries only
    int finite = 0;   // how many frames had a finite psnr
};

PsnrReport psnr_report(const std::vector<Frame> &test, const std::vector<Frame> &ref);

/** blur_/sharp_ PNGs, fwd_/bwd_ .flo files, labels + palette, params, manifest. */
void write_bundle(const std::string &dir, const SynthBundle &b);

} // namespace vdb
