#include "vdb/io.hpp"
#include "vdb/pipeline.hpp"
#include "vdb/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace vdb;

// Caller mistakes - bad flags, bad config, missing inputs - exit 1; failures
// after work begins (writes, solver trouble) exit 2. Inputs are validated up
// front so a typo cannot cost a half-finished run.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string numbered(const std::string &dir, const std::string &stem, int i,
                     const char *ext = ".png") {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d", i);
    return dir + "/" + stem + buf + ext;
}

std::vector<Frame> read_frames(const std::string &dir, const std::string &prefix) {
    if (!std::filesystem::is_directory(dir))
        throw UsageError("frames directory not found: " + dir);
    try {
        if (prefix.empty())
            return read_frame_sequence(dir);
        std::vector<Frame> out;
        for (int i = 0;; i++) {
            std::string path = numbered(dir, prefix, i);
            if (!std::filesystem::exists(path))
                break;
            out.push_back(read_png(path));
        }
        if (out.empty())
            throw std::runtime_error("no frames matching " + dir + "/" + prefix + "NNNNNN.png");
        return out;
    } catch (const std::exception &e) {
        throw UsageError(e.what());
    }
}

std::vector<LabelMap> read_labels(const std::string &dir, const std::string &prefix) {
    if (!std::filesystem::is_directory(dir))
        throw UsageError("labels directory not found: " + dir);
    try {
        std::vector<LabelMap> out;
        for (int i = 0;; i++) {
            std::string path = numbered(dir, prefix, i);
            if (!std::filesystem::exists(path))
                break;
            out.push_back(read_label_png(path));
        }
        if (out.empty())
            throw std::runtime_error("no label maps matching " + dir + "/" + prefix +
                                     "NNNNNN.png");
        return out;
    } catch (const std::exception &e) {
        throw UsageError(e.what());
    }
}

// The one existence probe for single-file CLI inputs.
std::string input_file(const std::string &path, const char *what) {
    if (!std::filesystem::exists(path))
        throw UsageError(std::string(what) + " not found: " + path);
    return path;
}

bool parse_bool(const std::string &v, const std::string &key) {
    if (v == "1" || v == "true" || v == "on")
        return true;
    if (v == "0" || v == "false" || v == "off")
        return false;
    throw UsageError("config: '" + key + "' wants a boolean, got '" + v + "'");
}

KernelMode parse_mode(const std::string &v) {
    if (v == "linear")
        return KernelMode::LinearSegments;
    if (v == "curved")
        return KernelMode::Curved;
    throw UsageError("mode must be 'linear' or 'curved', got '" + v + "'");
}

void apply_config(PipelineConfig &cfg, const std::string &key, const std::string &val) {
    auto d = [&] {
        try {
            size_t pos;
            double x = std::stod(val, &pos);
            if (pos != val.size())
                throw std::invalid_argument("");
            return x;
        } catch (...) {
            throw UsageError("config: '" + key + "' wants a number, got '" + val + "'");
        }
    };
    auto n = [&] { return static_cast<int>(d()); };

    if (key == "levels")
        cfg.pyramid_levels = n();
    else if (key == "scale")
        cfg.pyramid_scale = d();
    else if (key == "outers")
        cfg.outer_iters = n();
    else if (key == "tau")
        cfg.tau.tau = d();
    else if (key == "mode")
        cfg.mode = parse_mode(val);
    else if (key == "window")
        cfg.weights.window = n();
    else if (key == "lambda")
        cfg.weights.lambda = d();
    else if (key == "mu")
        cfg.weights.mu = d();
    else if (key == "beta")
        cfg.weights.beta = d();
    else if (key == "gamma")
        cfg.weights.gamma = d();
    else if (key == "sigma")
        cfg.weights.sigma = d();
    else if (key == "eta")
        cfg.weights.eta = d();
    else if (key == "prior_center")
        cfg.weights.prior_center = d();
    else if (key == "potts_radius")
        cfg.weights.potts_radius = n();
    else if (key == "estimate_params")
        cfg.estimate_params = parse_bool(val, key);
    else if (key == "refine_flows")
        cfg.refine_flows = parse_bool(val, key);
    else if (key == "refine_segmentation")
        cfg.refine_segmentation = parse_bool(val, key);
    else if (key == "level_restart")
        cfg.level_restart = parse_bool(val, key);
    else if (key == "edge_predict")
        cfg.edge_predict_iters = n();
    else if (key == "flow_tv")
        cfg.flow.tv_weight = d();
    else if (key == "flow_data")
        cfg.flow.data_weight = d();
    else if (key == "flow_warps")
        cfg.flow.warps_per_level = n();
    else if (key == "flow_iters")
        cfg.flow.inner_iterations = n();
    else if (key == "flow_median")
        cfg.flow.median_filter_radius = n();
    else if (key == "refine_linearizations")
        cfg.flow_refine.linearizations = n();
    else if (key == "refine_sweeps")
        cfg.flow_refine.solver_sweeps = n();
    else if (key == "refine_perturbation")
        cfg.flow_refine.perturbation = d();
    else if (key == "deconv_iters")
        cfg.deconv.max_iters = n();
    else if (key == "deconv_tol")
        cfg.deconv.tol = d();
    else if (key == "icm_sweeps")
        cfg.segmentation.icm_sweeps = n();
    else if (key == "a_min")
        cfg.param_search.a_min = d();
    else if (key == "a_max")
        cfg.param_search.a_max = d();
    else if (key == "a_step")
        cfg.param_search.a_step = d();
    else if (key == "b_min")
        cfg.param_search.b_min = d();
    else if (key == "b_max")
        cfg.param_search.b_max = d();
    else if (key == "b_step")
        cfg.param_search.b_step = d();
    else if (key == "search_rounds")
        cfg.param_search.rounds = n();
    else if (key == "scan_stride")
        cfg.param_search.scan_stride = n();
    else if (key == "golden_iters")
        cfg.param_search.golden_iters = n();
    else
        throw UsageError("config: unknown key '" + key + "'");
}

void load_config(PipelineConfig &cfg, const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (auto h = line.find('#'); h != std::string::npos)
            line.erase(h);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        if (trim(line).empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        apply_config(cfg, key, val);
    }
}

void write_trace_csv(const std::string &path, const std::vector<PipelineTraceRow> &rows) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write trace file: " + path);
    out << "level,outer,step,energy,accepted,seconds\n";
    char buf[96];
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), "%.12g,%d,%.3f", r.energy, r.accepted ? 1 : 0, r.seconds);
        out << r.level << ',' << r.outer << ',' << r.step << ',' << buf << '\n';
    }
}

int run(int argc, char **argv) {
    CLI::App app{"video deblurring with pixel-wise motion kernels"};
    app.require_subcommand(1);

    // deblur
    auto *deblur = app.add_subcommand("deblur", "deblur a numbered PNG sequence");
    std::string in_dir, out_dir, in_prefix, labels_dir, labels_prefix = "labels_", palette_path,
                                                        config_path, trace_path, mode_str;
    int bit_depth = 16;
    PipelineConfig cfg;
    int f_levels = 0, f_outers = 0, f_window = 0;
    double f_tau = 0, f_scale = 0;
    deblur->add_option("-i,--input", in_dir, "directory of blurry frames")->required();
    deblur->add_option("-o,--output", out_dir, "output directory")->required();
    deblur->add_option("--prefix", in_prefix, "input filename prefix (default: any numbered png)");
    deblur->add_option("--labels", labels_dir, "directory of label maps");
    deblur->add_option("--labels-prefix", labels_prefix, "label filename prefix");
    deblur->add_option("--palette", palette_path, "palette file naming the movable classes");
    deblur->add_option("-c,--config", config_path, "key = value configuration file");
    deblur->add_option("--trace", trace_path, "write the energy trace as CSV");
    deblur->add_option("--levels", f_levels, "pyramid levels");
    deblur->add_option("--scale", f_scale, "pyramid scale factor");
    deblur->add_option("--outers", f_outers, "alternation rounds per level");
    deblur->add_option("--tau", f_tau, "exposure duty cycle");
    deblur->add_option("--mode", mode_str, "kernel mode: linear|curved");
    deblur->add_option("--window", f_window, "temporal neighbor reach");
    deblur->add_option("--bit-depth", bit_depth, "output png bit depth (8 or 16)");
    bool save_flows = false;
    deblur->add_flag("--save-flows", save_flows, "also write the refined flow fields as .flo");

    // flow
    auto *flow = app.add_subcommand("flow", "optical flow between two images");
    std::string flow_a, flow_b, flow_out, flow_la, flow_lb;
    FlowOptions fopts;
    bool flow_refine = false;
    double flow_mu = 250;
    flow->add_option("-a,--first", flow_a, "source image")->required();
    flow->add_option("-b,--second", flow_b, "target image")->required();
    flow->add_option("-o,--output", flow_out, ".flo output path")->required();
    flow->add_option("--tv", fopts.tv_weight, "smoothness weight");
    flow->add_option("--data", fopts.data_weight, "data weight");
    flow->add_option("--warps", fopts.warps_per_level, "warps per pyramid level");
    flow->add_option("--iters", fopts.inner_iterations, "inner iterations per warp");
    flow->add_option("--median", fopts.median_filter_radius, "median filter radius");
    flow->add_flag("--refine", flow_refine, "polish with the affine/smoothness model");
    flow->add_option("--labels-a", flow_la, "label map of the source (with --refine)");
    flow->add_option("--labels-b", flow_lb, "label map of the target (with --refine)");
    flow->add_option("--mu", flow_mu, "temporal weight during refinement");

    // synth
    auto *synth = app.add_subcommand("synth", "render a synthetic blurry sequence");
    std::string synth_base, synth_script, synth_out;
    synth->add_option("--base", synth_base, "sharp base image")->required();
    synth->add_option("--script", synth_script, "motion script")->required();
    synth->add_option("-o,--output", synth_out, "bundle output directory")->required();

    // eval
    auto *eval = app.add_subcommand("eval", "psnr of one sequence against another");
    std::string eval_test, eval_ref, eval_tp = "latent_", eval_rp = "sharp_";
    eval->add_option("--test", eval_test, "directory of frames under test")->required();
    eval->add_option("--ref", eval_ref, "directory of reference frames")->required();
    eval->add_option("--test-prefix", eval_tp, "filename prefix in --test");
    eval->add_option("--ref-prefix", eval_rp, "filename prefix in --ref");

    // kernel-dump
    auto *kdump = app.add_subcommand("kernel-dump", "print one pixel's blur kernel taps");
    std::vector<double> kd_fwd{0, 0}, kd_bwd{0, 0}, kd_pf{0, 1, 0}, kd_pb{0, 1, 0};
    double kd_tau = 0.5;
    std::string kd_mode = "linear";
    kdump->add_option("--fwd", kd_fwd, "forward flow u v")->expected(2);
    kdump->add_option("--bwd", kd_bwd, "arriving flow u v (already negated)")->expected(2);
    kdump->add_option("--params-fwd", kd_pf, "forward a b c")->expected(3);
    kdump->add_option("--params-bwd", kd_pb, "backward a b c")->expected(3);
    kdump->add_option("--tau", kd_tau, "exposure duty cycle");
    kdump->add_option("--mode", kd_mode, "linear|curved");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (deblur->parsed()) {
        if (!config_path.empty())
            load_config(cfg, config_path);
        if (deblur->count("--levels"))
            cfg.pyramid_levels = f_levels;
        if (deblur->count("--scale"))
            cfg.pyramid_scale = f_scale;
        if (deblur->count("--outers"))
            cfg.outer_iters = f_outers;
        if (deblur->count("--tau"))
            cfg.tau.tau = f_tau;
        if (deblur->count("--mode"))
            cfg.mode = parse_mode(mode_str);
        if (deblur->count("--window"))
            cfg.weights.window = f_window;
        if (bit_depth != 8 && bit_depth != 16)
            throw UsageError("--bit-depth must be 8 or 16");

        std::vector<Frame> frames = read_frames(in_dir, in_prefix);
        if (static_cast<int>(frames.size()) < 2 * cfg.weights.window + 1)
            throw UsageError("need at least " + std::to_string(2 * cfg.weights.window + 1) +
                             " frames for temporal window " + std::to_string(cfg.weights.window) +
                             ", got " + std::to_string(frames.size()));
        std::vector<LabelMap> labels;
        bool have_labels = !labels_dir.empty();
        if (have_labels) {
            labels = read_labels(labels_dir, labels_prefix);
            if (labels.size() != frames.size())
                throw UsageError("label map count differs from frame count");
        }
        if (!palette_path.empty())
            for (int id : read_palette(input_file(palette_path, "palette file")).movable)
                cfg.segmentation.movable.insert(id);

        DeblurResult r = deblur_video(frames, have_labels ? &labels : nullptr, cfg);

        std::filesystem::create_directories(out_dir);
        write_frame_sequence(out_dir, "latent_", r.latents, bit_depth);
        std::vector<TrajectoryParamsRecord> recs;
        for (size_t i = 0; i < r.params.size(); i++)
            for (int dir = 0; dir < 2; dir++)
                recs.push_back({static_cast<int>(i), dir, r.params[i][dir].a, r.params[i][dir].b,
                                r.params[i][dir].c});
        write_params_txt(out_dir + "/params.txt", recs);
        for (size_t i = 0; i < r.labels.size(); i++)
            write_label_png(numbered(out_dir, "labels_", static_cast<int>(i)), r.labels[i]);
        if (save_flows)
            for (size_t i = 0; i < r.flows.per_frame.size(); i++)
                for (const auto &[n, f] : r.flows.per_frame[i]) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "flow_%06zu_%c%d.flo", i, n < 0 ? 'm' : 'p',
                                  std::abs(n));
                    write_flo(out_dir + "/" + name, f);
                }
        if (!trace_path.empty())
            write_trace_csv(trace_path, r.trace);
        std::cout << "deblurred " << frames.size() << " frames into " << out_dir << "\n";
        return 0;
    }

    if (flow->parsed()) {
        Frame a = read_png(input_file(flow_a, "image"));
        Frame b = read_png(input_file(flow_b, "image"));
        FlowField f = tvl1_flow(a, b, fopts);
        if (flow_refine) {
            if (flow_la.empty() != flow_lb.empty())
                throw UsageError("--labels-a and --labels-b must be given together");
            std::vector<Frame> pair = {a, b};
            FlowSet fs;
            fs.per_frame.resize(2);
            fs.put(0, 1, std::move(f));
            std::vector<LabelMap> lm;
            if (!flow_la.empty()) {
                lm.push_back(read_label_png(input_file(flow_la, "label map")));
                lm.push_back(read_label_png(input_file(flow_lb, "label map")));
            }
            EnergyWeights w;
            w.lambda = 0; // no blur model here, motion terms only
            w.mu = flow_mu;
            std::vector<std::array<TrajectoryParams, 2>> pr(2);
            FlowSet polished = refine_flow(pair, pair, fs, lm.empty() ? nullptr : &lm, pr,
                                           DutyCycle{0.5}, KernelMode::LinearSegments, w, {});
            f = polished.get(0, 1);
        }
        write_flo(flow_out, f);
        std::cout << "wrote " << flow_out << "\n";
        return 0;
    }

    if (synth->parsed()) {
        MotionScript script;
        Frame base;
        try {
            script = load_motion_script(input_file(synth_script, "motion script"));
            base = read_png(input_file(synth_base, "base image"));
        } catch (const std::exception &e) {
            throw UsageError(e.what());
        }
        SynthBundle bundle = synthesize(base, script);
        write_bundle(synth_out, bundle);
        std::cout << "wrote " << bundle.blurry.size() << " frames into " << synth_out << "\n";
        return 0;
    }

    if (eval->parsed()) {
        std::vector<Frame> test = read_frames(eval_test, eval_tp);
        std::vector<Frame> ref = read_frames(eval_ref, eval_rp);
        if (test.size() != ref.size())
            throw UsageError("sequence lengths differ");
        PsnrReport rep = psnr_report(test, ref);
        for (size_t i = 0; i < rep.per_frame.size(); i++)
            std::printf("frame %zu: %.4f dB\n", i, rep.per_frame[i]);
        std::printf("mean: %.4f dB over %d finite frames\n", rep.mean, rep.finite);
        return 0;
    }

    if (kdump->parsed()) {
        PixelKernel k = build_kernel(
            {static_cast<float>(kd_fwd[0]), static_cast<float>(kd_fwd[1])},
            {static_cast<float>(kd_bwd[0]), static_cast<float>(kd_bwd[1])},
            TrajectoryParams{kd_pf[0], kd_pf[1], kd_pf[2]},
            TrajectoryParams{kd_pb[0], kd_pb[1], kd_pb[2]}, DutyCycle{kd_tau}, parse_mode(kd_mode));
        for (const KernelSample &s : k.samples)
            std::printf("%d %d %.9g\n", static_cast<int>(std::lround(s.dx)),
                        static_cast<int>(std::lround(s.dy)), s.w);
        return 0;
    }
    return 2; // unreachable: require_subcommand
}

} // namespace

int main(int argc, char **argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError &e) {
        std::cerr << "vdb: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "vdb: " << e.what() << "\n";
        return 2;
    }
}
