#include "vdb/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vdb {

namespace {

[[noreturn]] void parse_fail(int line, const std::string &msg) {
    throw std::runtime_error("motion script line " + std::to_string(line) + ": " + msg);
}

struct RegionMaps {
    std::array<double, 6> d; // forward displacement coefficients
    double inv[4];           // (I + A)^-1 for the exact one-step backward map
    double tx, ty;

    Vec2 forward(double x, double y) const {
        return {static_cast<float>(d[0] * x + d[1] * y + d[2]),
                static_cast<float>(d[3] * x + d[4] * y + d[5])};
    }
    // B(p): where this content was one frame earlier; inverse of p -> p + d(p).
    void backward(double &x, double &y) const {
        double rx = x - tx, ry = y - ty;
        double bx = inv[0] * rx + inv[1] * ry;
        double by = inv[2] * rx + inv[3] * ry;
        x = bx;
        y = by;
    }
};

RegionMaps make_maps(const RegionMotion &r) {
    RegionMaps m;
    m.d = r.motion;
    double a00 = 1.0 + r.motion[0], a01 = r.motion[1];
    double a10 = r.motion[3], a11 = 1.0 + r.motion[4];
    double det = a00 * a11 - a01 * a10;
    if (std::fabs(det) < 1e-9)
        throw std::runtime_error("motion script: region motion is not invertible");
    m.inv[0] = a11 / det;
    m.inv[1] = -a01 / det;
    m.inv[2] = -a10 / det;
    m.inv[3] = a00 / det;
    m.tx = r.motion[2];
    m.ty = r.motion[5];
    return m;
}

bool region_moves(const RegionMotion &r) {
    for (double c : r.motion)
        if (c != 0.0)
            return true;
    return false;
}

std::uint64_t splitmix64(std::uint64_t &s) {
    s += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct GaussGen {
    std::uint64_t state;
    explicit GaussGen(std::uint64_t seed) : state(seed) {}
    double uniform() { return ((splitmix64(state) >> 11) + 1.0) * 0x1.0p-53; } // (0, 1]
    double gauss() {
        double u1 = uniform(), u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

std::string numbered(const std::string &dir, const char *stem, int i, const char *ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s%06d%s", stem, i, ext);
    return dir + "/" + buf;
}

} // namespace

MotionScript parse_motion_script(const std::string &text) {
    MotionScript s;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    RegionMotion *cur = nullptr;
    while (std::getline(in, line)) {
        lineno++;
        if (auto h = line.find('#'); h != std::string::npos)
            line.erase(h);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key))
            continue;
        auto need_region = [&]() -> RegionMotion & {
            if (!cur)
                parse_fail(lineno, "'" + key + "' before any region");
            return *cur;
        };
        if (key == "frames") {
            if (!(ls >> s.frames) || s.frames < 1)
                parse_fail(lineno, "frames needs a positive count");
        } else if (key == "tau") {
            if (!(ls >> s.tau) || s.tau <= 0 || s.tau > 1)
                parse_fail(lineno, "tau must be in (0, 1]");
        } else if (key == "mode") {
            std::string m;
            ls >> m;
            if (m == "linear")
                s.mode = KernelMode::LinearSegments;
            else if (m == "curved")
                s.mode = KernelMode::Curved;
            else
                parse_fail(lineno, "mode must be linear or curved");
        } else if (key == "noise") {
            if (!(ls >> s.noise) || s.noise < 0)
                parse_fail(lineno, "noise needs a non-negative sigma");
        } else if (key == "seed") {
            if (!(ls >> s.seed))
                parse_fail(lineno, "seed needs an integer");
        } else if (key == "movable") {
            int id;
            while (ls >> id)
                s.movable.insert(id);
        } else if (key == "region") {
            std::string kind;
            if (!(ls >> kind))
                parse_fail(lineno, "region needs a kind");
            RegionMotion r;
            if (kind == "full") {
                r.kind = RegionMotion::Kind::Full;
            } else if (kind == "rect") {
                r.kind = RegionMotion::Kind::Rect;
                if (!(ls >> r.x >> r.y >> r.w >> r.h) || r.w <= 0 || r.h <= 0)
                    parse_fail(lineno, "rect needs x y w h with positive size");
            } else if (kind == "mask") {
                r.kind = RegionMotion::Kind::Mask;
                if (!(ls >> r.mask_path))
                    parse_fail(lineno, "mask needs a path");
            } else {
                parse_fail(lineno, "unknown region kind '" + kind + "'");
            }
            s.regions.push_back(r);
            cur = &s.regions.back();
        } else if (key == "motion") {
            RegionMotion &r = need_region();
            std::string kind;
            ls >> kind;
            if (kind == "constant") {
                double u, v;
                if (!(ls >> u >> v))
                    parse_fail(lineno, "constant motion needs u v");
                r.motion = {0, 0, u, 0, 0, v};
            } else if (kind == "affine") {
                std::array<double, 6> c{};
                for (double &x : c)
                    if (!(ls >> x))
                        parse_fail(lineno, "affine motion needs six coefficients");
                r.motion = c;
            } else {
                parse_fail(lineno, "motion must be constant or affine");
            }
        } else if (key == "params") {
            RegionMotion &r = need_region();
            std::string dir;
            double a, b, c;
            if (!(ls >> dir >> a >> b >> c) || (dir != "fwd" && dir != "bwd"))
                parse_fail(lineno, "params needs fwd|bwd a b c");
            TrajectoryParams &p = dir == "fwd" ? r.fwd : r.bwd;
            p.a = a;
            p.b = b;
            p.c = c;
        } else if (key == "label") {
            RegionMotion &r = need_region();
            if (!(ls >> r.label) || r.label < 0 || r.label > 254)
                parse_fail(lineno, "label must be an id in [0, 254]");
        } else {
            parse_fail(lineno, "unknown directive '" + key + "'");
        }
    }
    if (s.frames < 1)
        throw std::runtime_error("motion script: missing 'frames' directive");
    if (s.regions.empty())
        throw std::runtime_error("motion script: no regions");
    return s;
}

MotionScript load_motion_script(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open motion script: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_motion_script(ss.str());
}

SynthBundle synthesize(const Frame &base, const MotionScript &script) {
    if (base.empty())
        throw std::invalid_argument("synthesize: empty base image");
    const int W = base.width, H = base.height, C = base.channels;
    const size_t np = base.pixel_count();
    const int R = static_cast<int>(script.regions.size());

    // Static partition: rect/mask regions claim pixels, one full region the rest.
    std::vector<int> owner(np, -1);
    int full_region = -1;
    for (int r = 0; r < R; r++) {
        const RegionMotion &reg = script.regions[r];
        if (reg.kind == RegionMotion::Kind::Full) {
            if (full_region >= 0)
                throw std::runtime_error("synthesize: more than one full region");
            full_region = r;
            continue;
        }
        std::vector<std::uint8_t> inside(np, 0);
        if (reg.kind == RegionMotion::Kind::Rect) {
            if (reg.x < 0 || reg.y < 0 || reg.x + reg.w > W || reg.y + reg.h > H)
                throw std::runtime_error("synthesize: rect region leaves the frame");
            for (int y = reg.y; y < reg.y + reg.h; y++)
                for (int x = reg.x; x < reg.x + reg.w; x++)
                    inside[static_cast<size_t>(y) * W + x] = 1;
        } else {
            LabelMap m = read_label_png(reg.mask_path);
            if (m.width != W || m.height != H)
                throw std::runtime_error("synthesize: mask size differs from the base image");
            for (size_t p = 0; p < np; p++)
                inside[p] = m.labels[p] != 0;
        }
        for (size_t p = 0; p < np; p++) {
            if (!inside[p])
                continue;
            if (owner[p] >= 0)
                throw std::runtime_error("synthesize: regions overlap");
            owner[p] = r;
        }
    }
    for (size_t p = 0; p < np; p++)
        if (owner[p] < 0) {
            if (full_region < 0)
                throw std::runtime_error("synthesize: regions do not cover the frame");
            owner[p] = full_region;
        }

    std::vector<RegionMaps> maps;
    std::vector<int> label_of(R);
    int max_label = 0;
    for (int r = 0; r < R; r++) {
        maps.push_back(make_maps(script.regions[r]));
        label_of[r] = script.regions[r].label >= 0 ? script.regions[r].label : r;
        if (label_of[r] > 254)
            throw std::runtime_error("synthesize: region label out of range");
        max_label = std::max(max_label, label_of[r]);
    }

    SynthBundle b;
    b.palette.names.resize(max_label + 1);
    for (int id = 0; id <= max_label; id++)
        b.palette.names[id] = "class" + std::to_string(id);
    if (!script.movable.empty())
        b.palette.movable.assign(script.movable.begin(), script.movable.end());
    else {
        std::set<int> mv;
        for (int r = 0; r < R; r++)
            if (region_moves(script.regions[r]))
                mv.insert(label_of[r]);
        b.palette.movable.assign(mv.begin(), mv.end());
    }

    LabelMap partition(W, H);
    for (size_t p = 0; p < np; p++)
        partition.labels[p] = static_cast<std::uint8_t>(label_of[owner[p]]);

    const int F = script.frames;
    b.flows.per_frame.resize(F);
    GaussGen noise(script.seed ? script.seed : 0x6a09e667f3bcc909ull);
    std::vector<TrajectoryParams> pf(np), pb(np);

    for (int t = 0; t < F; t++) {
        Frame sharp(W, H, C);
        FlowField fwd_arg(W, H), bwd_arg(W, H);
        for (int y = 0; y < H; y++)
            for (int x = 0; x < W; x++) {
                size_t p = static_cast<size_t>(y) * W + x;
                const RegionMaps &m = maps[owner[p]];
                double sx = x, sy = y;
                for (int k = 0; k < t; k++)
                    m.backward(sx, sy);
                for (int c = 0; c < C; c++)
                    sharp.at(x, y, c) =
                        sample_bilinear(base, static_cast<float>(sx), static_cast<float>(sy), c);
                Vec2 d = m.forward(x, y);
                double bx = x, by = y;
                m.backward(bx, by);
                fwd_arg.u[p] = d.x;
                fwd_arg.v[p] = d.y;
                bwd_arg.u[p] = static_cast<float>(x - bx); // motion arriving from frame t-1
                bwd_arg.v[p] = static_cast<float>(y - by);
                pf[p] = script.regions[owner[p]].fwd;
                pb[p] = script.regions[owner[p]].bwd;
            }

        if (t + 1 < F)
            b.flows.put(t, 1, fwd_arg);
        if (t > 0) {
            FlowField back(W, H);
            for (size_t p = 0; p < np; p++) {
                back.u[p] = -bwd_arg.u[p];
                back.v[p] = -bwd_arg.v[p];
            }
            b.flows.put(t, -1, std::move(back));
        }

        KernelField kf =
            build_kernel_field(fwd_arg, bwd_arg, pf, pb, DutyCycle{script.tau}, script.mode);
        Frame blur = apply_blur(sharp, kf);
        if (script.noise > 0)
            for (float &v : blur.data)
                v = std::clamp(v + static_cast<float>(script.noise * noise.gauss()), 0.f, 1.f);

        b.sharp.push_back(std::move(sharp));
        b.blurry.push_back(std::move(blur));
        b.labels.push_back(partition);
        b.params.push_back({script.regions[0].fwd, script.regions[0].bwd});
    }
    return b;
}

PsnrReport psnr_report(const std::vector<Frame> &test, const std::vector<Frame> &ref) {
    if (test.size() != ref.size())
        throw std::invalid_argument("psnr_report: sequence lengths differ");
    PsnrReport rep;
    double sum = 0;
    for (size_t i = 0; i < test.size(); i++) {
        double v = psnr(test[i], ref[i]);
        rep.per_frame.push_back(v);
        if (std::isfinite(v)) {
            sum += v;
            rep.finite++;
        }
    }
    rep.mean = rep.finite ? sum / rep.finite : 0.0;
    return rep;
}

void write_bundle(const std::string &dir, const SynthBundle &b) {
    std::filesystem::create_directories(dir);
    write_frame_sequence(dir, "blur_", b.blurry);
    write_frame_sequence(dir, "sharp_", b.sharp);
    const int F = static_cast<int>(b.blurry.size());
    for (int i = 0; i < F; i++) {
        write_label_png(numbered(dir, "labels_", i, ".png"), b.labels[i]);
        if (b.flows.has(i, 1))
            write_flo(numbered(dir, "fwd_", i, ".flo"), b.flows.get(i, 1));
        if (b.flows.has(i, -1))
            write_flo(numbered(dir, "bwd_", i, ".flo"), b.flows.get(i, -1));
    }
    write_palette(dir + "/palette.txt", b.palette);
    std::vector<TrajectoryParamsRecord> recs;
    for (int i = 0; i < F; i++)
        for (int d = 0; d < 2; d++)
            recs.push_back({i, d, b.params[i][d].a, b.params[i][d].b, b.params[i][d].c});
    write_params_txt(dir + "/params.txt", recs);

    std::ofstream mf(dir + "/manifest.txt");
    if (!mf)
        throw std::runtime_error("cannot write manifest under " + dir);
    mf << "frames " << F << "\n";
    if (F > 0)
        mf << "width " << b.blurry[0].width << "\nheight " << b.blurry[0].height << "\nchannels "
           << b.blurry[0].channels << "\n";
}

} // namespace vdb
