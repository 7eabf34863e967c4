#pragma once

#include "vdb/blur.hpp"
#include "vdb/flow.hpp"
#include "vdb/frame.hpp"

#include <cmath>
#include <cstdint>

namespace testutil {

inline std::uint64_t splitmix(std::uint64_t &s) {
    s += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct Rng {
    std::uint64_t state;
    explicit Rng(std::uint64_t seed) : state(seed) {}
    double uniform() { return (splitmix(state) >> 11) * 0x1.0p-53; } // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

// Smooth band-limited texture: random coarse grids bilinearly upsampled and
// stacked at two scales. Deterministic, mean ~0.5, plenty of gradient for
// flow and deconvolution fixtures.
inline vdb::Frame texture(int w, int h, std::uint64_t seed, int channels = 1) {
    Rng rng(seed);
    auto layer = [&](int cell, double amp, vdb::Frame &into, int c) {
        int gw = w / cell + 2, gh = h / cell + 2;
        std::vector<double> g(static_cast<size_t>(gw) * gh);
        for (double &v : g)
            v = rng.uniform(-amp, amp);
        for (int y = 0; y < h; y++)
            for (int x = 0; x < w; x++) {
                double fx = static_cast<double>(x) / cell, fy = static_cast<double>(y) / cell;
                int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
                double ax = fx - x0, ay = fy - y0;
                double v00 = g[static_cast<size_t>(y0) * gw + x0];
                double v10 = g[static_cast<size_t>(y0) * gw + x0 + 1];
                double v01 = g[static_cast<size_t>(y0 + 1) * gw + x0];
                double v11 = g[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
                into.at(x, y, c) += static_cast<float>((v00 * (1 - ax) + v10 * ax) * (1 - ay) +
                                                       (v01 * (1 - ax) + v11 * ax) * ay);
            }
    };
    vdb::Frame f(w, h, channels, 0.5f);
    for (int c = 0; c < channels; c++) {
        layer(8, 0.30, f, c);
        layer(3, 0.12, f, c);
    }
    for (float &v : f.data)
        v = std::min(0.95f, std::max(0.05f, v));
    return f;
}

inline vdb::Frame random_frame(int w, int h, Rng &rng, int channels = 1) {
    vdb::Frame f(w, h, channels);
    for (float &v : f.data)
        v = static_cast<float>(rng.uniform());
    return f;
}

inline vdb::FlowField constant_flow(int w, int h, float u, float v) {
    return vdb::FlowField(w, h, u, v);
}

inline vdb::FlowField random_flow(int w, int h, Rng &rng, double max_mag) {
    vdb::FlowField f(w, h);
    for (size_t i = 0; i < f.pixel_count(); i++) {
        f.u[i] = static_cast<float>(rng.uniform(-max_mag, max_mag));
        f.v[i] = static_cast<float>(rng.uniform(-max_mag, max_mag));
    }
    return f;
}

inline double dot(const vdb::Frame &a, const vdb::Frame &b) {
    double s = 0;
    for (size_t i = 0; i < a.data.size(); i++)
        s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
}

inline double norm2(const vdb::Frame &a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const vdb::Frame &a, const vdb::Frame &b) {
    double m = 0;
    for (size_t i = 0; i < a.data.size(); i++)
        m = std::max(m, std::fabs(static_cast<double>(a.data[i]) - b.data[i]));
    return m;
}

} // namespace testutil
