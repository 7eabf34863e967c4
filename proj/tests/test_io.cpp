#include <doctest.h>

#include "helpers.hpp"
#include "vdb/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

using namespace vdb;
using testutil::Rng;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static const unsigned stamp = std::random_device{}();
        path = std::filesystem::temp_directory_path() /
               ("vdb_io_" + std::to_string(stamp) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string operator/(const std::string &name) const { return (path / name).string(); }
    static inline int counter = 0;
};

} // namespace

TEST_CASE("png round trip: 16-bit gray preserves values to quantization") {
    TempDir td;
    Rng rng(21);
    Frame f = testutil::random_frame(23, 17, rng);
    write_png(td / "g.png", f, 16);
    Frame r = read_png(td / "g.png");
    REQUIRE(r.same_shape(f));
    CHECK(testutil::max_abs_diff(f, r) <= 0.5 / 65535.0 + 1e-7);
}

TEST_CASE("png round trip: 8-bit and RGB") {
    TempDir td;
    Rng rng(22);
    Frame f = testutil::random_frame(9, 11, rng, 3);
    write_png(td / "c8.png", f, 8);
    Frame r8 = read_png(td / "c8.png");
    REQUIRE(r8.channels == 3);
    CHECK(testutil::max_abs_diff(f, r8) <= 0.5 / 255.0 + 1e-6);

    write_png(td / "c16.png", f, 16);
    Frame r16 = read_png(td / "c16.png");
    CHECK(testutil::max_abs_diff(f, r16) <= 0.5 / 65535.0 + 1e-7);

    CHECK_THROWS(write_png(td / "bad.png", f, 12)); // only 8/16 supported
    CHECK_THROWS(read_png(td / "missing.png"));
}

TEST_CASE("flo round trip is bit exact") {
    TempDir td;
    Rng rng(23);
    FlowField f = testutil::random_flow(13, 7, rng, 20.0);
    write_flo(td / "a.flo", f);
    FlowField r = read_flo(td / "a.flo");
    REQUIRE(r.width == 13);
    REQUIRE(r.height == 7);
    for (size_t i = 0; i < f.pixel_count(); i++) {
        CHECK(r.u[i] == f.u[i]);
        CHECK(r.v[i] == f.v[i]);
    }
    // Corrupt magic rejected.
    std::ofstream bad(td / "bad.flo", std::ios::binary);
    float wrong = 1234.5f;
    bad.write(reinterpret_cast<const char *>(&wrong), 4);
    bad.close();
    CHECK_THROWS(read_flo(td / "bad.flo"));
}

TEST_CASE("label png round trip and palette file") {
    TempDir td;
    LabelMap m(6, 5);
    for (int y = 0; y < 5; y++)
        for (int x = 0; x < 6; x++)
            m.at(x, y) = static_cast<std::uint8_t>((x + 2 * y) % 5);
    write_label_png(td / "l.png", m);
    LabelMap r = read_label_png(td / "l.png");
    REQUIRE(r.width == 6);
    REQUIRE(r.height == 5);
    for (size_t i = 0; i < m.labels.size(); i++)
        CHECK(r.labels[i] == m.labels[i]);

    LabelPalette p;
    p.names = {"background", "person", "car"};
    p.movable = {1, 2};
    write_palette(td / "p.txt", p);
    LabelPalette q = read_palette(td / "p.txt");
    REQUIRE(q.names.size() == 3);
    CHECK(q.names[1] == "person");
    CHECK(q.movable == std::vector<int>{1, 2});
    CHECK(q.id_of("car") == 2);
    CHECK(q.id_of("sky") == -1);
}

TEST_CASE("params txt round trip keeps 9 significant digits") {
    TempDir td;
    std::vector<TrajectoryParamsRecord> recs = {
        {0, 0, 0.0312345678, 0.912345678, 0.0},
        {0, 1, -0.005, 1.25, 0.125},
        {1, 0, 0.0, 1.0, 0.0},
    };
    write_params_txt(td / "params.txt", recs);
    auto r = read_params_txt(td / "params.txt");
    REQUIRE(r.size() == recs.size());
    for (size_t i = 0; i < recs.size(); i++) {
        CHECK(r[i].frame == recs[i].frame);
        CHECK(r[i].direction == recs[i].direction);
        CHECK(r[i].a == doctest::Approx(recs[i].a).epsilon(1e-9));
        CHECK(r[i].b == doctest::Approx(recs[i].b).epsilon(1e-9));
        CHECK(r[i].c == doctest::Approx(recs[i].c).epsilon(1e-9));
    }
}

TEST_CASE("frame sequences: sorted read, numbering gaps rejected") {
    TempDir td;
    Rng rng(24);
    std::vector<Frame> frames;
    for (int i = 0; i < 4; i++)
        frames.push_back(testutil::random_frame(8, 8, rng));
    write_frame_sequence(td.path.string(), "f_", frames, 16);
    auto names = list_frame_sequence(td.path.string());
    REQUIRE(names.size() == 4);
    CHECK(names[0] < names[1]);
    std::vector<Frame> back = read_frame_sequence(td.path.string());
    REQUIRE(back.size() == 4);
    for (int i = 0; i < 4; i++)
        CHECK(testutil::max_abs_diff(back[i], frames[i]) <= 0.5 / 65535.0 + 1e-7);

    std::filesystem::remove(td / "f_000002.png");
    CHECK_THROWS(read_frame_sequence(td.path.string())); // gap in numbering
}
