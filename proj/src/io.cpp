#include "vdb/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace vdb {

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string &what, const std::string &path) {
    throw std::runtime_error(what + ": " + path);
}

} // namespace

int LabelPalette::id_of(const std::string &name) const {
    for (size_t i = 0; i < names.size(); i++)
        if (names[i] == name)
            return static_cast<int>(i);
    return -1;
}

Frame read_png(const std::string &path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        fail("cannot open PNG", path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("PNG decode error", path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    if (png_get_bit_depth(png, info) == 16)
        png_set_swap(png); // stored big endian
    png_read_update_info(png, info);

    int w = png_get_image_width(png, info);
    int h = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int ch = png_get_channels(png, info);
    size_t stride = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(stride * h);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; y++)
        rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Frame f(w, h, ch);
    if (depth == 8) {
        for (size_t i = 0; i < f.data.size(); i++)
            f.data[i] = raw[i] / 255.f;
    } else {
        const std::uint16_t *p = reinterpret_cast<const std::uint16_t *>(raw.data());
        for (size_t i = 0; i < f.data.size(); i++)
            f.data[i] = p[i] / 65535.f;
    }
    return f;
}

void write_png(const std::string &path, const Frame &f, int bit_depth) {
    if (f.empty())
        throw std::invalid_argument("write_png: empty frame");
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("write_png: bit depth must be 8 or 16");
    if (f.channels != 1 && f.channels != 3)
        throw std::invalid_argument("write_png: only 1- or 3-channel frames");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        fail("cannot create PNG", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("PNG encode error", path);
    }
    png_init_io(png, fp.get());
    int color = f.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, f.width, f.height, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16)
        png_set_swap(png);

    auto quant = [](float v, float scale) {
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        return static_cast<unsigned>(std::lround(v * scale));
    };
    if (bit_depth == 8) {
        std::vector<std::uint8_t> row(static_cast<size_t>(f.width) * f.channels);
        for (int y = 0; y < f.height; y++) {
            for (int x = 0; x < f.width; x++)
                for (int c = 0; c < f.channels; c++)
                    row[static_cast<size_t>(x) * f.channels + c] =
                        static_cast<std::uint8_t>(quant(f.at(x, y, c), 255.f));
            png_write_row(png, row.data());
        }
    } else {
        std::vector<std::uint16_t> row(static_cast<size_t>(f.width) * f.channels);
        for (int y = 0; y < f.height; y++) {
            for (int x = 0; x < f.width; x++)
                for (int c = 0; c < f.channels; c++)
                    row[static_cast<size_t>(x) * f.channels + c] =
                        static_cast<std::uint16_t>(quant(f.at(x, y, c), 65535.f));
            png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
        }
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

LabelMap read_label_png(const std::string &path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        fail("cannot open label PNG", path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail("label PNG decode error", path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY)
        fail("label PNG must be indexed or 8-bit gray", path);
    if (png_get_bit_depth(png, info) < 8)
        png_set_packing(png);
    png_read_update_info(png, info);
    int w = png_get_image_width(png, info);
    int h = png_get_image_height(png, info);
    size_t stride = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(stride * h);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; y++)
        rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    LabelMap m(w, h);
    for (int y = 0; y < h; y++)
        std::memcpy(&m.labels[static_cast<size_t>(y) * w], raw.data() + stride * y, w);
    return m;
}

void write_label_png(const std::string &path, const LabelMap &m) {
    if (m.labels.empty())
        throw std::invalid_argument("write_label_png: empty map");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        fail("cannot create label PNG", path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail("label PNG encode error", path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, m.width, m.height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed 256-entry palette; distinct enough colors for casual viewing.
    png_color pal[256];
    for (int i = 0; i < 256; i++) {
        pal[i].red = static_cast<png_byte>((i * 67) & 0xff);
        pal[i].green = static_cast<png_byte>((i * 151) & 0xff);
        pal[i].blue = static_cast<png_byte>((i * 223) & 0xff);
    }
    pal[0] = {0, 0, 0};
    png_set_PLTE(png, info, pal, 256);
    png_write_info(png, info);
    for (int y = 0; y < m.height; y++)
        png_write_row(png, const_cast<png_bytep>(&m.labels[static_cast<size_t>(y) * m.width]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

LabelPalette read_palette(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        fail("cannot open palette", path);
    LabelPalette p;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ss(line);
        std::string first;
        ss >> first;
        if (first == "movable") {
            int id;
            while (ss >> id)
                p.movable.push_back(id);
            continue;
        }
        int id = std::stoi(first);
        std::string name;
        ss >> name;
        if (id < 0 || id > 254)
            fail("palette id out of range", path);
        if (id >= static_cast<int>(p.names.size()))
            p.names.resize(id + 1);
        p.names[id] = name;
    }
    return p;
}

void write_palette(const std::string &path, const LabelPalette &p) {
    std::ofstream out(path);
    if (!out)
        fail("cannot create palette", path);
    for (size_t i = 0; i < p.names.size(); i++)
        if (!p.names[i].empty())
            out << i << " " << p.names[i] << "\n";
    if (!p.movable.empty()) {
        out << "movable";
        for (int id : p.movable)
            out << " " << id;
        out << "\n";
    }
}

static const float kFloMagic = 202021.25f;

FlowField read_flo(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail("cannot open .flo", path);
    float magic = 0.f;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char *>(&magic), 4);
    in.read(reinterpret_cast<char *>(&w), 4);
    in.read(reinterpret_cast<char *>(&h), 4);
    if (!in || magic != kFloMagic || w <= 0 || h <= 0)
        fail("not a valid .flo file", path);
    FlowField f(w, h);
    std::vector<float> inter(static_cast<size_t>(w) * h * 2);
    in.read(reinterpret_cast<char *>(inter.data()), static_cast<std::streamsize>(inter.size() * 4));
    if (!in)
        fail("truncated .flo file", path);
    for (size_t i = 0; i < f.pixel_count(); i++) {
        f.u[i] = inter[2 * i];
        f.v[i] = inter[2 * i + 1];
    }
    return f;
}

void write_flo(const std::string &path, const FlowField &f) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail("cannot create .flo", path);
    std::int32_t w = f.width, h = f.height;
    out.write(reinterpret_cast<const char *>(&kFloMagic), 4);
    out.write(reinterpret_cast<const char *>(&w), 4);
    out.write(reinterpret_cast<const char *>(&h), 4);
    std::vector<float> inter(static_cast<size_t>(w) * h * 2);
    for (size_t i = 0; i < f.pixel_count(); i++) {
        inter[2 * i] = f.u[i];
        inter[2 * i + 1] = f.v[i];
    }
    out.write(reinterpret_cast<const char *>(inter.data()), static_cast<std::streamsize>(inter.size() * 4));
    if (!out)
        fail("short write on .flo", path);
}

std::vector<TrajectoryParamsRecord> read_params_txt(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        fail("cannot open params file", path);
    std::vector<TrajectoryParamsRecord> recs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ss(line);
        TrajectoryParamsRecord r;
        std::string dir;
        if (!(ss >> r.frame >> dir >> r.a >> r.b >> r.c))
            fail("malformed params line", path);
        if (dir == "fwd")
            r.direction = 0;
        else if (dir == "bwd")
            r.direction = 1;
        else
            fail("params direction must be fwd or bwd", path);
        recs.push_back(r);
    }
    return recs;
}

void write_params_txt(const std::string &path, const std::vector<TrajectoryParamsRecord> &recs) {
    std::ofstream out(path);
    if (!out)
        fail("cannot create params file", path);
    char buf[160];
    for (const auto &r : recs) {
        std::snprintf(buf, sizeof buf, "%d %s %.9g %.9g %.9g\n", r.frame,
                      r.direction == 0 ? "fwd" : "bwd", r.a, r.b, r.c);
        out << buf;
    }
}

std::vector<std::string> list_frame_sequence(const std::string &dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        fail("not a directory", dir);
    std::vector<std::pair<long, std::string>> found;
    for (const auto &e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png")
            continue;
        std::string stem = e.path().stem().string();
        // Trailing digit run is the frame index.
        size_t pos = stem.size();
        while (pos > 0 && std::isdigit(static_cast<unsigned char>(stem[pos - 1])))
            pos--;
        if (pos == stem.size())
            continue;
        found.emplace_back(std::stol(stem.substr(pos)), e.path().string());
    }
    if (found.empty())
        fail("no numbered PNG frames in", dir);
    std::sort(found.begin(), found.end());
    for (size_t i = 0; i < found.size(); i++)
        if (found[i].first != found[0].first + static_cast<long>(i))
            fail("gap in frame numbering under", dir);
    std::vector<std::string> paths;
    for (auto &f : found)
        paths.push_back(std::move(f.second));
    return paths;
}

std::vector<Frame> read_frame_sequence(const std::string &dir) {
    std::vector<Frame> frames;
    for (const auto &p : list_frame_sequence(dir))
        frames.push_back(read_png(p));
    for (size_t i = 1; i < frames.size(); i++)
        if (!frames[i].same_shape(frames[0]))
            fail("frame dimensions differ within sequence", dir);
    return frames;
}

void write_frame_sequence(const std::string &dir, const std::string &prefix,
                          const std::vector<Frame> &frames, int bit_depth) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    char name[64];
    for (size_t i = 0; i < frames.size(); i++) {
        std::snprintf(name, sizeof name, "%s%06zu.png", prefix.c_str(), i);
        write_png((fs::path(dir) / name).string(), frames[i], bit_depth);
    }
}

} // namespace vdb
