#pragma once

#include "vdb/frame.hpp"

#include <array>
#include <string>
#include <vector>

namespace vdb {

/** Sequence-level id -> class-name table with the set of ids allowed to move. */
struct LabelPalette {
    std::vector<std::string> names; // index == label id
    std::vector<int> movable;       // ids eligible for refinement

    bool has_id(int id) const { return id >= 0 && id < static_cast<int>(names.size()); }
    int id_of(const std::string &name) const;
};

// PNG frames. 8- or 16-bit, gray or RGB(A); values scaled to [0,1] on read.
Frame read_png(const std::string &path);
void write_png(const std::string &path, const Frame &f, int bit_depth = 16);

// Label maps as 8-bit indexed PNG (plain 8-bit gray also accepted on read).
LabelMap read_label_png(const std::string &path);
void write_label_png(const std::string &path, const LabelMap &m);

// Sidecar palette text: one "id name" line per class, then "movable id..." line.
LabelPalette read_palette(const std::string &path);
void write_palette(const std::string &path, const LabelPalette &p);

// Middlebury .flo: float magic 202021.25, int32 w, int32 h, interleaved u,v.
FlowField read_flo(const std::string &path);
void write_flo(const std::string &path, const FlowField &f);

struct TrajectoryParamsRecord {
    int frame = 0;
    int direction = 0; // 0 forward, 1 backward
    double a = 0, b = 1, c = 0;
};

// Plain text, one "frame direction a b c" line per record, 9 significant digits.
std::vector<TrajectoryParamsRecord> read_params_txt(const std::string &path);
void write_params_txt(const std::string &path, const std::vector<TrajectoryParamsRecord> &recs);

/** Numbered PNGs under dir, sorted by index; gaps in numbering are an error. */
std::vector<std::string> list_frame_sequence(const std::string &dir);

std::vector<Frame> read_frame_sequence(const std::string &dir);
void write_frame_sequence(const std::string &dir, const std::string &prefix,
                          const std::vector<Frame> &frames, int bit_depth = 16);

} // namespace vdb
