#ifndef PMNET_RIBBON_HPP
#define PMNET_RIBBON_HPP

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pmnet/errors.hpp"
#include "pmnet/png_io.hpp"
#include "pmnet/synthgen.hpp"

namespace pmnet {

// Color-coded ribbon export: a CSV of per-frame (index, label, prediction)
// plus a PNG with two horizontal bars (ground truth above, prediction below),
// one pixel column per frame, fixed 5-color palette.

inline constexpr std::uint8_t kPhasePalette[kNumPhases][3] = {
    {66, 135, 245},   // Preparing
    {230, 57, 70},    // Knotting
    {255, 183, 3},    // Releasing
    {42, 157, 143},   // Resecting
    {142, 68, 173},   // Postprocessing
};

inline constexpr int kRibbonBarHeight = 8;
inline constexpr int kRibbonGap = 2;  // white separator rows

inline void write_trace_csv(const std::filesystem::path& path, const std::vector<int>& labels,
                            const std::vector<int>& preds) {
    if (labels.size() != preds.size()) throw InputError("trace: labels/preds size mismatch");
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataFormatError("cannot open for writing: " + path.string());
    f << "# ribbon palette (phase r g b):\n";
    for (int j = 0; j < kNumPhases; ++j)
        f << "# " << kPhaseNames[j] << " " << int(kPhasePalette[j][0]) << " "
          << int(kPhasePalette[j][1]) << " " << int(kPhasePalette[j][2]) << "\n";
    f << "frame,label,pred\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        f << i << "," << labels[i] << "," << preds[i] << "\n";
    if (!f) throw DataFormatError("write failed: " + path.string());
}

inline void read_trace_csv(const std::filesystem::path& path, std::vector<int>& labels,
                           std::vector<int>& preds) {
    std::ifstream f(path);
    if (!f) throw DataFormatError("cannot open: " + path.string());
    labels.clear();
    preds.clear();
    std::string line;
    bool saw_header = false;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            if (line != "frame,label,pred")
                throw DataFormatError(path.string() + ":" + std::to_string(lineno) +
                                      ": expected trace header");
            saw_header = true;
            continue;
        }
        std::istringstream ss(line);
        long idx, lab, pred;
        char c1, c2;
        if (!(ss >> idx >> c1 >> lab >> c2 >> pred) || c1 != ',' || c2 != ',' || lab < 0 ||
            lab >= kNumPhases || pred < 0 || pred >= kNumPhases ||
            idx != static_cast<long>(labels.size()))
            throw DataFormatError(path.string() + ":" + std::to_string(lineno) +
                                  ": malformed trace row");
        labels.push_back(static_cast<int>(lab));
        preds.push_back(static_cast<int>(pred));
    }
    if (!saw_header || labels.empty())
        throw DataFormatError(path.string() + ": empty or headerless trace");
}

inline void export_ribbon_png(const std::filesystem::path& path, const std::vector<int>& labels,
                              const std::vector<int>& preds) {
    if (labels.size() != preds.size() || labels.empty())
        throw InputError("ribbon: labels/preds size mismatch");
    const int w = static_cast<int>(labels.size());
    const int h = 2 * kRibbonBarHeight + kRibbonGap;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3, 255);
    auto paint = [&](int y0, const std::vector<int>& seq) {
        for (int y = y0; y < y0 + kRibbonBarHeight; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    rgb[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
                        kPhasePalette[seq[x]][ch];
    };
    paint(0, labels);
    paint(kRibbonBarHeight + kRibbonGap, preds);
    write_png_rgb(path, rgb.data(), w, h);
}

// Decode a ribbon PNG back into label/prediction sequences (exact palette
// match required).
inline void decode_ribbon_png(const std::filesystem::path& path, std::vector<int>& labels,
                              std::vector<int>& preds) {
    int w = 0, h = 0;
    auto rgb = read_png_rgb(path, w, h);
    if (h != 2 * kRibbonBarHeight + kRibbonGap)
        throw DataFormatError("unexpected ribbon height in " + path.string());
    auto decode_row = [&](int y, std::vector<int>& out) {
        out.assign(static_cast<std::size_t>(w), -1);
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* px = rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
            for (int j = 0; j < kNumPhases; ++j)
                if (px[0] == kPhasePalette[j][0] && px[1] == kPhasePalette[j][1] &&
                    px[2] == kPhasePalette[j][2]) {
                    out[x] = j;
                    break;
                }
            if (out[x] < 0)
                throw DataFormatError("unknown ribbon color in " + path.string());
        }
    };
    decode_row(0, labels);
    decode_row(kRibbonBarHeight + kRibbonGap, preds);
}

}  // namespace pmnet

#endif  // PMNET_RIBBON_HPP
