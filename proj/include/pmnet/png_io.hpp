#ifndef PMNET_PNG_IO_HPP
#define PMNET_PNG_IO_HPP

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pmnet/errors.hpp"

namespace pmnet {

// Minimal 8-bit RGB PNG writer/reader (enough for the ribbon exports and
// their round-trip test). Writer emits filter 0 scanlines; reader handles
// the five standard filters.

namespace png_detail {

inline void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                        const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(crc32(0L, nullptr, 0), out.data() + start,
                           static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace png_detail

// rgb: interleaved, row-major, 3 bytes per pixel.
inline void write_png_rgb(const std::filesystem::path& path, const std::uint8_t* rgb, int width,
                          int height) {
    using namespace png_detail;
    if (width < 1 || height < 1) throw InputError("write_png_rgb: empty image");
    std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type 0
        raw.insert(raw.end(), rgb + static_cast<std::size_t>(y) * width * 3,
                   rgb + static_cast<std::size_t>(y + 1) * width * 3);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw NumericError("write_png_rgb: compression failed");
    comp.resize(comp_len);
    write_chunk(out, "IDAT", comp);
    write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataFormatError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataFormatError("write failed: " + path.string());
}

// Returns interleaved RGB; throws DataFormatError naming the file on any
// structural problem.
inline std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, int& width,
                                              int& height) {
    using namespace png_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataFormatError("cannot open: " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw DataFormatError("not a PNG file: " + path.string());

    std::size_t pos = 8;
    width = height = 0;
    int bit_depth = 0, color_type = -1;
    std::vector<std::uint8_t> idat;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t len = get_u32(buf.data() + pos);
        if (pos + 12 + len > buf.size())
            throw DataFormatError("truncated PNG chunk in " + path.string());
        const std::string type(reinterpret_cast<const char*>(buf.data() + pos + 4), 4);
        const std::uint8_t* data = buf.data() + pos + 8;
        if (type == "IHDR") {
            width = static_cast<int>(get_u32(data));
            height = static_cast<int>(get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (width < 1 || height < 1 || bit_depth != 8 || color_type != 2)
        throw DataFormatError("unsupported PNG layout in " + path.string());

    const std::size_t stride = static_cast<std::size_t>(width) * 3;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw DataFormatError("corrupt PNG data in " + path.string());

    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(height) * stride);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (stride + 1) + 1;
        std::uint8_t* dst = rgb.data() + static_cast<std::size_t>(y) * stride;
        const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= 3 ? dst[i - 3] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= 3) ? up[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw DataFormatError("bad PNG filter in " + path.string());
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return rgb;
}

}  // namespace pmnet

#endif  // PMNET_PNG_IO_HPP
