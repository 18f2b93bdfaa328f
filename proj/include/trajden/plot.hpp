#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "trajden/dataset.hpp"

namespace trajden {
namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xFFFFFFFFu) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc;
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

inline void push_be32(std::vector<uint8_t>* out, uint32_t v) {
    out->push_back(static_cast<uint8_t>(v >> 24));
    out->push_back(static_cast<uint8_t>(v >> 16));
    out->push_back(static_cast<uint8_t>(v >> 8));
    out->push_back(static_cast<uint8_t>(v));
}

inline void push_chunk(std::vector<uint8_t>* out, const char type[4],
                       const std::vector<uint8_t>& data) {
    push_be32(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out->insert(out->end(), body.begin(), body.end());
    push_be32(out, crc32(body.data(), body.size()) ^ 0xFFFFFFFFu);
}

// Minimal RGB8 PNG with stored (uncompressed) deflate blocks.
inline std::vector<uint8_t> encode_png_rgb(const std::vector<uint8_t>& rgb, int width,
                                           int height) {
    std::vector<uint8_t> png = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<uint8_t> ihdr;
    push_be32(&ihdr, static_cast<uint32_t>(width));
    push_be32(&ihdr, static_cast<uint32_t>(height));
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB
    push_chunk(&png, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (1 + 3 * width));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter none
        const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
        raw.insert(raw.end(), row, row + 3 * width);
    }

    std::vector<uint8_t> idat = {0x78, 0x01};
    size_t off = 0;
    while (off < raw.size()) {
        const size_t block = std::min<size_t>(65535, raw.size() - off);
        const bool final = off + block == raw.size();
        idat.push_back(final ? 1 : 0);
        idat.push_back(static_cast<uint8_t>(block & 0xFF));
        idat.push_back(static_cast<uint8_t>(block >> 8));
        idat.push_back(static_cast<uint8_t>(~block & 0xFF));
        idat.push_back(static_cast<uint8_t>((~block >> 8) & 0xFF));
        idat.insert(idat.end(), raw.begin() + off, raw.begin() + off + block);
        off += block;
    }
    push_be32(&idat, adler32(raw.data(), raw.size()));
    push_chunk(&png, "IDAT", idat);
    push_chunk(&png, "IEND", {});
    return png;
}

inline std::string base64(const std::vector<uint8_t>& data) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    for (size_t i = 0; i < data.size(); i += 3) {
        uint32_t v = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < data.size()) v |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < data.size()) v |= data[i + 2];
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < data.size() ? alphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < data.size() ? alphabet[v & 63] : '=');
    }
    return out;
}

inline std::vector<uint8_t> tile_to_rgb(const MapTile& tile) {
    std::vector<uint8_t> rgb(static_cast<size_t>(MapTile::kSize) * MapTile::kSize * 3);
    for (int img_row = 0; img_row < MapTile::kSize; ++img_row) {
        const int r = MapTile::kSize - 1 - img_row;  // north-up image
        for (int c = 0; c < MapTile::kSize; ++c) {
            double cr = 240, cg = 236, cb = 226;  // background
            const double veg = tile.grid.at(2, r, c);
            cr += veg * (150 - cr) * 0.9;
            cg += veg * (200 - cg) * 0.9;
            cb += veg * (150 - cb) * 0.9;
            const double bld = tile.grid.at(1, r, c);
            cr += bld * (150 - cr);
            cg += bld * (95 - cg);
            cb += bld * (75 - cb);
            const double road = tile.grid.at(0, r, c);
            cr += road * (75 - cr);
            cg += road * (75 - cg);
            cb += road * (82 - cb);
            const size_t i = (static_cast<size_t>(img_row) * MapTile::kSize + c) * 3;
            rgb[i] = static_cast<uint8_t>(cr);
            rgb[i + 1] = static_cast<uint8_t>(cg);
            rgb[i + 2] = static_cast<uint8_t>(cb);
        }
    }
    return rgb;
}

inline std::string polyline_points(const Trajectory& traj, const MapTile& tile) {
    std::string pts;
    char buf[64];
    for (const auto& tp : traj.points) {
        std::snprintf(buf, sizeof(buf), "%.3f,%.3f ", tp.pose.x - tile.origin_x,
                      MapTile::kExtent - (tp.pose.y - tile.origin_y));
        pts += buf;
    }
    if (!pts.empty()) pts.pop_back();
    return pts;
}

}  // namespace detail

// Static SVG: semantic raster background, ground truth in red, noisy GPS in
// blue, the generated trajectory in green, the query region circled in
// purple. Byte output is deterministic in the inputs.
inline void emit_plot(const Scenario& scn, const Trajectory& generated,
                      const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write plot: " + path);
    const std::string png =
        detail::base64(detail::encode_png_rgb(detail::tile_to_rgb(scn.tile), MapTile::kSize,
                                              MapTile::kSize));
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" "
          "xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"640\" height=\"640\" "
          "viewBox=\"0 0 128 128\">\n"
       << "  <image x=\"0\" y=\"0\" width=\"128\" height=\"128\" "
          "image-rendering=\"pixelated\" xlink:href=\"data:image/png;base64,"
       << png << "\"/>\n";
    const Pose q = scn.query_gt();
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  <circle cx=\"%.3f\" cy=\"%.3f\" r=\"8\" fill=\"none\" stroke=\"purple\" "
                  "stroke-width=\"0.4\" stroke-dasharray=\"1.5,1\"/>\n",
                  q.x - scn.tile.origin_x, MapTile::kExtent - (q.y - scn.tile.origin_y));
    os << buf;
    os << "  <polyline fill=\"none\" stroke=\"red\" stroke-width=\"0.6\" points=\""
       << detail::polyline_points(scn.gt, scn.tile) << "\"/>\n";
    os << "  <polyline fill=\"none\" stroke=\"blue\" stroke-width=\"0.5\" points=\""
       << detail::polyline_points(scn.gps, scn.tile) << "\"/>\n";
    os << "  <polyline fill=\"none\" stroke=\"green\" stroke-width=\"0.5\" points=\""
       << detail::polyline_points(generated, scn.tile) << "\"/>\n";
    os << "</svg>\n";
    if (!os) throw io_error("plot write failed: " + path);
}

}  // namespace trajden
