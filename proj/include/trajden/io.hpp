#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "trajden/geometry.hpp"
#include "trajden/grid.hpp"

namespace trajden {

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("truncated file: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32_block(std::ostream& os, const float* p, size_t n) {
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

inline void read_f32_block(std::istream& is, float* p, size_t n, const std::string& path) {
    if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4)))
        throw io_error("truncated file: " + path);
}

}  // namespace detail

// ---- TDGRID: little-endian f32 raster files (tile.bin / obs.bin) ----------
// magic "TDGRID\0", u32 channels, u32 rows, u32 cols, f32 row-major data.

inline void write_grid_file(const std::string& path, const Grid& g) {
    require(g.rank() == 3, "write_grid_file expects a [C,H,W] grid");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for write: " + path);
    os.write("TDGRID\0", 7);
    detail::write_u32(os, static_cast<uint32_t>(g.shape[0]));
    detail::write_u32(os, static_cast<uint32_t>(g.shape[1]));
    detail::write_u32(os, static_cast<uint32_t>(g.shape[2]));
    detail::write_f32_block(os, g.data.data(), g.numel());
    if (!os) throw io_error("write failed: " + path);
}

inline Grid read_grid_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open: " + path);
    char magic[7];
    if (!is.read(magic, 7) || std::memcmp(magic, "TDGRID\0", 7) != 0)
        throw io_error("bad TDGRID magic: " + path);
    uint32_t c = detail::read_u32(is, path);
    uint32_t r = detail::read_u32(is, path);
    uint32_t w = detail::read_u32(is, path);
    if (c == 0 || r == 0 || w == 0 || c > 1024 || r > 65536 || w > 65536)
        throw io_error("implausible TDGRID header: " + path);
    Grid g({static_cast<int>(c), static_cast<int>(r), static_cast<int>(w)});
    detail::read_f32_block(is, g.data.data(), g.numel(), path);
    return g;
}

// ---- Trajectory CSV: header "t,x,y,theta", radians, 9 significant digits --

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for write: " + path);
    os << "t,x,y,theta\n";
    char buf[128];
    for (const auto& tp : traj.points) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", tp.t, tp.pose.x, tp.pose.y,
                      tp.pose.theta);
        os << buf;
    }
    if (!os) throw io_error("write failed: " + path);
}

inline Trajectory read_trajectory_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,x,y,theta", 0) != 0)
        throw io_error("bad trajectory CSV header: " + path);
    Trajectory traj;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        int t;
        double x, y, th;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &t, &x, &y, &th) != 4)
            throw io_error("bad trajectory CSV row in " + path + ": " + line);
        traj.points.push_back({t, Pose(x, y, th)});
    }
    traj.validate();
    return traj;
}

// ---- Flat key=value config files ------------------------------------------

inline std::map<std::string, std::string> read_kv_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

}  // namespace trajden
