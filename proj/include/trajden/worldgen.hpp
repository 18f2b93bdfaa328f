#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "trajden/geometry.hpp"
#include "trajden/grid.hpp"
#include "trajden/rng.hpp"

namespace trajden {

struct RoadSegment {
    double ax = 0, ay = 0, bx = 0, by = 0;
    double width = 6.0;

    double length() const { return std::hypot(bx - ax, by - ay); }
};

// 128 m x 128 m semantic raster at 0.5 m/px. Channel 0: road network,
// channel 1: building footprints, channel 2: natural features. The road
// segment list survives only in memory (the raster file format drops it).
struct MapTile {
    static constexpr int kSize = 256;
    static constexpr double kResolution = 0.5;
    static constexpr double kExtent = kSize * kResolution;  // 128 m

    double origin_x = 0.0;  // southwest corner
    double origin_y = 0.0;
    Grid grid;  // [3, 256, 256]
    std::vector<RoadSegment> roads;

    MapTile() : grid({3, kSize, kSize}) {}

    double center_x() const { return origin_x + kExtent / 2; }
    double center_y() const { return origin_y + kExtent / 2; }

    bool contains(double x, double y) const {
        return x >= origin_x && x < origin_x + kExtent && y >= origin_y && y < origin_y + kExtent;
    }

    // Cell-center fractional raster coordinates of a world point.
    double row_of(double y) const { return (y - origin_y) / kResolution - 0.5; }
    double col_of(double x) const { return (x - origin_x) / kResolution - 0.5; }

    bool on_road(double x, double y) const {
        int c = static_cast<int>(std::floor((x - origin_x) / kResolution));
        int r = static_cast<int>(std::floor((y - origin_y) / kResolution));
        if (r < 0 || r >= kSize || c < 0 || c >= kSize) return false;
        return grid.at(0, r, c) > 0.5f;
    }

    NormBox norm_box() const { return NormBox(center_x(), center_y(), kExtent / 2); }
};

struct GpsNoiseSpec {
    double sigma_white = 3.0;   // i.i.d. Gaussian std, meters
    double sigma_walk = 0.8;    // bias random-walk std, meters per step
    double dropout_prob = 0.05; // sample-and-hold probability
    uint64_t seed = 0;
};

// Forward-sector semantic scan: 64 range bins x 0.5 m by 64 azimuth bins over
// (-45 deg, +45 deg). Stands in for the camera branch.
struct PolarObservation {
    static constexpr int kRangeBins = 64;
    static constexpr int kAzimuthBins = 64;
    static constexpr double kRangeStep = 0.5;
    static constexpr double kFov = kPi / 2;  // total field of view

    Grid grid;  // [3, range, azimuth]
    bool has_pose = false;
    Pose sensor_pose;

    PolarObservation() : grid({3, kRangeBins, kAzimuthBins}) {}
};

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

namespace detail {

inline double point_segment_distance(double px, double py, const RoadSegment& s) {
    const double dx = s.bx - s.ax, dy = s.by - s.ay;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - s.ax) * dx + (py - s.ay) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (s.ax + t * dx), py - (s.ay + t * dy));
}

}  // namespace detail

inline void rasterize_road(MapTile& tile, const RoadSegment& seg) {
    const double half = seg.width / 2;
    const double pad = half + 1.0;
    const int c0 = std::max(0, static_cast<int>(std::floor(
                                   (std::min(seg.ax, seg.bx) - pad - tile.origin_x) /
                                   MapTile::kResolution)));
    const int c1 = std::min(MapTile::kSize - 1,
                            static_cast<int>(std::ceil((std::max(seg.ax, seg.bx) + pad -
                                                        tile.origin_x) /
                                                       MapTile::kResolution)));
    const int r0 = std::max(0, static_cast<int>(std::floor(
                                   (std::min(seg.ay, seg.by) - pad - tile.origin_y) /
                                   MapTile::kResolution)));
    const int r1 = std::min(MapTile::kSize - 1,
                            static_cast<int>(std::ceil((std::max(seg.ay, seg.by) + pad -
                                                        tile.origin_y) /
                                                       MapTile::kResolution)));
    for (int r = r0; r <= r1; ++r) {
        const double y = tile.origin_y + (r + 0.5) * MapTile::kResolution;
        for (int c = c0; c <= c1; ++c) {
            const double x = tile.origin_x + (c + 0.5) * MapTile::kResolution;
            const double d = detail::point_segment_distance(x, y, seg);
            const double v = std::clamp((half + 0.25 - d) / 0.5, 0.0, 1.0);
            if (v > tile.grid.at(0, r, c)) tile.grid.at(0, r, c) = static_cast<float>(v);
        }
    }
}

// Axis-agnostic rotated rectangle; skips road cells so the road/building
// exclusivity invariant holds by construction.
inline void rasterize_building(MapTile& tile, double cx, double cy, double ux, double uy,
                               double half_len, double half_depth) {
    const double pad = std::hypot(half_len, half_depth) + 1.0;
    const int c0 = std::max(
        0, static_cast<int>(std::floor((cx - pad - tile.origin_x) / MapTile::kResolution)));
    const int c1 = std::min(MapTile::kSize - 1, static_cast<int>(std::ceil(
                                                    (cx + pad - tile.origin_x) /
                                                    MapTile::kResolution)));
    const int r0 = std::max(
        0, static_cast<int>(std::floor((cy - pad - tile.origin_y) / MapTile::kResolution)));
    const int r1 = std::min(MapTile::kSize - 1, static_cast<int>(std::ceil(
                                                    (cy + pad - tile.origin_y) /
                                                    MapTile::kResolution)));
    for (int r = r0; r <= r1; ++r) {
        const double y = tile.origin_y + (r + 0.5) * MapTile::kResolution;
        for (int c = c0; c <= c1; ++c) {
            const double x = tile.origin_x + (c + 0.5) * MapTile::kResolution;
            const double dx = x - cx, dy = y - cy;
            const double along = dx * ux + dy * uy;
            const double across = -dx * uy + dy * ux;
            if (std::abs(along) <= half_len && std::abs(across) <= half_depth &&
                tile.grid.at(0, r, c) <= 0.5f)
                tile.grid.at(1, r, c) = 1.0f;
        }
    }
}

// ---------------------------------------------------------------------------
// Tile generation: a straight spine across the tile plus extra lattice edges
// (horizontal/vertical/diagonal, 32 m node spacing), buildings beside roads,
// value-noise vegetation elsewhere.
// ---------------------------------------------------------------------------

inline MapTile generate_tile(uint64_t seed) {
    MapTile tile;
    Rng rng(seed);
    constexpr double kStep = 32.0;
    constexpr int kNodes = 5;  // 0, 32, 64, 96, 128

    auto node_xy = [&](int i, int j) {
        return std::pair<double, double>(tile.origin_x + kStep * i, tile.origin_y + kStep * j);
    };

    std::vector<std::pair<int, int>> used_nodes;
    std::set<std::pair<int, int>> used_set;
    std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> edge_set;
    auto mark_node = [&](int i, int j) {
        if (used_set.insert({i, j}).second) used_nodes.push_back({i, j});
    };
    auto add_edge = [&](int i0, int j0, int i1, int j1, double width) {
        auto a = std::make_pair(i0, j0), b = std::make_pair(i1, j1);
        if (b < a) std::swap(a, b);
        if (!edge_set.insert({a, b}).second) return false;
        auto [ax, ay] = node_xy(a.first, a.second);
        auto [bx, by] = node_xy(b.first, b.second);
        tile.roads.push_back({ax, ay, bx, by, width});
        mark_node(a.first, a.second);
        mark_node(b.first, b.second);
        return true;
    };

    // Spine: a full straight run of four collinear edges.
    const bool horizontal = rng.bernoulli(0.5);
    const int line = 1 + static_cast<int>(rng.uniform_int(3));
    const double spine_width = rng.uniform(4.0, 8.0);
    for (int k = 0; k < kNodes - 1; ++k) {
        if (horizontal)
            add_edge(k, line, k + 1, line, spine_width);
        else
            add_edge(line, k, line, k + 1, spine_width);
    }

    // Extra connected edges, diagonals included.
    const int n_extra = 3 + static_cast<int>(rng.uniform_int(4));  // 3..6
    static constexpr int kDirs[8][2] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                        {1, 1},  {1, -1}, {-1, 1}, {-1, -1}};
    int added = 0, guard = 0;
    while (added < n_extra && guard++ < 256) {
        auto [ni, nj] = used_nodes[rng.uniform_int(used_nodes.size())];
        const int* d = kDirs[rng.uniform_int(8)];
        const int ti = ni + d[0], tj = nj + d[1];
        if (ti < 0 || ti >= kNodes || tj < 0 || tj >= kNodes) continue;
        if (add_edge(ni, nj, ti, tj, rng.uniform(4.0, 8.0))) ++added;
    }

    for (const auto& seg : tile.roads) rasterize_road(tile, seg);

    // Buildings flanking road segments.
    for (const auto& seg : tile.roads) {
        const int nb = static_cast<int>(rng.uniform_int(3));  // 0..2
        const double len = seg.length();
        if (len < 1.0) continue;
        const double ux = (seg.bx - seg.ax) / len, uy = (seg.by - seg.ay) / len;
        for (int b = 0; b < nb; ++b) {
            const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
            const double t = rng.uniform(0.2, 0.8);
            const double gap = rng.uniform(2.0, 5.0);
            const double depth = rng.uniform(6.0, 12.0);
            const double blen = rng.uniform(8.0, 16.0);
            const double off = seg.width / 2 + gap + depth / 2;
            const double cx = seg.ax + t * (seg.bx - seg.ax) + side * (-uy) * off;
            const double cy = seg.ay + t * (seg.by - seg.ay) + side * ux * off;
            rasterize_building(tile, cx, cy, ux, uy, blen / 2, depth / 2);
        }
    }

    // Vegetation: bilinear value noise masked away from structures.
    constexpr int kCoarse = 16;
    double coarse[kCoarse + 1][kCoarse + 1];
    for (int i = 0; i <= kCoarse; ++i)
        for (int j = 0; j <= kCoarse; ++j) coarse[i][j] = rng.uniform();
    const double cell = static_cast<double>(MapTile::kSize) / kCoarse;
    for (int r = 0; r < MapTile::kSize; ++r) {
        const double fy = (r + 0.5) / cell;
        const int iy = std::min(kCoarse - 1, static_cast<int>(fy));
        const double ty = fy - iy;
        for (int c = 0; c < MapTile::kSize; ++c) {
            const double fx = (c + 0.5) / cell;
            const int ix = std::min(kCoarse - 1, static_cast<int>(fx));
            const double tx = fx - ix;
            const double v = (1 - ty) * ((1 - tx) * coarse[iy][ix] + tx * coarse[iy][ix + 1]) +
                             ty * ((1 - tx) * coarse[iy + 1][ix] + tx * coarse[iy + 1][ix + 1]);
            const double mask =
                std::max(tile.grid.at(0, r, c), tile.grid.at(1, r, c));
            const double veg = (0.1 + 0.65 * v) * std::clamp(1.0 - 1.2 * mask, 0.0, 1.0);
            tile.grid.at(2, r, c) = static_cast<float>(veg);
        }
    }
    return tile;
}

// ---------------------------------------------------------------------------
// Ground-truth trajectory: a graph walk with corner fillets sampled at
// constant speed. Headings follow the path tangent so per-step heading change
// stays under 0.3 rad by construction.
// ---------------------------------------------------------------------------

namespace detail {

struct PathPrim {
    bool is_arc = false;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;        // line
    double cx = 0, cy = 0, r = 0, a0 = 0, sweep = 0;  // arc
    double len = 0;
};

struct SampledPath {
    std::vector<PathPrim> prims;
    double total = 0;

    void eval(double s, double* x, double* y, double* heading) const {
        double acc = 0;
        for (const auto& p : prims) {
            if (s <= acc + p.len || &p == &prims.back()) {
                const double u = std::clamp(p.len > 0 ? (s - acc) / p.len : 0.0, 0.0, 1.0);
                if (!p.is_arc) {
                    *x = p.x0 + u * (p.x1 - p.x0);
                    *y = p.y0 + u * (p.y1 - p.y0);
                    *heading = std::atan2(p.y1 - p.y0, p.x1 - p.x0);
                } else {
                    const double a = p.a0 + u * p.sweep;
                    *x = p.cx + p.r * std::cos(a);
                    *y = p.cy + p.r * std::sin(a);
                    *heading = wrap_angle(a + (p.sweep >= 0 ? kPi / 2 : -kPi / 2));
                }
                return;
            }
            acc += p.len;
        }
    }
};

// Fillets corners of a polyline with radius R. Returns false when a corner
// cannot fit its arc inside the adjacent segments.
inline bool fillet_polyline(const std::vector<std::pair<double, double>>& pts, double R,
                            SampledPath* out) {
    const size_t n = pts.size();
    if (n < 2) return false;
    std::vector<double> cut(n, 0.0);  // tangent distance consumed at each vertex
    for (size_t i = 1; i + 1 < n; ++i) {
        const double ux0 = pts[i].first - pts[i - 1].first, uy0 = pts[i].second - pts[i - 1].second;
        const double ux1 = pts[i + 1].first - pts[i].first, uy1 = pts[i + 1].second - pts[i].second;
        const double l0 = std::hypot(ux0, uy0), l1 = std::hypot(ux1, uy1);
        if (l0 < 1e-9 || l1 < 1e-9) return false;
        const double cross = (ux0 * uy1 - uy0 * ux1) / (l0 * l1);
        const double dot = (ux0 * ux1 + uy0 * uy1) / (l0 * l1);
        const double phi = std::atan2(cross, dot);
        if (std::abs(phi) < 1e-9) continue;
        if (std::abs(phi) > 2.0) return false;  // near-reversal, no fillet fits
        cut[i] = R * std::tan(std::abs(phi) / 2);
    }
    for (size_t i = 0; i + 1 < n; ++i) {
        const double seg = std::hypot(pts[i + 1].first - pts[i].first,
                                      pts[i + 1].second - pts[i].second);
        if (cut[i] + cut[i + 1] > seg - 0.5) return false;
    }

    out->prims.clear();
    out->total = 0;
    double px = pts[0].first, py = pts[0].second;
    for (size_t i = 1; i + 1 < n; ++i) {
        const double l0x = pts[i].first - pts[i - 1].first, l0y = pts[i].second - pts[i - 1].second;
        const double l1x = pts[i + 1].first - pts[i].first, l1y = pts[i + 1].second - pts[i].second;
        const double n0 = std::hypot(l0x, l0y), n1 = std::hypot(l1x, l1y);
        const double ux = l0x / n0, uy = l0y / n0;
        const double vx = l1x / n1, vy = l1y / n1;
        const double phi = std::atan2(ux * vy - uy * vx, ux * vx + uy * vy);
        if (std::abs(phi) < 1e-9) continue;  // collinear, keep running line
        const double d = cut[i];
        const double ax = pts[i].first - ux * d, ay = pts[i].second - uy * d;
        const double bx = pts[i].first + vx * d, by = pts[i].second + vy * d;
        if (std::hypot(ax - px, ay - py) > 1e-9) {
            PathPrim line;
            line.x0 = px;
            line.y0 = py;
            line.x1 = ax;
            line.y1 = ay;
            line.len = std::hypot(ax - px, ay - py);
            out->prims.push_back(line);
            out->total += line.len;
        }
        PathPrim arc;
        arc.is_arc = true;
        arc.r = R;
        const double side = phi > 0 ? 1.0 : -1.0;
        arc.cx = ax + side * (-uy) * R;
        arc.cy = ay + side * ux * R;
        arc.a0 = std::atan2(ay - arc.cy, ax - arc.cx);
        arc.sweep = phi;
        arc.len = R * std::abs(phi);
        out->prims.push_back(arc);
        out->total += arc.len;
        px = bx;
        py = by;
    }
    if (std::hypot(pts[n - 1].first - px, pts[n - 1].second - py) > 1e-9) {
        PathPrim line;
        line.x0 = px;
        line.y0 = py;
        line.x1 = pts[n - 1].first;
        line.y1 = pts[n - 1].second;
        line.len = std::hypot(line.x1 - px, line.y1 - py);
        out->prims.push_back(line);
        out->total += line.len;
    }
    return !out->prims.empty();
}

struct RoadGraph {
    std::vector<std::pair<double, double>> nodes;
    std::vector<std::vector<int>> adj;

    explicit RoadGraph(const std::vector<RoadSegment>& roads) {
        auto key = [](double x, double y) {
            return std::make_pair(static_cast<long long>(std::llround(x * 1000)),
                                  static_cast<long long>(std::llround(y * 1000)));
        };
        std::map<std::pair<long long, long long>, int> index;
        auto intern = [&](double x, double y) {
            auto k = key(x, y);
            auto it = index.find(k);
            if (it != index.end()) return it->second;
            index[k] = static_cast<int>(nodes.size());
            nodes.push_back({x, y});
            adj.emplace_back();
            return static_cast<int>(nodes.size()) - 1;
        };
        for (const auto& s : roads) {
            int a = intern(s.ax, s.ay);
            int b = intern(s.bx, s.by);
            if (a == b) continue;
            adj[a].push_back(b);
            adj[b].push_back(a);
        }
    }
};

inline Trajectory sample_points(const SampledPath& path, double u, double s0, int T) {
    Trajectory traj;
    for (int k = 0; k < T; ++k) {
        double x, y, h;
        path.eval(s0 + k * u, &x, &y, &h);
        traj.points.push_back({k, Pose(x, y, h)});
    }
    return traj;
}

inline double on_road_fraction(const MapTile& tile, const Trajectory& traj) {
    int hits = 0;
    for (const auto& tp : traj.points)
        if (tile.on_road(tp.pose.x, tp.pose.y)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(traj.size());
}

}  // namespace detail

constexpr int kTrajectoryLen = 16;  // T, at 1 s steps

// Generates a T-point constant-speed path along the tile's road graph.
// Speed is 8.1..14 m/s, fillet radius keeps per-step heading change <= 0.25
// rad, and at least 90% of points land on road cells. Falls back to the
// longest straight chain after 32 attempts; throws when nothing fits.
inline Trajectory generate_gt_trajectory(const MapTile& tile, uint64_t seed) {
    require(!tile.roads.empty(), "generate_gt_trajectory: tile has no road segments");
    detail::RoadGraph graph(tile.roads);
    Rng root(seed);
    const int T = kTrajectoryLen;

    for (int attempt = 0; attempt < 32; ++attempt) {
        Rng rng = root.fork(static_cast<uint64_t>(attempt));
        const double u = rng.uniform(8.1, 14.0);
        const double R = u / 0.25;
        const double need = (T - 1) * u + 4.0;

        // Random non-backtracking walk.
        int cur = static_cast<int>(rng.uniform_int(graph.nodes.size()));
        int prev = -1;
        std::vector<std::pair<double, double>> pts = {graph.nodes[cur]};
        double raw_len = 0;
        while (raw_len < need + 40.0 && pts.size() < 40) {
            const auto& nbrs = graph.adj[cur];
            if (nbrs.empty()) break;
            std::vector<int> options;
            for (int nb : nbrs)
                if (nb != prev) options.push_back(nb);
            if (options.empty()) break;
            int nxt = options[rng.uniform_int(options.size())];
            raw_len += std::hypot(graph.nodes[nxt].first - graph.nodes[cur].first,
                                  graph.nodes[nxt].second - graph.nodes[cur].second);
            pts.push_back(graph.nodes[nxt]);
            prev = cur;
            cur = nxt;
        }
        if (pts.size() < 2) continue;

        detail::SampledPath path;
        if (!detail::fillet_polyline(pts, R, &path)) continue;
        if (path.total < need) continue;
        const double s0 = 2.0 + rng.uniform() * (path.total - need);
        Trajectory traj = detail::sample_points(path, u, s0, T);
        if (detail::on_road_fraction(tile, traj) >= 0.9) return traj;
    }

    // Fallback: longest straight collinear chain (the generated spine).
    struct Chain {
        double span;
        std::pair<double, double> a, b;
    };
    std::vector<Chain> chains;
    {
        std::map<std::tuple<long long, long long, long long>, std::vector<const RoadSegment*>>
            lines;
        for (const auto& s : tile.roads) {
            double dx = s.bx - s.ax, dy = s.by - s.ay;
            const double len = std::hypot(dx, dy);
            if (len < 1e-9) continue;
            dx /= len;
            dy /= len;
            if (dx < 0 || (dx == 0 && dy < 0)) {
                dx = -dx;
                dy = -dy;
            }
            const double off = -dy * s.ax + dx * s.ay;  // signed line offset
            lines[{std::llround(dx * 1e6), std::llround(dy * 1e6), std::llround(off * 1e3)}]
                .push_back(&s);
        }
        for (auto& [k, segs] : lines) {
            const double dx = static_cast<double>(std::get<0>(k)) * 1e-6;
            const double dy = static_cast<double>(std::get<1>(k)) * 1e-6;
            double lo = 1e300, hi = -1e300;
            std::pair<double, double> plo, phi;
            for (const auto* s : segs) {
                for (auto [px, py] : {std::pair<double, double>{s->ax, s->ay},
                                      std::pair<double, double>{s->bx, s->by}}) {
                    const double proj = px * dx + py * dy;
                    if (proj < lo) {
                        lo = proj;
                        plo = {px, py};
                    }
                    if (proj > hi) {
                        hi = proj;
                        phi = {px, py};
                    }
                }
            }
            chains.push_back({hi - lo, plo, phi});
        }
        std::sort(chains.begin(), chains.end(),
                  [](const Chain& a, const Chain& b) { return a.span > b.span; });
    }
    for (const auto& chain : chains) {
        const double u = std::clamp((chain.span - 4.0) / (T - 1), 8.1, 14.0);
        const double need = (T - 1) * u + 4.0;
        if (chain.span < need) continue;
        detail::SampledPath path;
        detail::PathPrim line;
        line.x0 = chain.a.first;
        line.y0 = chain.a.second;
        line.x1 = chain.b.first;
        line.y1 = chain.b.second;
        line.len = chain.span;
        path.prims.push_back(line);
        path.total = chain.span;
        const double s0 = 2.0 + root.fork(999).uniform() * (chain.span - need);
        Trajectory traj = detail::sample_points(path, u, s0, T);
        if (detail::on_road_fraction(tile, traj) >= 0.9) return traj;
    }
    throw numeric_error("generate_gt_trajectory: no feasible path after 32 attempts");
}

// ---------------------------------------------------------------------------
// GPS corruption: random-walk bias + white noise + sample-and-hold dropout.
// Headings are recomputed from the noisy finite differences.
// ---------------------------------------------------------------------------

inline Trajectory corrupt_gps(const Trajectory& gt, const GpsNoiseSpec& spec) {
    gt.validate();
    Rng rng(spec.seed);
    const size_t n = gt.size();
    std::vector<double> xs(n), ys(n);
    double bx = 0, by = 0;  // bias walk starts at zero for the first point
    for (size_t k = 0; k < n; ++k) {
        if (k > 0) {
            bx += rng.normal(0, spec.sigma_walk);
            by += rng.normal(0, spec.sigma_walk);
        }
        const double wx = rng.normal(0, spec.sigma_white);
        const double wy = rng.normal(0, spec.sigma_white);
        xs[k] = gt.points[k].pose.x + bx + wx;
        ys[k] = gt.points[k].pose.y + by + wy;
        if (k > 0 && rng.bernoulli(spec.dropout_prob)) {
            xs[k] = xs[k - 1];
            ys[k] = ys[k - 1];
        }
    }
    std::vector<double> headings(n, 0.0);
    bool any = false;
    for (size_t k = 1; k < n; ++k) {
        const double dx = xs[k] - xs[k - 1], dy = ys[k] - ys[k - 1];
        if (std::hypot(dx, dy) > 1e-9) {
            headings[k] = std::atan2(dy, dx);
            any = true;
        } else {
            headings[k] = headings[k - 1];
        }
    }
    headings[0] = any ? headings[1] : gt.points[0].pose.theta;
    Trajectory out;
    out.points.reserve(n);
    for (size_t k = 0; k < n; ++k)
        out.points.push_back({gt.points[k].t, Pose(xs[k], ys[k], headings[k])});
    return out;
}

// ---------------------------------------------------------------------------
// Polar rendering: bilinear semantic samples of the tile along rays in the
// forward sector; optional per-cell dropout plus clamped additive noise.
// ---------------------------------------------------------------------------

inline PolarObservation render_polar_observation(const MapTile& tile, const Pose& pose,
                                                 double obs_noise, uint64_t seed = 0) {
    if (!tile.contains(pose.x, pose.y))
        throw numeric_error("render_polar_observation: pose outside tile");
    require(obs_noise >= 0.0 && obs_noise < 1.0, "obs_noise must be in [0,1)");
    PolarObservation obs;
    obs.has_pose = true;
    obs.sensor_pose = pose;
    constexpr int R = PolarObservation::kRangeBins;
    constexpr int A = PolarObservation::kAzimuthBins;
    const double astep = PolarObservation::kFov / A;
    for (int c = 0; c < 3; ++c) {
        for (int ri = 0; ri < R; ++ri) {
            const double r = (ri + 0.5) * PolarObservation::kRangeStep;
            for (int ai = 0; ai < A; ++ai) {
                const double a = -PolarObservation::kFov / 2 + (ai + 0.5) * astep;
                const double wx = pose.x + r * std::cos(pose.theta + a);
                const double wy = pose.y + r * std::sin(pose.theta + a);
                obs.grid.at(c, ri, ai) = static_cast<float>(
                    bilinear_at(tile.grid, c, tile.row_of(wy), tile.col_of(wx)));
            }
        }
    }
    if (obs_noise > 0.0) {
        Rng rng(seed);
        for (auto& v : obs.grid.data) {
            if (rng.bernoulli(obs_noise)) v = 0.0f;
            v = static_cast<float>(std::clamp(static_cast<double>(v) + rng.normal(0.0, 0.05),
                                              0.0, 1.0));
        }
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Rigid view resampling: a 128 m window of the tile re-centered (and rotated)
// on an arbitrary pose, bilinear, zero beyond the source raster. Poses map
// between frames with world_to_view / view_to_world.
// ---------------------------------------------------------------------------

inline Pose world_to_view(const Pose& p, const Pose& center) {
    const double c = std::cos(center.theta), s = std::sin(center.theta);
    const double dx = p.x - center.x, dy = p.y - center.y;
    return Pose(c * dx + s * dy + MapTile::kExtent / 2, -s * dx + c * dy + MapTile::kExtent / 2,
                p.theta - center.theta);
}

inline Pose view_to_world(const Pose& p, const Pose& center) {
    const double c = std::cos(center.theta), s = std::sin(center.theta);
    const double vx = p.x - MapTile::kExtent / 2, vy = p.y - MapTile::kExtent / 2;
    return Pose(center.x + c * vx - s * vy, center.y + s * vx + c * vy, p.theta + center.theta);
}

inline Trajectory world_to_view(const Trajectory& traj, const Pose& center) {
    Trajectory out;
    out.points.reserve(traj.size());
    for (const auto& tp : traj.points) out.points.push_back({tp.t, world_to_view(tp.pose, center)});
    return out;
}

inline MapTile resample_view(const MapTile& tile, const Pose& center) {
    MapTile view;
    view.origin_x = 0.0;
    view.origin_y = 0.0;
    const bool identity = std::abs(center.x - tile.center_x()) < 1e-12 &&
                          std::abs(center.y - tile.center_y()) < 1e-12 &&
                          std::abs(center.theta) < 1e-12;
    if (identity) {
        view.grid = tile.grid;
        return view;
    }
    const double c = std::cos(center.theta), s = std::sin(center.theta);
    for (int r = 0; r < MapTile::kSize; ++r) {
        const double vy = (r + 0.5) * MapTile::kResolution - MapTile::kExtent / 2;
        for (int col = 0; col < MapTile::kSize; ++col) {
            const double vx = (col + 0.5) * MapTile::kResolution - MapTile::kExtent / 2;
            const double wx = center.x + c * vx - s * vy;
            const double wy = center.y + s * vx + c * vy;
            const double fr = tile.row_of(wy), fc = tile.col_of(wx);
            for (int ch = 0; ch < 3; ++ch)
                view.grid.at(ch, r, col) = static_cast<float>(bilinear_at(tile.grid, ch, fr, fc));
        }
    }
    return view;
}

}  // namespace trajden
