#pragma once

#include <cmath>

#include "trajden/matcher.hpp"
#include "trajden/optim.hpp"
#include "trajden/tape.hpp"
#include "trajden/worldgen.hpp"

namespace trajden {

// Ego-centric BEV window the observation is resampled into: forward [0,32) m,
// lateral [-16,16) m at 0.5 m/px. Rows index lateral (left positive with the
// vehicle facing along +forward), columns index forward range.
constexpr int kBevSize = 64;
constexpr double kBevRes = 0.5;
constexpr double kBevForward = 32.0;
constexpr double kBevLateral = 16.0;

// Resamples the polar scan onto the Cartesian ego grid: each BEV cell looks up
// (r = sqrt(f^2+l^2), a = atan2(l, f)) with bilinear interpolation; cells
// outside the field of view or beyond max range read zero. Linear in the
// observation values.
inline Grid polar_to_cartesian(const PolarObservation& obs) {
    require(obs.grid.shape ==
                std::vector<int>{3, PolarObservation::kRangeBins, PolarObservation::kAzimuthBins},
            "polar_to_cartesian: unexpected observation shape");
    Grid bev({3, kBevSize, kBevSize});
    const double max_range = PolarObservation::kRangeBins * PolarObservation::kRangeStep;
    const double astep = PolarObservation::kFov / PolarObservation::kAzimuthBins;
    for (int row = 0; row < kBevSize; ++row) {
        const double l = -kBevLateral + (row + 0.5) * kBevRes;
        for (int col = 0; col < kBevSize; ++col) {
            const double f = (col + 0.5) * kBevRes;
            const double r = std::hypot(f, l);
            const double a = std::atan2(l, f);
            if (r >= max_range || std::abs(a) >= PolarObservation::kFov / 2) continue;
            const double rb = r / PolarObservation::kRangeStep - 0.5;
            const double ab = (a + PolarObservation::kFov / 2) / astep - 0.5;
            for (int ch = 0; ch < 3; ++ch)
                bev.at(ch, row, col) = static_cast<float>(bilinear_at(obs.grid, ch, rb, ab));
        }
    }
    return bev;
}

namespace detail {

template <typename T>
Var conv_block(Tape<T>& tp, Var x, ParamStore& ps, const std::string& name, int in_ch, int out_ch,
               int stride) {
    Grid& K = ps.ensure(name + ".K", {out_ch, in_ch, 3, 3}, in_ch * 9);
    Grid& b = ps.ensure(name + ".b", {out_ch}, 0);
    auto y = conv2d_3x3(tp, x, tp.param(K), tp.param(b), stride);
    return layer_norm(tp, relu(tp, y));
}

}  // namespace detail

// 3 -> 16 -> 16 -> 16 conv stack at full BEV resolution.
template <typename T>
Var encode_bev(Tape<T>& tp, Var bev_raw, ParamStore& ps) {
    require(tp.value(bev_raw).shape == std::vector<int>{3, kBevSize, kBevSize},
            "encode_bev: input must be [3,64,64]");
    auto h = detail::conv_block(tp, bev_raw, ps, "enc_bev.conv1", 3, 16, 1);
    h = detail::conv_block(tp, h, ps, "enc_bev.conv2", 16, 16, 1);
    h = detail::conv_block(tp, h, ps, "enc_bev.conv3", 16, 16, 1);
    return h;
}

// Map raster 256x256 -> features 64x64 via two stride-2 blocks.
template <typename T>
Var encode_map(Tape<T>& tp, Var map_raster, ParamStore& ps) {
    require(tp.value(map_raster).shape == std::vector<int>{3, MapTile::kSize, MapTile::kSize},
            "encode_map: input must be [3,256,256]");
    auto h = detail::conv_block(tp, map_raster, ps, "enc_map.conv1", 3, 16, 2);
    h = detail::conv_block(tp, h, ps, "enc_map.conv2", 16, 16, 2);
    h = detail::conv_block(tp, h, ps, "enc_map.conv3", 16, 16, 1);
    return h;
}

// Cross-modal fusion into the 128-d diffusion condition: pooled embeddings of
// both feature grids, the matcher's soft-argmax pose in [-1,1]^3 coordinates,
// and its normalized belief entropy, pushed through a two-layer MLP. The
// matcher summary keeps the condition differentiable w.r.t. the score volume,
// so localization training shapes what the diffusion head sees.
template <typename T>
Var fuse_condition(Tape<T>& tp, Var f_bev, Var f_map, const ScoreVolume& sv, ParamStore& ps) {
    auto mp_bev = mean_pool(tp, f_bev);  // [16]
    auto mp_map = mean_pool(tp, f_map);  // [16]

    const ScoreGeometry& g = sv.geom;
    const size_t n = static_cast<size_t>(g.K) * g.H * g.W;
    BasicGrid<T> crow({g.K, g.H, g.W}), ccol({g.K, g.H, g.W}), cbin({g.K, g.H, g.W});
    for (int b = 0; b < g.K; ++b) {
        const double nb = g.theta_of_bin(b) / kPi;
        for (int r = 0; r < g.H; ++r) {
            const double nr = 2.0 * (r + 0.5) / g.H - 1.0;
            for (int c = 0; c < g.W; ++c) {
                const size_t i = g.index(r, c, b);
                crow.data[i] = static_cast<T>(nr);
                ccol.data[i] = static_cast<T>(2.0 * (c + 0.5) / g.W - 1.0);
                cbin.data[i] = static_cast<T>(nb);
            }
        }
    }
    auto p = softmax(tp, sv.logits);
    auto lsm = log_softmax(tp, sv.logits);
    auto sx = sum_all(tp, mul(tp, p, tp.leaf(std::move(ccol))));
    auto sy = sum_all(tp, mul(tp, p, tp.leaf(std::move(crow))));
    auto sth = sum_all(tp, mul(tp, p, tp.leaf(std::move(cbin))));
    auto entropy =
        scale(tp, sum_all(tp, mul(tp, p, lsm)), -1.0 / std::log(static_cast<double>(n)));

    auto feat = concat(tp, {mp_bev, mp_map, sx, sy, sth, entropy}, 0);  // [36]
    Grid& W1 = ps.ensure("fuse.fc1.W", {128, 36}, 36);
    Grid& b1 = ps.ensure("fuse.fc1.b", {128}, 0);
    Grid& W2 = ps.ensure("fuse.fc2.W", {128, 128}, 128);
    Grid& b2 = ps.ensure("fuse.fc2.b", {128}, 0);
    auto h = relu(tp, linear(tp, feat, tp.param(W1), tp.param(b1)));
    return linear(tp, h, tp.param(W2), tp.param(b2));
}

}  // namespace trajden
