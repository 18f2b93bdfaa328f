#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "trajden/geometry.hpp"
#include "trajden/tape.hpp"

namespace trajden {

// Discretization of the exhaustive pose search: 64x64 translation cells at
// the map feature resolution (2.0 m) over the full tile, K=16 heading bins
// with centers at multiples of 2*pi/K so that 0 is a bin center.
struct ScoreGeometry {
    int K = 16;
    int H = 64;
    int W = 64;
    double cell = 2.0;
    double origin_x = 0.0;  // southwest corner of the scored window
    double origin_y = 0.0;

    double theta_of_bin(int k) const { return wrap_angle(2.0 * kPi * k / K); }
    int bin_of_theta(double theta) const {
        const long long k = std::llround(wrap_angle(theta) / (2.0 * kPi / K));
        return static_cast<int>(((k % K) + K) % K);
    }
    size_t index(int row, int col, int bin) const {
        return (static_cast<size_t>(bin) * H + row) * W + col;
    }
    Pose cell_pose(int row, int col, int bin) const {
        return Pose(origin_x + (col + 0.5) * cell, origin_y + (row + 0.5) * cell,
                    theta_of_bin(bin));
    }
    bool contains(double x, double y) const {
        return x >= origin_x && x < origin_x + W * cell && y >= origin_y &&
               y < origin_y + H * cell;
    }
};

struct ScoreVolume {
    Var logits;  // [K, H, W] on the tape
    ScoreGeometry geom;
};

namespace detail {

// Per-bin rotated template structure: each support cell splats into up to
// four integer map-cell offsets; slots consolidate shared offsets.
struct BinPlan {
    std::vector<int> off_dr, off_dc;                // per slot
    std::vector<std::array<int, 4>> cell_slot;      // per support cell
    std::vector<std::array<double, 4>> cell_w;      // per support cell
};

struct MatchPlan {
    int C, hb, wb, K, H, W;
    double inv_norm;
    std::vector<BinPlan> bins;
};

inline std::shared_ptr<MatchPlan> build_match_plan(int C, int hb, int wb, int K, int H, int W,
                                                   double support_cell, double map_cell,
                                                   double anchor_row, double anchor_col) {
    auto plan = std::make_shared<MatchPlan>();
    plan->C = C;
    plan->hb = hb;
    plan->wb = wb;
    plan->K = K;
    plan->H = H;
    plan->W = W;
    plan->inv_norm = 1.0 / std::sqrt(static_cast<double>(C) * hb * wb);
    plan->bins.resize(K);
    for (int k = 0; k < K; ++k) {
        BinPlan& bp = plan->bins[k];
        const double theta = 2.0 * kPi * k / K;
        const double cs = std::cos(theta), sn = std::sin(theta);
        bp.cell_slot.resize(static_cast<size_t>(hb) * wb);
        bp.cell_w.resize(static_cast<size_t>(hb) * wb);
        std::map<std::pair<int, int>, int> slot_of;
        for (int i = 0; i < hb; ++i) {
            for (int j = 0; j < wb; ++j) {
                const double f = (j - anchor_col) * support_cell;  // forward
                const double l = (i - anchor_row) * support_cell;  // left
                const double dc = (f * cs - l * sn) / map_cell;
                const double dr = (f * sn + l * cs) / map_cell;
                const int r0 = static_cast<int>(std::floor(dr));
                const int c0 = static_cast<int>(std::floor(dc));
                const double fr = dr - r0, fc = dc - c0;
                const std::array<std::pair<int, int>, 4> taps = {
                    std::pair<int, int>{r0, c0}, {r0, c0 + 1}, {r0 + 1, c0}, {r0 + 1, c0 + 1}};
                const std::array<double, 4> w = {(1 - fr) * (1 - fc), (1 - fr) * fc,
                                                 fr * (1 - fc), fr * fc};
                auto& slots = bp.cell_slot[static_cast<size_t>(i) * wb + j];
                auto& weights = bp.cell_w[static_cast<size_t>(i) * wb + j];
                for (int t = 0; t < 4; ++t) {
                    auto it = slot_of.find(taps[t]);
                    int slot;
                    if (it == slot_of.end()) {
                        slot = static_cast<int>(bp.off_dr.size());
                        slot_of[taps[t]] = slot;
                        bp.off_dr.push_back(taps[t].first);
                        bp.off_dc.push_back(taps[t].second);
                    } else {
                        slot = it->second;
                    }
                    slots[t] = slot;
                    weights[t] = w[t] * plan->inv_norm;
                }
            }
        }
    }
    return plan;
}

// template_out[ch][slot] = sum_cells w * support[ch][cell]
template <typename T>
void splat_template(const MatchPlan& plan, int k, const BasicGrid<T>& support,
                    std::vector<double>* out) {
    const BinPlan& bp = plan.bins[k];
    const size_t M = bp.off_dr.size();
    out->assign(static_cast<size_t>(plan.C) * M, 0.0);
    const size_t cells = static_cast<size_t>(plan.hb) * plan.wb;
    for (int ch = 0; ch < plan.C; ++ch) {
        const T* sp = support.data.data() + ch * cells;
        double* tp = out->data() + static_cast<size_t>(ch) * M;
        for (size_t cell = 0; cell < cells; ++cell) {
            const double v = static_cast<double>(sp[cell]);
            if (v == 0.0) continue;
            const auto& slots = bp.cell_slot[cell];
            const auto& w = bp.cell_w[cell];
            tp[slots[0]] += w[0] * v;
            tp[slots[1]] += w[1] * v;
            tp[slots[2]] += w[2] * v;
            tp[slots[3]] += w[3] * v;
        }
    }
}

}  // namespace detail

// Exhaustive rotate-and-correlate scoring of a template grid (already at map
// feature resolution) against map features. For every heading bin the support
// is rotated about its anchor cell (bilinear splat) and cross-correlated over
// all translations; out-of-map support reads as zero. Scores are divided by
// sqrt(C * hb * wb).
//
// anchor_(row,col) locate the vehicle inside the support grid, in cell units;
// support_cell and map_cell are meters per cell of the two grids.
template <typename T>
Var score_volume_support(Tape<T>& tp, Var support, Var map_features, int K, double support_cell,
                         double map_cell, double anchor_row, double anchor_col) {
    const auto& S = tp.value(support);
    const auto& M = tp.value(map_features);
    require(S.rank() == 3 && M.rank() == 3, "score_volume: inputs must be [C,*,*]");
    if (S.shape[0] != M.shape[0])
        throw numeric_error("score_volume: channel mismatch " + S.shape_str() + " vs " +
                            M.shape_str());
    const int C = S.shape[0], hb = S.shape[1], wb = S.shape[2];
    const int H = M.shape[1], W = M.shape[2];
    auto plan = detail::build_match_plan(C, hb, wb, K, H, W, support_cell, map_cell, anchor_row,
                                         anchor_col);

    BasicGrid<T> out({K, H, W});
    std::vector<double> tmpl;
    std::vector<T> acc(static_cast<size_t>(H) * W);
    for (int k = 0; k < K; ++k) {
        detail::splat_template(*plan, k, S, &tmpl);
        std::fill(acc.begin(), acc.end(), T(0));
        const auto& bp = plan->bins[k];
        const size_t Mslots = bp.off_dr.size();
        for (int ch = 0; ch < C; ++ch) {
            const T* mplane = M.data.data() + static_cast<size_t>(ch) * H * W;
            const double* tp_ch = tmpl.data() + static_cast<size_t>(ch) * Mslots;
            for (size_t m = 0; m < Mslots; ++m) {
                const T w = static_cast<T>(tp_ch[m]);
                if (w == T(0)) continue;
                const int dr = bp.off_dr[m], dc = bp.off_dc[m];
                const int r_lo = std::max(0, -dr), r_hi = std::min(H, H - dr);
                const int c_lo = std::max(0, -dc), c_hi = std::min(W, W - dc);
                const int span = c_hi - c_lo;
                if (span <= 0) continue;
                for (int r = r_lo; r < r_hi; ++r) {
                    T* arow = acc.data() + static_cast<size_t>(r) * W + c_lo;
                    const T* mrow = mplane + static_cast<size_t>(r + dr) * W + dc + c_lo;
                    for (int c = 0; c < span; ++c) arow[c] += w * mrow[c];
                }
            }
        }
        T* oplane = out.data.data() + static_cast<size_t>(k) * H * W;
        std::copy(acc.begin(), acc.end(), oplane);
    }

    return tp.make_node(
        std::move(out), {support, map_features},
        [support, map_features, plan](Tape<T>& t, Var self) {
            const auto& g = t.adj(self);
            const auto& S = t.value(support);
            const auto& M = t.value(map_features);
            auto& dS = t.adj(support);
            auto& dM = t.adj(map_features);
            const int C = plan->C, hb = plan->hb, wb = plan->wb;
            const int H = plan->H, W = plan->W, K = plan->K;
            const size_t cells = static_cast<size_t>(hb) * wb;
            std::vector<double> tmpl, dtmpl;
            for (int k = 0; k < K; ++k) {
                const auto& bp = plan->bins[k];
                const size_t Mslots = bp.off_dr.size();
                detail::splat_template(*plan, k, S, &tmpl);
                dtmpl.assign(static_cast<size_t>(C) * Mslots, 0.0);
                const T* gplane = g.data() + static_cast<size_t>(k) * H * W;
                for (int ch = 0; ch < C; ++ch) {
                    const T* mplane = M.data.data() + static_cast<size_t>(ch) * H * W;
                    T* dmplane = dM.data() + static_cast<size_t>(ch) * H * W;
                    const double* t_ch = tmpl.data() + static_cast<size_t>(ch) * Mslots;
                    double* dt_ch = dtmpl.data() + static_cast<size_t>(ch) * Mslots;
                    for (size_t m = 0; m < Mslots; ++m) {
                        const int dr = bp.off_dr[m], dc = bp.off_dc[m];
                        const int r_lo = std::max(0, -dr), r_hi = std::min(H, H - dr);
                        const int c_lo = std::max(0, -dc), c_hi = std::min(W, W - dc);
                        const int span = c_hi - c_lo;
                        if (span <= 0) continue;
                        const T w = static_cast<T>(t_ch[m]);
                        // map gradient: shifted AXPY of the score adjoint
                        if (w != T(0)) {
                            for (int r = r_lo; r < r_hi; ++r) {
                                const T* grow = gplane + static_cast<size_t>(r) * W + c_lo;
                                T* dmrow = dmplane + static_cast<size_t>(r + dr) * W + dc + c_lo;
                                for (int c = 0; c < span; ++c) dmrow[c] += w * grow[c];
                            }
                        }
                        // template gradient: shifted dot of adjoint with the
                        // map; lanes accumulate across rows
                        T lanes[8] = {};
                        double tail = 0.0;
                        for (int r = r_lo; r < r_hi; ++r) {
                            const T* grow = gplane + static_cast<size_t>(r) * W + c_lo;
                            const T* mrow = mplane + static_cast<size_t>(r + dr) * W + dc + c_lo;
                            int c = 0;
                            for (; c + 8 <= span; c += 8)
                                for (int j = 0; j < 8; ++j) lanes[j] += grow[c + j] * mrow[c + j];
                            for (; c < span; ++c)
                                tail += static_cast<double>(grow[c]) * mrow[c];
                        }
                        const double s01 = static_cast<double>(lanes[0]) + lanes[1];
                        const double s23 = static_cast<double>(lanes[2]) + lanes[3];
                        const double s45 = static_cast<double>(lanes[4]) + lanes[5];
                        const double s67 = static_cast<double>(lanes[6]) + lanes[7];
                        dt_ch[m] = (s01 + s23) + (s45 + s67) + tail;
                    }
                    // chain through the splat
                    T* dsp = dS.data() + ch * cells;
                    for (size_t cell = 0; cell < cells; ++cell) {
                        const auto& slots = bp.cell_slot[cell];
                        const auto& wgt = bp.cell_w[cell];
                        dsp[cell] += static_cast<T>(
                            wgt[0] * dt_ch[slots[0]] + wgt[1] * dt_ch[slots[1]] +
                            wgt[2] * dt_ch[slots[2]] + wgt[3] * dt_ch[slots[3]]);
                    }
                }
            }
        });
}

// Production configuration: BEV features pooled 8x to 4 m template cells
// (8x8 support) and correlated against 64x64 map features at 2 m. The vehicle
// anchor sits at lateral center, forward edge of the BEV window.
template <typename T>
ScoreVolume score_volume(Tape<T>& tp, Var f_bev, Var f_map, double origin_x = 0.0,
                         double origin_y = 0.0) {
    const auto& B = tp.value(f_bev);
    const auto& M = tp.value(f_map);
    require(B.shape == std::vector<int>{16, 64, 64}, "score_volume: F_bev must be [16,64,64]");
    require(M.shape == std::vector<int>{16, 64, 64}, "score_volume: F_map must be [16,64,64]");
    Var support = avg_pool2d(tp, f_bev, 8);
    ScoreVolume sv;
    sv.geom.origin_x = origin_x;
    sv.geom.origin_y = origin_y;
    sv.logits = score_volume_support(tp, support, f_map, sv.geom.K, 4.0, sv.geom.cell, 3.5, -0.5);
    return sv;
}

// Label-smoothed NLL of the ground-truth cell/bin: (1-eps) on the exact cell,
// eps spread uniformly over its in-bounds 3x3x3 neighborhood (theta wraps).
template <typename T>
Var localization_loss(Tape<T>& tp, const ScoreVolume& sv, const Pose& gt, double eps = 0.1) {
    const ScoreGeometry& g = sv.geom;
    require(eps >= 0.0 && eps < 0.5, "localization_loss: eps must be in [0, 0.5)");
    if (!g.contains(gt.x, gt.y))
        throw numeric_error("localization_loss: ground truth outside the scored tile");
    const int col = static_cast<int>(std::floor((gt.x - g.origin_x) / g.cell));
    const int row = static_cast<int>(std::floor((gt.y - g.origin_y) / g.cell));
    const int bin = g.bin_of_theta(gt.theta);

    BasicGrid<T> q({g.K, g.H, g.W}, T(0));
    std::vector<size_t> neighborhood;
    for (int db = -1; db <= 1; ++db) {
        const int b = ((bin + db) % g.K + g.K) % g.K;
        for (int dr = -1; dr <= 1; ++dr) {
            const int r = row + dr;
            if (r < 0 || r >= g.H) continue;
            for (int dc = -1; dc <= 1; ++dc) {
                const int c = col + dc;
                if (c < 0 || c >= g.W) continue;
                neighborhood.push_back(g.index(r, c, b));
            }
        }
    }
    const T spread = static_cast<T>(eps / static_cast<double>(neighborhood.size()));
    for (size_t idx : neighborhood) q.data[idx] += spread;
    q.data[g.index(row, col, bin)] += static_cast<T>(1.0 - eps);
    return nll_from_logscores(tp, sv.logits, tp.leaf(std::move(q)));
}

struct PoseBelief {
    Pose argmax;
    int row = 0, col = 0, bin = 0;
    Grid log_probs;  // [K,H,W], normalized so logsumexp == 0
};

// Normalizes scores into log-probabilities and extracts the argmax pose.
// Ties break toward the lowest (row, col, bin).
inline PoseBelief belief_from_scores(const Grid& logits, const ScoreGeometry& geom) {
    require(logits.shape == std::vector<int>{geom.K, geom.H, geom.W},
            "belief_from_scores: unexpected score shape");
    PoseBelief belief;
    double m = -1e300;
    for (float v : logits.data) m = std::max(m, static_cast<double>(v));
    double sum = 0.0;
    for (float v : logits.data) sum += std::exp(static_cast<double>(v) - m);
    const double lse = m + std::log(sum);
    belief.log_probs = Grid(logits.shape);
    for (size_t i = 0; i < logits.data.size(); ++i)
        belief.log_probs.data[i] = static_cast<float>(static_cast<double>(logits.data[i]) - lse);

    float best = -std::numeric_limits<float>::infinity();
    for (int r = 0; r < geom.H; ++r)
        for (int c = 0; c < geom.W; ++c)
            for (int b = 0; b < geom.K; ++b) {
                const float v = logits.data[geom.index(r, c, b)];
                if (v > best) {
                    best = v;
                    belief.row = r;
                    belief.col = c;
                    belief.bin = b;
                }
            }
    belief.argmax = geom.cell_pose(belief.row, belief.col, belief.bin);
    return belief;
}

}  // namespace trajden
