#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "trajden/geometry.hpp"
#include "trajden/optim.hpp"
#include "trajden/rng.hpp"
#include "trajden/tape.hpp"

namespace trajden {

// ---------------------------------------------------------------------------
// Noise schedule: linear beta ramp, cumulative alpha-bar products.
// ---------------------------------------------------------------------------

struct ScheduleConfig {
    int steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;       // 1-indexed, beta[0] unused
    std::vector<double> alpha_bar;  // alpha_bar[0] == 1

    double sqrt_ab(int t) const { return std::sqrt(alpha_bar[static_cast<size_t>(t)]); }
    double sqrt_one_minus_ab(int t) const {
        return std::sqrt(1.0 - alpha_bar[static_cast<size_t>(t)]);
    }
};

inline NoiseSchedule build_schedule(const ScheduleConfig& cfg = {}) {
    require(cfg.steps >= 2, "build_schedule: need at least 2 steps");
    if (!(cfg.beta_start > 0.0 && cfg.beta_start <= cfg.beta_end && cfg.beta_end < 1.0))
        throw config_error("build_schedule: invalid beta range");
    NoiseSchedule s;
    s.steps = cfg.steps;
    s.beta.assign(static_cast<size_t>(cfg.steps) + 1, 0.0);
    s.alpha_bar.assign(static_cast<size_t>(cfg.steps) + 1, 1.0);
    for (int t = 1; t <= cfg.steps; ++t) {
        s.beta[t] = cfg.beta_start +
                    (cfg.beta_end - cfg.beta_start) * static_cast<double>(t - 1) /
                        static_cast<double>(cfg.steps - 1);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
        if (!(s.alpha_bar[t] < s.alpha_bar[t - 1]) || s.alpha_bar[t] <= 0.0)
            throw numeric_error("build_schedule: alpha_bar not strictly decreasing");
    }
    return s;
}

// ---------------------------------------------------------------------------
// Normalized-trajectory <-> grid conversions (the tape runs on f32)
// ---------------------------------------------------------------------------

inline Grid norm_to_grid(const NormalizedTrajectory& nt) {
    Grid g({static_cast<int>(nt.size()), 4});
    for (size_t i = 0; i < nt.size(); ++i)
        for (int c = 0; c < 4; ++c) g.at(static_cast<int>(i), c) = static_cast<float>(nt.ch[i][c]);
    return g;
}

inline NormalizedTrajectory grid_to_norm(const Grid& g, const std::vector<int>& t_indices) {
    require(g.numel() == t_indices.size() * 4, "grid_to_norm: size mismatch");
    NormalizedTrajectory nt;
    nt.t = t_indices;
    nt.ch.resize(t_indices.size());
    for (size_t i = 0; i < t_indices.size(); ++i)
        for (int c = 0; c < 4; ++c)
            nt.ch[i][c] = static_cast<double>(g.data[i * 4 + static_cast<size_t>(c)]);
    return nt;
}

// P_t = sqrt(ab_t) * x + sqrt(1 - ab_t) * eps, elementwise.
inline Grid forward_noise(const Grid& x, const NoiseSchedule& schedule, int t, Rng& rng) {
    require(t >= 1 && t <= schedule.steps, "forward_noise: t out of schedule range");
    const double sa = schedule.sqrt_ab(t);
    const double sn = schedule.sqrt_one_minus_ab(t);
    Grid out(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = static_cast<float>(sa * x.data[i] + sn * rng.normal());
    return out;
}

// ---------------------------------------------------------------------------
// Anchored conditional denoiser
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int traj_len = 16;   // T
    int n_anchor = 8;
    int t_embed_dim = 64;
    int embed_dim = 128;
    int trunk_dim = 256;

    int traj_dim() const { return traj_len * 4; }
};

// Noisy trajectory hypotheses denoised jointly. `anchors` rows are flattened
// T x 4 normalized trajectories corrupted at diffusion step `t`.
struct AnchorBatch {
    Grid anchors;  // [n_anchor, T*4]
    int t = 0;
};

inline Grid sinusoidal_embedding(double t, int dim) {
    Grid g({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        g.data[static_cast<size_t>(2 * i)] = static_cast<float>(std::sin(t * freq));
        g.data[static_cast<size_t>(2 * i + 1)] = static_cast<float>(std::cos(t * freq));
    }
    return g;
}

template <typename T>
struct DenoiserVars {
    Var traj_W, traj_b;
    Var t_W, t_b;
    Var trunk1_W, trunk1_b;
    Var trunk2_W, trunk2_b;
    Var refine_W, refine_b;
    Var score_W, score_b;
};

template <typename T>
struct DenoiseOut {
    Var scores;   // [n_anchor]
    Var refined;  // [n_anchor, T*4]
};

// Core forward pass: per-anchor embedding, concat with timestep and condition
// embeddings, MLP trunk, residual refinement head plus score head. Anchors
// never interact, so permuting them permutes the outputs.
template <typename T>
DenoiseOut<T> denoiser_forward(Tape<T>& tp, Var anchors, Var t_embed_raw, Var cond,
                               const DenoiserVars<T>& pv) {
    const int n = tp.value(anchors).shape[0];
    auto aemb = linear(tp, anchors, pv.traj_W, pv.traj_b);                    // [n,embed]
    auto temb = repeat_rows(tp, linear(tp, t_embed_raw, pv.t_W, pv.t_b), n);  // [n,embed]
    auto cemb = repeat_rows(tp, cond, n);                                     // [n,embed]
    auto h = concat(tp, {aemb, temb, cemb}, 1);
    h = layer_norm(tp, relu(tp, linear(tp, h, pv.trunk1_W, pv.trunk1_b)));
    h = layer_norm(tp, relu(tp, linear(tp, h, pv.trunk2_W, pv.trunk2_b)));
    DenoiseOut<T> out;
    out.refined = add(tp, anchors, linear(tp, h, pv.refine_W, pv.refine_b));
    out.scores = reshape(tp, linear(tp, h, pv.score_W, pv.score_b), {n});
    return out;
}

inline DenoiserVars<float> bind_denoiser_params(Tape<float>& tp, ParamStore& ps,
                                                const DenoiserConfig& cfg) {
    const int td = cfg.traj_dim(), e = cfg.embed_dim, tr = cfg.trunk_dim;
    DenoiserVars<float> pv;
    pv.traj_W = tp.param(ps.ensure("den.traj_embed.W", {e, td}, td));
    pv.traj_b = tp.param(ps.ensure("den.traj_embed.b", {e}, 0));
    pv.t_W = tp.param(ps.ensure("den.t_embed.W", {e, cfg.t_embed_dim}, cfg.t_embed_dim));
    pv.t_b = tp.param(ps.ensure("den.t_embed.b", {e}, 0));
    pv.trunk1_W = tp.param(ps.ensure("den.trunk1.W", {tr, 3 * e}, 3 * e));
    pv.trunk1_b = tp.param(ps.ensure("den.trunk1.b", {tr}, 0));
    pv.trunk2_W = tp.param(ps.ensure("den.trunk2.W", {tr, tr}, tr));
    pv.trunk2_b = tp.param(ps.ensure("den.trunk2.b", {tr}, 0));
    pv.refine_W = tp.param(ps.ensure("den.refine.W", {td, tr}, tr));
    pv.refine_b = tp.param(ps.ensure("den.refine.b", {td}, 0));
    pv.score_W = tp.param(ps.ensure("den.score.W", {1, tr}, tr));
    pv.score_b = tp.param(ps.ensure("den.score.b", {1}, 0));
    return pv;
}

inline DenoiseOut<float> denoise_batch(Tape<float>& tp, const AnchorBatch& batch, Var cond,
                                       ParamStore& ps, const DenoiserConfig& cfg = {}) {
    require(batch.anchors.shape == std::vector<int>{cfg.n_anchor, cfg.traj_dim()},
            "denoise_batch: anchor shape mismatch");
    auto pv = bind_denoiser_params(tp, ps, cfg);
    auto t_raw = tp.leaf(sinusoidal_embedding(static_cast<double>(batch.t), cfg.t_embed_dim));
    return denoiser_forward(tp, tp.leaf(batch.anchors), t_raw, cond, pv);
}

// ---------------------------------------------------------------------------
// Positive assignment and the refinement loss
// ---------------------------------------------------------------------------

// argmin_k of the L2 distance over position channels only; ties break toward
// the lowest index.
inline int assign_positive(const Grid& anchors, const Grid& target_flat) {
    require(anchors.rank() == 2, "assign_positive: anchors must be [n, T*4]");
    require(static_cast<size_t>(anchors.shape[1]) == target_flat.numel(),
            "assign_positive: target size mismatch");
    const int n = anchors.shape[0], d = anchors.shape[1];
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int j = 0; j < d; j += 4) {
            const double dx = static_cast<double>(anchors.at(k, j)) - target_flat.data[j];
            const double dy =
                static_cast<double>(anchors.at(k, j + 1)) - target_flat.data[j + 1];
            acc += dx * dx + dy * dy;
        }
        if (acc < best_d) {
            best_d = acc;
            best = k;
        }
    }
    return best;
}

// L_diff = |p_hat[k*] - target|_1 (mean over elements) + lambda * sum_k BCE(s_k, y_k).
template <typename T>
Var refinement_loss(Tape<T>& tp, const DenoiseOut<T>& out, const BasicGrid<T>& target_flat,
                    int positive, double lambda) {
    const int n = tp.value(out.scores).shape[0];
    require(positive >= 0 && positive < n, "refinement_loss: positive index out of range");
    auto pos_traj = select_row(tp, out.refined, positive);
    auto l1 = l1_loss(tp, pos_traj, tp.leaf(target_flat));
    BasicGrid<T> labels({n}, T(0));
    labels.data[static_cast<size_t>(positive)] = T(1);
    auto bce = bce_with_logits(tp, out.scores, tp.leaf(std::move(labels)));
    return add(tp, l1, scale(tp, bce, lambda));
}

// ---------------------------------------------------------------------------
// Truncated anchored sampling
// ---------------------------------------------------------------------------

struct SampleConfig {
    std::vector<int> ladder = {40, 20};  // descending diffusion steps
    bool ancestral = false;              // diagnostic: full reverse process
    uint64_t seed = 0;
};

struct SampleResult {
    Trajectory traj;
    Pose pose;          // denoised query point
    int best_anchor = 0;
    std::vector<float> final_scores;
};

namespace detail {
inline void noise_row(Grid* anchors, int row, const Grid& x, const NoiseSchedule& schedule,
                      int t, Rng& rng) {
    const double sa = schedule.sqrt_ab(t);
    const double sn = schedule.sqrt_one_minus_ab(t);
    for (size_t j = 0; j < x.data.size(); ++j)
        anchors->at(row, static_cast<int>(j)) =
            static_cast<float>(sa * x.data[j] + sn * rng.normal());
}
}  // namespace detail

// Draws n_anchor corrupted copies of the normalized GPS trajectory at the top
// of the ladder, then alternates denoising and re-noising down the ladder.
// The highest-scoring anchor after the final denoise is clamped to [-1.5,1.5]
// and denormalized; the returned pose is its query-index point.
inline SampleResult sample_pose(const Trajectory& gps, const Grid& cond_values,
                                const NormBox& box, ParamStore& ps,
                                const NoiseSchedule& schedule, const SampleConfig& cfg = {},
                                const DenoiserConfig& den_cfg = {}) {
    gps.validate();
    require(static_cast<int>(gps.size()) == den_cfg.traj_len,
            "sample_pose: trajectory length mismatch");
    std::vector<int> ladder = cfg.ladder;
    if (cfg.ancestral) {
        ladder.clear();
        for (int t = schedule.steps; t >= 1; --t) ladder.push_back(t);
    }
    require(!ladder.empty(), "sample_pose: empty ladder");
    for (size_t i = 1; i < ladder.size(); ++i)
        require(ladder[i] < ladder[i - 1], "sample_pose: ladder must be strictly descending");

    NormalizedTrajectory nt = normalize_trajectory(gps, box);
    Grid x0 = norm_to_grid(nt);
    x0.shape = {den_cfg.traj_dim()};  // flatten

    Rng rng(cfg.seed);
    const int n = den_cfg.n_anchor;
    AnchorBatch batch;
    batch.anchors = Grid({n, den_cfg.traj_dim()});
    batch.t = ladder[0];
    for (int k = 0; k < n; ++k)
        detail::noise_row(&batch.anchors, k, x0, schedule, ladder[0], rng);

    Grid final_refined;
    std::vector<float> final_scores;
    for (size_t step = 0; step < ladder.size(); ++step) {
        batch.t = ladder[step];
        Tape<float> tp;
        auto cond = tp.leaf(cond_values);
        auto out = denoise_batch(tp, batch, cond, ps, den_cfg);
        const Grid& refined = tp.value(out.refined);
        const Grid& scores = tp.value(out.scores);
        if (!refined.all_finite() || !scores.all_finite()) {
            std::ostringstream os;
            os << "sample_pose: non-finite denoiser output at t=" << batch.t << "; scores=[";
            for (float s : scores.data) os << s << " ";
            os << "]";
            throw numeric_error(os.str());
        }
        if (step + 1 < ladder.size()) {
            Grid row({den_cfg.traj_dim()});
            for (int k = 0; k < n; ++k) {
                for (int j = 0; j < den_cfg.traj_dim(); ++j) row.data[j] = refined.at(k, j);
                detail::noise_row(&batch.anchors, k, row, schedule, ladder[step + 1], rng);
            }
        } else {
            final_refined = refined;
            final_scores = scores.data;
        }
    }

    SampleResult res;
    res.final_scores = final_scores;
    res.best_anchor = 0;
    for (int k = 1; k < n; ++k)
        if (final_scores[k] > final_scores[res.best_anchor]) res.best_anchor = k;

    Grid best({den_cfg.traj_dim()});
    for (int j = 0; j < den_cfg.traj_dim(); ++j)
        best.data[j] = std::clamp(final_refined.at(res.best_anchor, j), -1.5f, 1.5f);
    std::vector<int> t_indices;
    for (const auto& tp_ : gps.points) t_indices.push_back(tp_.t);
    res.traj = denormalize_trajectory(grid_to_norm(best, t_indices), box);
    res.pose = res.traj.points.back().pose;
    return res;
}

}  // namespace trajden
