#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trajden/dataset.hpp"
#include "trajden/diffusion.hpp"
#include "trajden/encoders.hpp"
#include "trajden/matcher.hpp"
#include "trajden/optim.hpp"

namespace trajden {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-2;
    double alpha = 1.0;   // localization loss weight in L_total
    double lambda = 1.0;  // score BCE weight inside L_diff
    int batch = 8;
    int epochs = 30;
    uint64_t seed = 0;
    double perturb_rot_deg = 30.0;  // tile-centering rotation range
    double perturb_trans = 30.0;    // tile-centering translation range, meters
    std::string ablation_mode = "full";  // full | no_refinement | no_loc
    int workers = 0;                     // 0 = all hardware threads

    void validate() const {
        require(lr > 0, "config: lr must be positive");
        require(alpha >= 0 && lambda >= 0, "config: alpha and lambda must be >= 0");
        require(batch >= 1 && epochs >= 1, "config: batch and epochs must be >= 1");
        require(perturb_rot_deg >= 0 && perturb_trans >= 0,
                "config: perturbation ranges must be >= 0");
        require(ablation_mode == "full" || ablation_mode == "no_refinement" ||
                    ablation_mode == "no_loc",
                "config: ablation_mode must be full, no_refinement or no_loc");
    }
};

inline TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    auto num = [&](const char* key, double dflt) {
        auto it = kv.find(key);
        if (it == kv.end()) return dflt;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw config_error(std::string("config: bad numeric value for ") + key + ": " +
                               it->second);
        }
    };
    cfg.lr = num("lr", cfg.lr);
    cfg.weight_decay = num("weight_decay", cfg.weight_decay);
    cfg.alpha = num("alpha", cfg.alpha);
    cfg.lambda = num("lambda", cfg.lambda);
    cfg.batch = static_cast<int>(num("batch", cfg.batch));
    cfg.epochs = static_cast<int>(num("epochs", cfg.epochs));
    cfg.seed = static_cast<uint64_t>(num("seed", 0));
    cfg.perturb_rot_deg = num("perturb_rot", cfg.perturb_rot_deg);
    cfg.perturb_trans = num("perturb_trans", cfg.perturb_trans);
    if (kv.count("ablation_mode")) cfg.ablation_mode = kv.at("ablation_mode");
    cfg.workers = static_cast<int>(num("workers", 0));
    for (const auto& [k, v] : kv) {
        static const std::set<std::string> known = {
            "lr",     "weight_decay", "alpha",       "lambda",        "batch",  "epochs",
            "seed",   "perturb_rot",  "perturb_trans", "ablation_mode", "workers"};
        if (!known.count(k)) throw config_error("config: unknown key " + k);
    }
    cfg.validate();
    return cfg;
}

inline std::vector<std::pair<std::string, std::string>> config_to_kv(const TrainConfig& cfg) {
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };
    return {{"lr", fmt(cfg.lr)},
            {"weight_decay", fmt(cfg.weight_decay)},
            {"alpha", fmt(cfg.alpha)},
            {"lambda", fmt(cfg.lambda)},
            {"batch", std::to_string(cfg.batch)},
            {"epochs", std::to_string(cfg.epochs)},
            {"seed", std::to_string(cfg.seed)},
            {"perturb_rot", fmt(cfg.perturb_rot_deg)},
            {"perturb_trans", fmt(cfg.perturb_trans)},
            {"ablation_mode", cfg.ablation_mode},
            {"workers", std::to_string(cfg.workers)}};
}

// Uniform pose jitter used to center the training map view, simulating noisy
// map retrieval around the true pose.
inline Pose perturb_pose(const Pose& gt, const TrainConfig& cfg, Rng& rng) {
    const double rot = cfg.perturb_rot_deg * kPi / 180.0;
    const double dth = rot > 0 ? rng.uniform(-rot, rot) : 0.0;
    const double dx = cfg.perturb_trans > 0 ? rng.uniform(-cfg.perturb_trans, cfg.perturb_trans)
                                            : 0.0;
    const double dy = cfg.perturb_trans > 0 ? rng.uniform(-cfg.perturb_trans, cfg.perturb_trans)
                                            : 0.0;
    return Pose(gt.x + dx, gt.y + dy, gt.theta + dth);
}

// Registers every trainable parameter by running the builders once on a dummy
// tape, so checkpoints carry a complete, mode-independent schema.
inline void register_all_params(ParamStore& ps, const DenoiserConfig& den_cfg = {}) {
    Tape<float> tp;
    Grid bev({3, kBevSize, kBevSize}, 0.0f);
    Grid map({3, MapTile::kSize, MapTile::kSize}, 0.0f);
    auto fb = encode_bev(tp, tp.leaf(bev), ps);
    auto fm = encode_map(tp, tp.leaf(map), ps);
    ScoreVolume sv = score_volume(tp, fb, fm);
    auto cond = fuse_condition(tp, fb, fm, sv, ps);
    AnchorBatch batch;
    batch.anchors = Grid({den_cfg.n_anchor, den_cfg.traj_dim()});
    batch.t = 1;
    denoise_batch(tp, batch, cond, ps, den_cfg);
}

struct LossComponents {
    double total = 0.0;
    double diff = 0.0;
    double loc = 0.0;
};

// Builds the training graph for one scenario in a perturbed map view, runs
// the backward pass, and leaves gradients in `ps`. The caller owns gradient
// reduction; `ps` is typically a private clone per scenario.
inline LossComponents scenario_loss_and_grad(const Scenario& scn, ParamStore& ps,
                                             const TrainConfig& cfg,
                                             const NoiseSchedule& schedule, uint64_t rng_seed,
                                             const DenoiserConfig& den_cfg = {}) {
    Rng rng(rng_seed);
    const Pose gt_q = scn.query_gt();
    const Pose center = perturb_pose(gt_q, cfg, rng);
    MapTile view = resample_view(scn.tile, center);
    const Pose gt_v = world_to_view(gt_q, center);
    const NormBox box = view.norm_box();

    Tape<float> tp;
    auto fb = encode_bev(tp, tp.leaf(polar_to_cartesian(scn.obs)), ps);
    auto fm = encode_map(tp, tp.leaf(view.grid), ps);
    ScoreVolume sv = score_volume(tp, fb, fm, view.origin_x, view.origin_y);

    Var l_loc{};
    if (cfg.ablation_mode != "no_loc") l_loc = localization_loss(tp, sv, gt_v, 0.1);

    Var l_diff{};
    if (cfg.ablation_mode != "no_refinement") {
        auto cond = fuse_condition(tp, fb, fm, sv, ps);
        const Trajectory gps_v = world_to_view(scn.gps, center);
        const Trajectory gt_traj_v = world_to_view(scn.gt, center);
        Grid x0 = norm_to_grid(normalize_trajectory(gps_v, box));
        x0.shape = {den_cfg.traj_dim()};
        Grid target = norm_to_grid(normalize_trajectory(gt_traj_v, box));
        target.shape = {den_cfg.traj_dim()};

        AnchorBatch batch;
        batch.t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(schedule.steps)));
        batch.anchors = Grid({den_cfg.n_anchor, den_cfg.traj_dim()});
        for (int k = 0; k < den_cfg.n_anchor; ++k)
            detail::noise_row(&batch.anchors, k, x0, schedule, batch.t, rng);
        const int positive = assign_positive(batch.anchors, target);
        auto out = denoise_batch(tp, batch, cond, ps, den_cfg);
        l_diff = refinement_loss(tp, out, target, positive, cfg.lambda);
    }

    Var total{};
    if (!l_diff.valid())
        total = l_loc;
    else if (!l_loc.valid())
        total = l_diff;
    else
        total = add(tp, l_diff, scale(tp, l_loc, cfg.alpha));

    LossComponents comps;
    comps.diff = l_diff.valid() ? tp.value(l_diff).data[0] : 0.0;
    comps.loc = l_loc.valid() ? tp.value(l_loc).data[0] : 0.0;
    comps.total = tp.value(total).data[0];
    tp.backward(total);
    return comps;
}

namespace detail {

inline ParamStore clone_params(const ParamStore& ps) {
    ParamStore out(ps.seed());
    for (const auto& e : ps.entries()) {
        Grid& g = out.ensure(e.name, e.grid->shape, 0);
        g.data = e.grid->data;
        g.zero_grad();
    }
    return out;
}

}  // namespace detail

struct EpochRow {
    int epoch = 0;
    double total = 0, diff = 0, loc = 0, grad_norm = 0;
};

struct TrainResult {
    std::vector<EpochRow> log;
    int start_epoch = 0;
};

// Seeded, resumable training loop. Gradients from the scenarios of a batch
// are reduced in scenario order regardless of worker count, so logs are
// bit-identical for any --workers setting. Checkpoints (with optimizer state)
// are written every epoch; a non-finite loss aborts with the last good
// checkpoint intact on disk.
inline TrainResult train(const Dataset& dataset, const TrainConfig& cfg,
                         const std::string& ckpt_path, const std::string& log_path,
                         bool resume = false, const DenoiserConfig& den_cfg = {}) {
    cfg.validate();
    require(static_cast<int>(dataset.train.size()) >= cfg.batch,
            "train: dataset smaller than one batch");
    ParamStore ps(cfg.seed);
    register_all_params(ps, den_cfg);
    AdamW opt;
    AdamW::Config ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    NoiseSchedule schedule = build_schedule();

    TrainResult result;
    int start_epoch = 0;
    if (resume) {
        CheckpointState st = load_checkpoint(ckpt_path, ps, &opt);
        require(st.has_optimizer, "resume: checkpoint lacks optimizer state: " + ckpt_path);
        start_epoch = static_cast<int>(st.epoch);
    }
    result.start_epoch = start_epoch;

    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw io_error("cannot open training log: " + log_path);
    if (start_epoch == 0) log << "epoch,total,diff,loc,grad_norm\n";

    const int n = static_cast<int>(dataset.train.size());
    const int workers = resolve_workers(cfg.workers);

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0xE70C4ULL, static_cast<uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle_rng.uniform_int(static_cast<uint64_t>(i + 1)));
            std::swap(order[i], order[j]);
        }

        double ep_total = 0, ep_diff = 0, ep_loc = 0, ep_gnorm = 0;
        int n_batches = 0;
        for (int start = 0; start + cfg.batch <= n; start += cfg.batch) {
            const int bsz = cfg.batch;
            std::vector<ParamStore> grads;
            grads.reserve(static_cast<size_t>(bsz));
            for (int b = 0; b < bsz; ++b) grads.push_back(detail::clone_params(ps));
            std::vector<LossComponents> comps(static_cast<size_t>(bsz));

            parallel_for(bsz, workers, [&](int b) {
                const int idx = order[start + b];
                const uint64_t seed = mix_seed(cfg.seed, static_cast<uint64_t>(epoch) + 1,
                                               static_cast<uint64_t>(idx) + 1);
                comps[static_cast<size_t>(b)] = scenario_loss_and_grad(
                    dataset.train[static_cast<size_t>(idx)], grads[static_cast<size_t>(b)], cfg,
                    schedule, seed, den_cfg);
            });

            // ordered, scale-by-1/batch reduction into the shared store
            for (size_t pi = 0; pi < ps.entries().size(); ++pi) {
                Grid& dst = *ps.entries()[pi].grid;
                dst.ensure_grad();
                for (size_t i = 0; i < dst.grad.size(); ++i) {
                    double acc = 0.0;
                    for (int b = 0; b < bsz; ++b)
                        acc += static_cast<double>(
                            grads[static_cast<size_t>(b)].entries()[pi].grid->grad[i]);
                    dst.grad[i] = static_cast<float>(acc / bsz);
                }
            }

            double bt = 0, bd = 0, bl = 0;
            for (const auto& c : comps) {
                bt += c.total;
                bd += c.diff;
                bl += c.loc;
            }
            bt /= bsz;
            bd /= bsz;
            bl /= bsz;
            const double gnorm = ps.grad_norm();
            if (!std::isfinite(bt) || !std::isfinite(gnorm))
                throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    "; last good checkpoint retained at " + ckpt_path);
            opt.step(ps, ocfg);
            ep_total += bt;
            ep_diff += bd;
            ep_loc += bl;
            ep_gnorm += gnorm;
            ++n_batches;
        }

        EpochRow row;
        row.epoch = epoch;
        row.total = ep_total / n_batches;
        row.diff = ep_diff / n_batches;
        row.loc = ep_loc / n_batches;
        row.grad_norm = ep_gnorm / n_batches;
        result.log.push_back(row);
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%d,%.8g,%.8g,%.8g,%.8g\n", row.epoch, row.total,
                      row.diff, row.loc, row.grad_norm);
        log << buf;
        log.flush();
        save_checkpoint(ckpt_path, ps, &opt, epoch + 1);
    }
    return result;
}

}  // namespace trajden
