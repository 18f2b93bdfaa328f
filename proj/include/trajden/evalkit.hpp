#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajden/dataset.hpp"
#include "trajden/diffusion.hpp"
#include "trajden/encoders.hpp"
#include "trajden/matcher.hpp"
#include "trajden/trainer.hpp"

namespace trajden {

constexpr double kLateralThresholds[] = {1.0, 3.0, 5.0};
constexpr double kLongitudinalThresholds[] = {1.0, 3.0, 5.0};
constexpr double kOrientationThresholdsDeg[] = {1.0, 3.0, 5.0};
constexpr double kPositionThresholds[] = {1.0, 2.0, 5.0, 10.0};

struct ErrorRow {
    std::string id;
    double lateral = 0, longitudinal = 0, angular_deg = 0, position = 0;
};

struct MetricsReport {
    std::string method;
    std::string dataset_id;
    int n = 0;
    std::vector<double> lateral_recall;       // @1,3,5 m
    std::vector<double> longitudinal_recall;  // @1,3,5 m
    std::vector<double> orientation_recall;   // @1,3,5 deg
    std::vector<double> position_recall;      // @1,2,5,10 m
    std::vector<ErrorRow> rows;
};

inline MetricsReport compute_metrics(const std::vector<std::pair<Pose, Pose>>& pairs,
                                     const std::string& method = "",
                                     const std::string& dataset_id = "",
                                     const std::vector<std::string>& ids = {}) {
    require(!pairs.empty(), "compute_metrics: no pose pairs");
    MetricsReport rep;
    rep.method = method;
    rep.dataset_id = dataset_id;
    rep.n = static_cast<int>(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        const auto& [est, gt] = pairs[i];
        RelativeErrors e = relative_errors(est, gt);
        ErrorRow row;
        row.id = i < ids.size() ? ids[i] : std::to_string(i);
        row.lateral = e.lateral;
        row.longitudinal = e.longitudinal;
        row.angular_deg = e.angular * 180.0 / kPi;
        row.position = position_error(est, gt);
        rep.rows.push_back(row);
    }
    auto recall = [&](auto getter, double tau) {
        int hits = 0;
        for (const auto& r : rep.rows)
            if (getter(r) <= tau) ++hits;
        return static_cast<double>(hits) / rep.n;
    };
    for (double t : kLateralThresholds)
        rep.lateral_recall.push_back(recall([](const ErrorRow& r) { return r.lateral; }, t));
    for (double t : kLongitudinalThresholds)
        rep.longitudinal_recall.push_back(
            recall([](const ErrorRow& r) { return r.longitudinal; }, t));
    for (double t : kOrientationThresholdsDeg)
        rep.orientation_recall.push_back(
            recall([](const ErrorRow& r) { return r.angular_deg; }, t));
    for (double t : kPositionThresholds)
        rep.position_recall.push_back(recall([](const ErrorRow& r) { return r.position; }, t));
    return rep;
}

// Per-scenario pose estimation on the held-out split.
//   full          -- encoders + matcher condition + truncated diffusion sampling
//   no_refinement -- matcher argmax only (the ablation baseline)
//   raw_gps       -- the GPS point at the query index; needs no checkpoint
inline MetricsReport run_eval(const Dataset& dataset, const std::string& ckpt_path,
                              const std::string& mode, uint64_t seed = 0, int workers = 0,
                              const std::string& dataset_id = "") {
    require(mode == "full" || mode == "no_refinement" || mode == "raw_gps",
            "run_eval: mode must be full, no_refinement or raw_gps");
    require(!dataset.eval.empty(), "run_eval: dataset has no eval scenarios");

    ParamStore ps(0);
    DenoiserConfig den_cfg;
    NoiseSchedule schedule = build_schedule();
    if (mode != "raw_gps") {
        require(!ckpt_path.empty(), "run_eval: mode " + mode + " needs a checkpoint");
        register_all_params(ps, den_cfg);
        load_checkpoint(ckpt_path, ps);
    }

    const int n = static_cast<int>(dataset.eval.size());
    std::vector<std::pair<Pose, Pose>> pairs(static_cast<size_t>(n));
    std::vector<std::string> ids(static_cast<size_t>(n));

    parallel_for(n, resolve_workers(workers), [&](int i) {
        const Scenario& scn = dataset.eval[static_cast<size_t>(i)];
        ids[static_cast<size_t>(i)] = scn.id;
        const Pose gt = scn.query_gt();
        Pose estimate;
        if (mode == "raw_gps") {
            estimate = scn.query_gps();
        } else {
            Tape<float> tp;
            // ParamStore registration is complete and read-only here, so
            // concurrent binds are safe.
            auto fb = encode_bev(tp, tp.leaf(polar_to_cartesian(scn.obs)), ps);
            auto fm = encode_map(tp, tp.leaf(scn.tile.grid), ps);
            ScoreVolume sv =
                score_volume(tp, fb, fm, scn.tile.origin_x, scn.tile.origin_y);
            if (mode == "no_refinement") {
                estimate = belief_from_scores(tp.value(sv.logits), sv.geom).argmax;
            } else {
                auto cond = fuse_condition(tp, fb, fm, sv, ps);
                SampleConfig scfg;
                scfg.seed = mix_seed(seed, 0x5A3ULL, static_cast<uint64_t>(i));
                SampleResult res = sample_pose(scn.gps, tp.value(cond), scn.tile.norm_box(), ps,
                                               schedule, scfg, den_cfg);
                estimate = res.pose;
            }
        }
        pairs[static_cast<size_t>(i)] = {estimate, gt};
    });

    return compute_metrics(pairs, mode, dataset_id, ids);
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
    nlohmann::json j;
    j["method"] = rep.method;
    j["dataset"] = rep.dataset_id;
    j["n"] = rep.n;
    auto put = [](const std::vector<double>& v, const double* taus) {
        nlohmann::json o;
        for (size_t i = 0; i < v.size(); ++i) {
            char key[16];
            std::snprintf(key, sizeof(key), "%g", taus[i]);
            o[key] = v[i];
        }
        return o;
    };
    j["lateral_recall_m"] = put(rep.lateral_recall, kLateralThresholds);
    j["longitudinal_recall_m"] = put(rep.longitudinal_recall, kLongitudinalThresholds);
    j["orientation_recall_deg"] = put(rep.orientation_recall, kOrientationThresholdsDeg);
    j["position_recall_m"] = put(rep.position_recall, kPositionThresholds);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
        rows.push_back({{"id", r.id},
                        {"lateral", r.lateral},
                        {"longitudinal", r.longitudinal},
                        {"angular_deg", r.angular_deg},
                        {"position", r.position}});
    j["rows"] = rows;
    return j;
}

inline void write_report_json(const std::string& path, const std::vector<MetricsReport>& reps) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reps) j.push_back(report_to_json(r));
    std::ofstream os(path);
    if (!os) throw io_error("cannot write report: " + path);
    os << j.dump(2) << "\n";
    if (!os) throw io_error("report write failed: " + path);
}

inline void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reps) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot write report: " + path);
    os << "method,dataset,n,lat@1,lat@3,lat@5,lon@1,lon@3,lon@5,ori@1,ori@3,ori@5,"
          "pos@1,pos@2,pos@5,pos@10\n";
    char buf[512];
    for (const auto& r : reps) {
        std::snprintf(buf, sizeof(buf),
                      "%s,%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,"
                      "%.6f\n",
                      r.method.c_str(), r.dataset_id.c_str(), r.n, r.lateral_recall[0],
                      r.lateral_recall[1], r.lateral_recall[2], r.longitudinal_recall[0],
                      r.longitudinal_recall[1], r.longitudinal_recall[2],
                      r.orientation_recall[0], r.orientation_recall[1], r.orientation_recall[2],
                      r.position_recall[0], r.position_recall[1], r.position_recall[2],
                      r.position_recall[3]);
        os << buf;
    }
    if (!os) throw io_error("report write failed: " + path);
}

}  // namespace trajden
