#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajden/io.hpp"
#include "trajden/worldgen.hpp"

namespace trajden {

struct Scenario {
    std::string id;
    uint64_t seed = 0;
    MapTile tile;
    Trajectory gt;
    Trajectory gps;
    PolarObservation obs;  // rendered at the ground-truth query pose

    int query_index() const { return static_cast<int>(gt.size()) - 1; }
    Pose query_gt() const { return gt.points.back().pose; }
    Pose query_gps() const { return gps.points.back().pose; }
};

struct DatasetParams {
    int n_train = 0;
    int n_eval = 0;
    GpsNoiseSpec noise;
    double obs_noise = 0.1;
    uint64_t seed = 0;
};

struct Dataset {
    DatasetParams params;
    std::vector<Scenario> train;
    std::vector<Scenario> eval;
};

inline Scenario generate_scenario(uint64_t scenario_seed, const GpsNoiseSpec& noise,
                                  double obs_noise) {
    Rng rng(scenario_seed);
    for (int tile_try = 0; tile_try < 8; ++tile_try) {
        const uint64_t tile_seed = rng.fork(100 + static_cast<uint64_t>(tile_try)).next_u64();
        Scenario scn;
        scn.seed = scenario_seed;
        scn.tile = generate_tile(tile_seed);
        try {
            scn.gt = generate_gt_trajectory(scn.tile, rng.fork(200).next_u64());
        } catch (const numeric_error&) {
            continue;  // unlucky tile, regenerate
        }
        GpsNoiseSpec spec = noise;
        spec.seed = rng.fork(300).next_u64();
        scn.gps = corrupt_gps(scn.gt, spec);
        scn.obs = render_polar_observation(scn.tile, scn.gt.points.back().pose, obs_noise,
                                           rng.fork(400).next_u64());
        return scn;
    }
    throw numeric_error("generate_scenario: could not produce a drivable tile");
}

namespace detail {

inline std::string scenario_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scn_%06d", index);
    return buf;
}

inline void save_scenario(const std::filesystem::path& dir, const Scenario& scn) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create directory: " + dir.string());
    write_grid_file((dir / "tile.bin").string(), scn.tile.grid);
    write_grid_file((dir / "obs.bin").string(), scn.obs.grid);
    write_trajectory_csv((dir / "gt.csv").string(), scn.gt);
    write_trajectory_csv((dir / "gps.csv").string(), scn.gps);
}

}  // namespace detail

inline Scenario load_scenario(const std::string& dir, const std::string& id = "",
                              uint64_t seed = 0) {
    namespace fs = std::filesystem;
    Scenario scn;
    scn.id = id.empty() ? fs::path(dir).filename().string() : id;
    scn.seed = seed;
    Grid tile_grid = read_grid_file((fs::path(dir) / "tile.bin").string());
    if (tile_grid.shape != std::vector<int>{3, MapTile::kSize, MapTile::kSize})
        throw io_error("unexpected tile shape in " + dir + ": " + tile_grid.shape_str());
    scn.tile.grid = std::move(tile_grid);
    Grid obs_grid = read_grid_file((fs::path(dir) / "obs.bin").string());
    if (obs_grid.shape != std::vector<int>{3, PolarObservation::kRangeBins,
                                           PolarObservation::kAzimuthBins})
        throw io_error("unexpected obs shape in " + dir + ": " + obs_grid.shape_str());
    scn.obs.grid = std::move(obs_grid);
    scn.gt = read_trajectory_csv((fs::path(dir) / "gt.csv").string());
    scn.gps = read_trajectory_csv((fs::path(dir) / "gps.csv").string());
    if (scn.gt.size() != scn.gps.size())
        throw io_error("gt/gps length mismatch in " + dir);
    scn.obs.has_pose = true;
    scn.obs.sensor_pose = scn.gt.points.back().pose;
    return scn;
}

// Writes manifest.json plus one directory per scenario. Scenario seeds come
// from a splittable counter on the root seed, so any prefix of the dataset is
// stable under changes to the total count.
inline void generate_dataset(const std::string& out_dir, const DatasetParams& params) {
    namespace fs = std::filesystem;
    require(params.n_train >= 1, "generate_dataset: need at least one scenario");
    require(params.n_eval >= 0, "generate_dataset: negative eval count");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create directory: " + out_dir);

    Rng root(params.seed);
    nlohmann::json manifest;
    manifest["format"] = "trajden-dataset-v1";
    manifest["root_seed"] = params.seed;
    manifest["trajectory_len"] = kTrajectoryLen;
    manifest["noise"] = {{"sigma_white", params.noise.sigma_white},
                         {"sigma_walk", params.noise.sigma_walk},
                         {"dropout_prob", params.noise.dropout_prob}};
    manifest["obs_noise"] = params.obs_noise;
    nlohmann::json list = nlohmann::json::array();
    const int total = params.n_train + params.n_eval;
    for (int i = 0; i < total; ++i) {
        const uint64_t seed = root.fork(static_cast<uint64_t>(i)).next_u64();
        Scenario scn = generate_scenario(seed, params.noise, params.obs_noise);
        scn.id = detail::scenario_dir_name(i);
        detail::save_scenario(fs::path(out_dir) / scn.id, scn);
        list.push_back({{"id", scn.id},
                        {"seed", seed},
                        {"split", i < params.n_train ? "train" : "eval"}});
    }
    manifest["scenarios"] = list;
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    if (!os) throw io_error("cannot write manifest in " + out_dir);
    os << manifest.dump(2) << "\n";
    if (!os) throw io_error("manifest write failed in " + out_dir);
}

// Loads every scenario listed in the manifest. Datasets without an eval split
// expose all scenarios in `train` and mirror them into `eval`.
inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw io_error("cannot open manifest: " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("bad manifest in " + dir + ": " + e.what());
    }
    Dataset ds;
    ds.params.seed = manifest.value("root_seed", 0ULL);
    ds.params.obs_noise = manifest.value("obs_noise", 0.0);
    if (manifest.contains("noise")) {
        ds.params.noise.sigma_white = manifest["noise"].value("sigma_white", 0.0);
        ds.params.noise.sigma_walk = manifest["noise"].value("sigma_walk", 0.0);
        ds.params.noise.dropout_prob = manifest["noise"].value("dropout_prob", 0.0);
    }
    bool has_eval = false;
    for (const auto& entry : manifest["scenarios"]) {
        const std::string id = entry.at("id").get<std::string>();
        const uint64_t seed = entry.value("seed", 0ULL);
        const std::string split = entry.value("split", "train");
        Scenario scn = load_scenario((fs::path(dir) / id).string(), id, seed);
        if (split == "eval") {
            ds.eval.push_back(std::move(scn));
            has_eval = true;
        } else {
            ds.train.push_back(std::move(scn));
        }
    }
    ds.params.n_train = static_cast<int>(ds.train.size());
    ds.params.n_eval = static_cast<int>(ds.eval.size());
    if (!has_eval) ds.eval = ds.train;
    require(!ds.train.empty(), "dataset has no training scenarios: " + dir);
    return ds;
}

}  // namespace trajden
