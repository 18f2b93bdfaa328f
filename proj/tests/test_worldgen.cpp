#include <catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "trajden/dataset.hpp"
#include "trajden/rng.hpp"
#include "trajden/worldgen.hpp"

using namespace trajden;
namespace fs = std::filesystem;

namespace {

MapTile straight_road_tile(double width = 6.0) {
    MapTile tile;
    tile.roads.push_back({0.0, 64.0, 128.0, 64.0, width});
    rasterize_road(tile, tile.roads[0]);
    return tile;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generate_tile is deterministic in the seed") {
    MapTile a = generate_tile(123);
    MapTile b = generate_tile(123);
    CHECK(a.grid.data == b.grid.data);
    REQUIRE(a.roads.size() == b.roads.size());
    MapTile c = generate_tile(124);
    CHECK(a.grid.data != c.grid.data);
}

TEST_CASE("tile invariants hold across seeds") {
    for (uint64_t seed : {1ull, 7ull, 42ull, 1000ull, 31337ull}) {
        MapTile tile = generate_tile(seed);
        CHECK(tile.roads.size() >= 4);
        CHECK(tile.roads.size() <= 10);
        int road_cells = 0;
        for (int r = 0; r < MapTile::kSize; ++r) {
            for (int c = 0; c < MapTile::kSize; ++c) {
                const float road = tile.grid.at(0, r, c);
                const float bld = tile.grid.at(1, r, c);
                const float veg = tile.grid.at(2, r, c);
                CHECK(road >= 0.0f);
                CHECK(road <= 1.0f);
                CHECK(bld >= 0.0f);
                CHECK(bld <= 1.0f);
                CHECK(veg >= 0.0f);
                CHECK(veg <= 1.0f);
                CHECK_FALSE((road > 0.5f && bld > 0.5f));
                if (road > 0.5f) ++road_cells;
            }
        }
        const double frac = road_cells / (256.0 * 256.0);
        if (seed == 7) {
            CHECK(frac > 0.05);
            CHECK(frac < 0.40);
        }
    }
}

TEST_CASE("straight single-road tile gives equal headings") {
    MapTile tile = straight_road_tile();
    Trajectory traj = generate_gt_trajectory(tile, 5);
    REQUIRE(traj.size() == 16);
    const double h0 = traj.points[0].pose.theta;
    for (const auto& tp : traj.points) CHECK(tp.pose.theta == Catch::Approx(h0).margin(1e-12));
}

TEST_CASE("trajectory spacing, curvature, headings and road coverage") {
    for (uint64_t seed = 0; seed < 12; ++seed) {
        MapTile tile = generate_tile(seed * 31 + 1);
        Trajectory traj = generate_gt_trajectory(tile, seed);
        REQUIRE(traj.size() == 16);
        int on_road = 0;
        for (size_t k = 0; k < traj.size(); ++k) {
            if (tile.on_road(traj.points[k].pose.x, traj.points[k].pose.y)) ++on_road;
            if (k == 0) continue;
            const auto& a = traj.points[k - 1].pose;
            const auto& b = traj.points[k].pose;
            const double spacing = std::hypot(b.x - a.x, b.y - a.y);
            CHECK(spacing >= 8.0);
            CHECK(spacing <= 14.0);
            CHECK(std::abs(wrap_angle(b.theta - a.theta)) <= 0.3);
            // finite-difference heading agrees with the stored one
            const double chord = std::atan2(b.y - a.y, b.x - a.x);
            CHECK(std::abs(wrap_angle(b.theta - chord)) <= 0.3);
        }
        CHECK(on_road >= 15);  // >= 90% of 16
    }
}

TEST_CASE("trajectory generation fails cleanly without roads") {
    MapTile empty;
    CHECK_THROWS_AS(generate_gt_trajectory(empty, 1), config_error);
}

TEST_CASE("corrupt_gps with a zero spec is the identity on positions") {
    MapTile tile = straight_road_tile();
    Trajectory gt = generate_gt_trajectory(tile, 2);
    GpsNoiseSpec spec;
    spec.sigma_white = 0;
    spec.sigma_walk = 0;
    spec.dropout_prob = 0;
    Trajectory gps = corrupt_gps(gt, spec);
    REQUIRE(gps.size() == gt.size());
    for (size_t i = 0; i < gt.size(); ++i) {
        CHECK(gps.points[i].pose.x == gt.points[i].pose.x);
        CHECK(gps.points[i].pose.y == gt.points[i].pose.y);
        CHECK(gps.points[i].t == gt.points[i].t);
    }
}

TEST_CASE("white-noise error magnitude matches the Rayleigh mean") {
    // sigma_white 3, sigma_walk 0: mean 2-D error = sigma * sqrt(pi/2)
    Trajectory gt;
    for (int k = 0; k < 16; ++k) gt.points.push_back({k, Pose(10.0 * k, 5.0, 0.0)});
    GpsNoiseSpec spec;
    spec.sigma_white = 3.0;
    spec.sigma_walk = 0.0;
    spec.dropout_prob = 0.0;
    double acc = 0.0;
    size_t count = 0;
    const int draws = 100000 / 16;
    for (int d = 0; d < draws; ++d) {
        spec.seed = 9000 + static_cast<uint64_t>(d);
        Trajectory gps = corrupt_gps(gt, spec);
        for (size_t i = 0; i < gt.size(); ++i) {
            acc += std::hypot(gps.points[i].pose.x - gt.points[i].pose.x,
                              gps.points[i].pose.y - gt.points[i].pose.y);
            ++count;
        }
    }
    const double mean = acc / static_cast<double>(count);
    const double expected = 3.0 * std::sqrt(kPi / 2);
    CHECK(mean > expected * 0.98);
    CHECK(mean < expected * 1.02);
}

TEST_CASE("random-walk bias variance grows linearly") {
    // sigma_walk 1, sigma_white 0: Var(b_k) = k, within 3%
    Trajectory gt;
    for (int k = 0; k < 16; ++k) gt.points.push_back({k, Pose(10.0 * k, 0.0, 0.0)});
    GpsNoiseSpec spec;
    spec.sigma_white = 0.0;
    spec.sigma_walk = 1.0;
    spec.dropout_prob = 0.0;
    const int draws = 100000;
    std::vector<double> sumsq(16, 0.0);
    for (int d = 0; d < draws; ++d) {
        spec.seed = 100000 + static_cast<uint64_t>(d);
        Trajectory gps = corrupt_gps(gt, spec);
        for (int k = 0; k < 16; ++k) {
            const double ex = gps.points[k].pose.x - gt.points[k].pose.x;
            sumsq[k] += ex * ex;
        }
    }
    CHECK(sumsq[0] == 0.0);  // b_0 = 0 exactly
    for (int k : {5, 10, 15}) {
        const double var = sumsq[k] / draws;
        CHECK(var > k * 0.97);
        CHECK(var < k * 1.03);
    }
}

TEST_CASE("dropout holds the previous sample") {
    Trajectory gt;
    for (int k = 0; k < 16; ++k) gt.points.push_back({k, Pose(10.0 * k, 0.0, 0.0)});
    GpsNoiseSpec spec;
    spec.sigma_white = 0.0;
    spec.sigma_walk = 0.0;
    spec.dropout_prob = 0.9;
    spec.seed = 4;
    Trajectory gps = corrupt_gps(gt, spec);
    int holds = 0;
    for (size_t k = 1; k < gps.size(); ++k)
        if (gps.points[k].pose.x == gps.points[k - 1].pose.x) ++holds;
    CHECK(holds >= 8);  // p=0.9 across 15 gaps
}

TEST_CASE("polar render determinism and zero-tile behavior") {
    MapTile tile = generate_tile(77);
    const Pose pose(64, 64, 0.3);
    auto a = render_polar_observation(tile, pose, 0.3, 5);
    auto b = render_polar_observation(tile, pose, 0.3, 5);
    CHECK(a.grid.data == b.grid.data);
    auto c = render_polar_observation(tile, pose, 0.3, 6);
    CHECK(a.grid.data != c.grid.data);

    MapTile zero;
    auto obs = render_polar_observation(zero, Pose(64, 64, 0), 0.0);
    for (float v : obs.grid.data) CHECK(v == 0.0f);

    CHECK_THROWS_AS(render_polar_observation(tile, Pose(500, 64, 0), 0.0), numeric_error);
}

TEST_CASE("on-road forward render concentrates road mass near azimuth bin 32") {
    MapTile tile = straight_road_tile(8.0);
    // heading east along the road at y=64
    auto obs = render_polar_observation(tile, Pose(20.0, 64.0, 0.0), 0.0);
    std::vector<double> mass(PolarObservation::kAzimuthBins, 0.0);
    double total = 0.0, centroid = 0.0;
    for (int a = 0; a < PolarObservation::kAzimuthBins; ++a) {
        for (int r = 0; r < PolarObservation::kRangeBins; ++r)
            mass[a] += obs.grid.at(0, r, a);
        total += mass[a];
        centroid += mass[a] * a;
    }
    centroid /= total;
    CHECK(centroid >= 30.0);
    CHECK(centroid <= 34.0);
    // off-axis bins carry little road mass
    CHECK(mass[4] < 0.25 * mass[31]);
    CHECK(mass[59] < 0.25 * mass[31]);
}

TEST_CASE("observation noise stays in [0,1]") {
    MapTile tile = generate_tile(3);
    auto obs = render_polar_observation(tile, Pose(64, 64, 1.0), 0.3, 11);
    for (float v : obs.grid.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("rigid view resampling round-trips poses and has an identity fast path") {
    MapTile tile = generate_tile(15);
    const Pose center(tile.center_x(), tile.center_y(), 0.0);
    MapTile view = resample_view(tile, center);
    CHECK(view.grid.data == tile.grid.data);

    const Pose offset_center(70.0, 60.0, 0.4);
    const Pose p(80.0, 50.0, -1.2);
    const Pose there = world_to_view(p, offset_center);
    const Pose back = view_to_world(there, offset_center);
    CHECK(back.x == Catch::Approx(p.x).margin(1e-9));
    CHECK(back.y == Catch::Approx(p.y).margin(1e-9));
    CHECK(back.theta == Catch::Approx(p.theta).margin(1e-12));

    // resampled raster agrees with direct lookup at matching world points
    MapTile shifted = resample_view(tile, offset_center);
    const Pose probe_view(40.0, 90.0, 0.0);
    const Pose probe_world = view_to_world(probe_view, offset_center);
    const double direct = bilinear_at(tile.grid, 0, tile.row_of(probe_world.y),
                                      tile.col_of(probe_world.x));
    const double via_view = bilinear_at(shifted.grid, 0, shifted.row_of(probe_view.y),
                                        shifted.col_of(probe_view.x));
    CHECK(via_view == Catch::Approx(direct).margin(0.15));
}

TEST_CASE("dataset write/read round-trip and determinism") {
    auto dir = fs::temp_directory_path() / "trajden_ds_a";
    auto dir2 = fs::temp_directory_path() / "trajden_ds_b";
    fs::remove_all(dir);
    fs::remove_all(dir2);
    DatasetParams params;
    params.n_train = 2;
    params.n_eval = 1;
    params.seed = 31;
    generate_dataset(dir.string(), params);
    generate_dataset(dir2.string(), params);

    // bit-identical regeneration
    for (auto rel : {"manifest.json", "scn_000000/tile.bin", "scn_000001/gps.csv",
                     "scn_000002/obs.bin"})
        CHECK(slurp(dir / rel) == slurp(dir2 / rel));

    Dataset ds = load_dataset(dir.string());
    REQUIRE(ds.train.size() == 2);
    REQUIRE(ds.eval.size() == 1);
    CHECK(ds.train[0].gt.size() == 16);
    CHECK(ds.train[0].gps.size() == 16);
    CHECK(ds.train[0].tile.grid.shape == std::vector<int>{3, 256, 256});

    // reload equals the in-memory generation
    Scenario fresh = generate_scenario(ds.train[0].seed, params.noise, params.obs_noise);
    CHECK(fresh.tile.grid.data == ds.train[0].tile.grid.data);
    CHECK(fresh.obs.grid.data == ds.train[0].obs.grid.data);
    for (size_t i = 0; i < fresh.gt.size(); ++i) {
        CHECK(std::abs(fresh.gt.points[i].pose.x - ds.train[0].gt.points[i].pose.x) < 1e-6);
        CHECK(std::abs(fresh.gps.points[i].pose.y - ds.train[0].gps.points[i].pose.y) < 1e-6);
    }
}

TEST_CASE("dataset manifest has unique per-scenario seeds") {
    auto dir = fs::temp_directory_path() / "trajden_ds_seeds";
    fs::remove_all(dir);
    DatasetParams params;
    params.n_train = 40;
    params.n_eval = 0;
    params.seed = 42;
    generate_dataset(dir.string(), params);
    std::ifstream is(dir / "manifest.json");
    nlohmann::json manifest;
    is >> manifest;
    REQUIRE(manifest["scenarios"].size() == 40);
    std::set<uint64_t> seeds;
    for (const auto& s : manifest["scenarios"]) seeds.insert(s["seed"].get<uint64_t>());
    CHECK(seeds.size() == 40);
}

TEST_CASE("dataset gps error matches the closed-form white+walk law") {
    // RMSE over all points: sqrt(2*sw^2 + swalk^2*(T-1)) with dropout off
    GpsNoiseSpec noise;
    noise.sigma_white = 3.0;
    noise.sigma_walk = 0.8;
    noise.dropout_prob = 0.0;
    double acc = 0.0;
    size_t n = 0;
    Rng root(900);
    for (int i = 0; i < 150; ++i) {
        Scenario scn = generate_scenario(root.fork(i).next_u64(), noise, 0.0);
        for (size_t k = 0; k < scn.gt.size(); ++k) {
            const double dx = scn.gps.points[k].pose.x - scn.gt.points[k].pose.x;
            const double dy = scn.gps.points[k].pose.y - scn.gt.points[k].pose.y;
            acc += dx * dx + dy * dy;
            ++n;
        }
    }
    const double rmse = std::sqrt(acc / static_cast<double>(n));
    const double expected = std::sqrt(2 * 9.0 + 0.64 * 15.0);
    CHECK(rmse > expected * 0.8);
    CHECK(rmse < expected * 1.2);
}
