#include <catch_amalgamated.hpp>

#include "trajden/geometry.hpp"
#include "trajden/rng.hpp"

using namespace trajden;

namespace {

Trajectory random_trajectory(Rng& rng, const NormBox& box, bool inside_only) {
    Trajectory traj;
    const int T = 16;
    const double r = inside_only ? 0.95 : 1.8;
    for (int k = 0; k < T; ++k) {
        traj.points.push_back({k, Pose(box.cx + box.half_extent * rng.uniform(-r, r),
                                       box.cy + box.half_extent * rng.uniform(-r, r),
                                       rng.uniform(-kPi, kPi))});
    }
    return traj;
}

}  // namespace

TEST_CASE("wrap_angle basics") {
    CHECK(wrap_angle(0.0) == 0.0);
    CHECK(wrap_angle(3 * kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(-kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(kPi) == Catch::Approx(kPi));
    CHECK(wrap_angle(2 * kPi) == Catch::Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(wrap_angle(std::numeric_limits<double>::infinity()), numeric_error);
    CHECK_THROWS_AS(wrap_angle(std::nan("")), numeric_error);
}

TEST_CASE("wrap_angle is idempotent and stays in (-pi, pi]") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const double a = rng.uniform(-50.0, 50.0);
        const double w = wrap_angle(a);
        CHECK(w > -kPi);
        CHECK(w <= kPi);
        CHECK(wrap_angle(w) == w);
        // congruent mod 2pi
        CHECK(std::abs(std::remainder(w - a, 2 * kPi)) < 1e-9);
    }
}

TEST_CASE("normalize_trajectory maps center and boundary") {
    NormBox box(10.0, -4.0, 64.0);
    Trajectory traj;
    traj.points.push_back({0, Pose(10.0, -4.0, 0.7)});
    traj.points.push_back({1, Pose(10.0 + 64.0, -4.0, 0.0)});
    auto n = normalize_trajectory(traj, box);
    CHECK(n.ch[0][0] == Catch::Approx(0.0).margin(1e-15));
    CHECK(n.ch[0][1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(n.ch[0][2] == Catch::Approx(std::cos(0.7)));
    CHECK(n.ch[0][3] == Catch::Approx(std::sin(0.7)));
    CHECK(n.ch[1][0] == Catch::Approx(1.0));
    CHECK(n.ch[1][1] == Catch::Approx(0.0).margin(1e-15));
    CHECK(n.ch[1][2] == Catch::Approx(1.0));
    CHECK(n.ch[1][3] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("normalize soft-clamps far points at 1.5") {
    NormBox box(0.0, 0.0, 10.0);
    Trajectory traj;
    traj.points.push_back({0, Pose(100.0, -100.0, 0.0)});
    traj.points.push_back({1, Pose(5.0, 5.0, 0.0)});
    auto n = normalize_trajectory(traj, box);
    CHECK(n.ch[0][0] == 1.5);
    CHECK(n.ch[0][1] == -1.5);
}

TEST_CASE("denormalize basics") {
    NormBox box(3.0, 7.0, 20.0);
    NormalizedTrajectory n;
    n.t = {0, 1};
    n.ch = {{0.0, 0.0, 1.0, 0.0}, {1.0, 1.0, 0.0, 1.0}};
    auto traj = denormalize_trajectory(n, box);
    CHECK(traj.points[0].pose.x == Catch::Approx(3.0));
    CHECK(traj.points[0].pose.y == Catch::Approx(7.0));
    CHECK(traj.points[0].pose.theta == Catch::Approx(0.0).margin(1e-15));
    CHECK(traj.points[1].pose.x == Catch::Approx(23.0));
    CHECK(traj.points[1].pose.y == Catch::Approx(27.0));
    CHECK(traj.points[1].pose.theta == Catch::Approx(kPi / 2));
}

TEST_CASE("denormalize flags degenerate headings and carries the previous one") {
    NormBox box(0.0, 0.0, 1.0);
    NormalizedTrajectory n;
    n.t = {0, 1, 2};
    n.ch = {{0.0, 0.0, std::cos(0.4), std::sin(0.4)}, {0.1, 0.1, 0.0, 0.0}, {0.2, 0.2, 0.0, 1.0}};
    std::vector<bool> flags;
    auto traj = denormalize_trajectory(n, box, &flags);
    CHECK_FALSE(flags[0]);
    CHECK(flags[1]);
    CHECK_FALSE(flags[2]);
    CHECK(traj.points[1].pose.theta == Catch::Approx(0.4));
}

TEST_CASE("normalization round-trip is exact to 1e-9 m") {
    // 100 seeded trajectories inside the box
    Rng rng(42);
    NormBox box(64.0, 64.0, 64.0);
    for (int trial = 0; trial < 100; ++trial) {
        Trajectory traj = random_trajectory(rng, box, true);
        auto n = normalize_trajectory(traj, box);
        auto back = denormalize_trajectory(n, box);
        REQUIRE(back.size() == traj.size());
        for (size_t i = 0; i < traj.size(); ++i) {
            CHECK(std::abs(back.points[i].pose.x - traj.points[i].pose.x) < 1e-9);
            CHECK(std::abs(back.points[i].pose.y - traj.points[i].pose.y) < 1e-9);
            CHECK(std::abs(wrap_angle(back.points[i].pose.theta - traj.points[i].pose.theta)) <
                  1e-9);
        }
    }
}

TEST_CASE("normalize(denormalize) identity on channels inside the box") {
    Rng rng(7);
    NormBox box(-12.0, 30.0, 40.0);
    for (int trial = 0; trial < 50; ++trial) {
        NormalizedTrajectory n;
        for (int k = 0; k < 8; ++k) {
            const double th = rng.uniform(-kPi, kPi);
            n.t.push_back(k);
            n.ch.push_back({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), std::cos(th),
                            std::sin(th)});
        }
        auto traj = denormalize_trajectory(n, box);
        auto n2 = normalize_trajectory(traj, box);
        for (size_t i = 0; i < n.size(); ++i)
            for (int c = 0; c < 4; ++c) CHECK(std::abs(n2.ch[i][c] - n.ch[i][c]) < 1e-9);
    }
}

TEST_CASE("degenerate norm box rejected") {
    Trajectory traj;
    traj.points.push_back({0, Pose(0, 0, 0)});
    traj.points.push_back({1, Pose(1, 1, 0)});
    NormBox box;
    box.half_extent = 0.0;
    CHECK_THROWS_AS(normalize_trajectory(traj, box), numeric_error);
}

TEST_CASE("relative_errors axis-aligned cases") {
    auto z = relative_errors(Pose(3, 4, 0.5), Pose(3, 4, 0.5));
    CHECK(z.lateral == 0.0);
    CHECK(z.longitudinal == 0.0);
    CHECK(z.angular == 0.0);

    auto a = relative_errors(Pose(0, 2, 0), Pose(0, 0, 0));
    CHECK(a.lateral == Catch::Approx(2.0));
    CHECK(a.longitudinal == Catch::Approx(0.0).margin(1e-12));

    // gt facing north, estimate 3 m east: pure lateral error
    auto b = relative_errors(Pose(3, 0, kPi / 2), Pose(0, 0, kPi / 2));
    CHECK(b.lateral == Catch::Approx(3.0));
    CHECK(b.longitudinal == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("relative_errors invariant under joint rigid transform") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        Pose est(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-kPi, kPi));
        Pose gt(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-kPi, kPi));
        const double tx = rng.uniform(-100, 100), ty = rng.uniform(-100, 100);
        const double phi = rng.uniform(-kPi, kPi);
        auto e0 = relative_errors(est, gt);
        auto e1 = relative_errors(transform_pose(est, tx, ty, phi),
                                  transform_pose(gt, tx, ty, phi));
        CHECK(std::abs(e0.lateral - e1.lateral) < 1e-9);
        CHECK(std::abs(e0.longitudinal - e1.longitudinal) < 1e-9);
        CHECK(std::abs(e0.angular - e1.angular) < 1e-9);
    }
}

TEST_CASE("trajectory validation") {
    Trajectory bad;
    bad.points.push_back({0, Pose()});
    CHECK_THROWS(bad.validate());
    bad.points.push_back({0, Pose()});
    CHECK_THROWS(bad.validate());
    bad.points[1].t = 1;
    CHECK_NOTHROW(bad.validate());
}
