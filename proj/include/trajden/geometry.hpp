#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "trajden/util.hpp"

namespace trajden {

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
    if (!std::isfinite(a)) throw numeric_error("wrap_angle: non-finite input");
    double r = std::fmod(a + kPi, 2.0 * kPi);
    if (r <= 0.0) r += 2.0 * kPi;
    return r - kPi;
}

// Planar pose in a local ENU frame: meters east, meters north, heading about
// the vertical axis. Heading is kept wrapped in (-pi, pi].
struct Pose {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Pose() = default;
    Pose(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}
};

struct TimedPose {
    int t = 0;
    Pose pose;
};

struct Trajectory {
    std::vector<TimedPose> points;

    size_t size() const { return points.size(); }
    const Pose& pose(size_t i) const { return points[i].pose; }

    void validate() const {
        require(points.size() >= 2, "trajectory needs at least 2 points");
        for (size_t i = 1; i < points.size(); ++i)
            require(points[i].t > points[i - 1].t,
                    "trajectory timestep indices must be strictly increasing");
    }
};

// Axis-aligned square normalization window; [-1,1] spans 2*half_extent.
struct NormBox {
    double cx = 0.0;
    double cy = 0.0;
    double half_extent = 1.0;

    NormBox() = default;
    NormBox(double cx_, double cy_, double half) : cx(cx_), cy(cy_), half_extent(half) {
        if (!(half > 0.0)) throw numeric_error("NormBox: half_extent must be > 0");
    }
};

// Four channels per point: normalized x, normalized y, cos(theta), sin(theta).
// Positions are soft-clamped to [-1.5, 1.5] so out-of-window inputs stay legal.
struct NormalizedTrajectory {
    std::vector<int> t;
    std::vector<std::array<double, 4>> ch;

    size_t size() const { return t.size(); }
};

namespace detail {
inline double clamp15(double v) { return v < -1.5 ? -1.5 : (v > 1.5 ? 1.5 : v); }
}  // namespace detail

inline NormalizedTrajectory normalize_trajectory(const Trajectory& traj, const NormBox& box) {
    if (!(box.half_extent > 0.0)) throw numeric_error("normalize_trajectory: degenerate box");
    traj.validate();
    NormalizedTrajectory out;
    out.t.reserve(traj.size());
    out.ch.reserve(traj.size());
    for (const auto& tp : traj.points) {
        double nx = detail::clamp15((tp.pose.x - box.cx) / box.half_extent);
        double ny = detail::clamp15((tp.pose.y - box.cy) / box.half_extent);
        out.t.push_back(tp.t);
        out.ch.push_back({nx, ny, std::cos(tp.pose.theta), std::sin(tp.pose.theta)});
    }
    return out;
}

// Inverse of normalize_trajectory inside the window. A heading vector whose
// magnitude falls under 1e-6 is flagged and the previous heading carried
// (theta 0 when it is the first point).
inline Trajectory denormalize_trajectory(const NormalizedTrajectory& ntraj, const NormBox& box,
                                         std::vector<bool>* degenerate = nullptr) {
    if (!(box.half_extent > 0.0)) throw numeric_error("denormalize_trajectory: degenerate box");
    Trajectory out;
    out.points.reserve(ntraj.size());
    if (degenerate) degenerate->assign(ntraj.size(), false);
    double prev_theta = 0.0;
    for (size_t i = 0; i < ntraj.size(); ++i) {
        const auto& c = ntraj.ch[i];
        double x = box.cx + box.half_extent * c[0];
        double y = box.cy + box.half_extent * c[1];
        double theta;
        if (std::hypot(c[2], c[3]) < 1e-6) {
            if (degenerate) (*degenerate)[i] = true;
            theta = prev_theta;
        } else {
            theta = wrap_angle(std::atan2(c[3], c[2]));
        }
        prev_theta = theta;
        out.points.push_back({ntraj.t[i], Pose(x, y, theta)});
    }
    return out;
}

struct RelativeErrors {
    double lateral = 0.0;       // |perpendicular to gt heading|, meters
    double longitudinal = 0.0;  // |along gt heading|, meters
    double angular = 0.0;       // |wrapped heading difference|, radians
};

inline RelativeErrors relative_errors(const Pose& estimate, const Pose& gt) {
    double dx = estimate.x - gt.x;
    double dy = estimate.y - gt.y;
    double c = std::cos(gt.theta), s = std::sin(gt.theta);
    RelativeErrors e;
    e.longitudinal = std::abs(c * dx + s * dy);
    e.lateral = std::abs(-s * dx + c * dy);
    e.angular = std::abs(wrap_angle(estimate.theta - gt.theta));
    return e;
}

inline double position_error(const Pose& estimate, const Pose& gt) {
    return std::hypot(estimate.x - gt.x, estimate.y - gt.y);
}

// Applies a rigid transform (rotate by phi about the origin, then translate).
inline Pose transform_pose(const Pose& p, double tx, double ty, double phi) {
    double c = std::cos(phi), s = std::sin(phi);
    return Pose(c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.theta + phi);
}

}  // namespace trajden
