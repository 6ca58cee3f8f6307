#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dexforge/geom.hpp"
#include "dexforge/ingest.hpp"
#include "dexforge/mesh.hpp"
#include "dexforge/rng.hpp"

// Analytic demonstration scenes. Every pose in these bundles is closed-form,
// so downstream stages can be checked against ground truth rather than
// against their own output.

namespace dexforge::synthetic {

// Regular grid on the table plane z = 0 with upward normals.
inline PointCloud table_patch(double center_x = 0.5, double half_extent = 0.25,
                              int n = 40) {
    PointCloud out;
    out.points.reserve(static_cast<size_t>(n) * n);
    out.normals.reserve(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double x = center_x - half_extent + 2.0 * half_extent * i / (n - 1);
            const double y = -half_extent + 2.0 * half_extent * j / (n - 1);
            out.points.emplace_back(x, y, 0.0);
            out.normals.emplace_back(0.0, 0.0, 1.0);
        }
    return out;
}

struct Fixture {
    ReconBundle bundle;
    TaskAnnotation annotation;
};

// One hand picks a ball, carries it along a straight line while it yaws a
// quarter turn, and sets it down. Object track: at `start` until
// `motion_frame`, linear blend to `goal` reached exactly at `goal_frame`,
// held there through the end of the horizon.
struct PickPlaceParams {
    int object_id = 3;
    double radius = 0.03;
    Vec3 start{0.45, -0.08, 0.03};
    Vec3 goal{0.55, 0.10, 0.03};
    double yaw = M_PI / 2;  // accrued over the transport span
    int grasp_frame = 20;
    int motion_frame = 30;
    int goal_frame = 50;  // release starts here; the carry ends here
    int horizon = 61;
    double frame_rate = 10.0;
    int cloud_points = 160;  // per-frame object surface samples
    std::uint64_t seed = 42;
};

inline Pose pickplace_object_pose(const PickPlaceParams& p, int frame) {
    const double span = std::max(1, p.goal_frame - p.motion_frame);
    const double s =
        std::clamp((frame - p.motion_frame) / span, 0.0, 1.0);
    Pose pose;
    pose.rotation = canonical_quat(Quat(Eigen::AngleAxisd(s * p.yaw, Vec3::UnitZ())));
    pose.translation = p.start + s * (p.goal - p.start);
    return pose;
}

inline Fixture make_pickplace_fixture(const PickPlaceParams& p = {}) {
    Fixture fx;
    ReconBundle& b = fx.bundle;
    b.id = "pickplace";
    b.frame_rate_source = p.frame_rate;
    b.frame_rate_target = p.frame_rate;
    b.table_cloud = table_patch();
    b.object_ids = {p.object_id};
    b.object_meshes = {make_uv_sphere(p.radius)};

    Rng rng(p.seed);
    for (int i = 0; i < p.horizon; ++i) {
        FrameRecord frame;
        frame.index = i;
        frame.time = i / p.frame_rate;
        const Pose pose = pickplace_object_pose(p, i);
        frame.object_poses[p.object_id] = pose;
        frame.object_clouds[p.object_id] =
            transform_cloud(pose, sample_mesh_surface(b.object_meshes[0],
                                                      static_cast<size_t>(p.cloud_points),
                                                      rng));
        frame.left_hand = Pose{Quat::Identity(), Vec3(0.30, 0.05, 0.12)};
        frame.right_hand = Pose{Quat::Identity(), Vec3(0.30, -0.20, 0.12)};
        b.frames.push_back(std::move(frame));
    }

    TaskAnnotation& ann = fx.annotation;
    ann.num_embodiments = 2;
    ann.horizon = p.horizon;
    Task task;
    task.embodiments = {0};
    task.object_id = p.object_id;
    task.subactions = {{ActionType::Pregrasp, 0},
                       {ActionType::Grasp, p.grasp_frame},
                       {ActionType::Motion, p.motion_frame},
                       {ActionType::Release, p.goal_frame}};
    ann.tasks = {task};
    ann.finger_counts = {-1};
    return fx;
}

// Both hands lift a ball straight up and keep holding it through the end of
// the demonstration (no release), so the attachment runs to the horizon.
struct BiliftParams {
    int object_id = 7;
    double radius = 0.045;
    Vec3 start{0.5, 0.0, 0.045};
    double lift = 0.12;
    int grasp_frame = 20;
    int motion_frame = 30;
    int horizon = 51;
    double frame_rate = 10.0;
    int cloud_points = 160;
    std::uint64_t seed = 43;
};

inline Pose bilift_object_pose(const BiliftParams& p, int frame) {
    const double span = std::max(1, p.horizon - 1 - p.motion_frame);
    const double s = std::clamp((frame - p.motion_frame) / span, 0.0, 1.0);
    return Pose{Quat::Identity(), p.start + Vec3(0, 0, s * p.lift)};
}

inline Fixture make_bilift_fixture(const BiliftParams& p = {}) {
    Fixture fx;
    ReconBundle& b = fx.bundle;
    b.id = "bilift";
    b.frame_rate_source = p.frame_rate;
    b.frame_rate_target = p.frame_rate;
    b.table_cloud = table_patch();
    b.object_ids = {p.object_id};
    b.object_meshes = {make_uv_sphere(p.radius)};

    Rng rng(p.seed);
    for (int i = 0; i < p.horizon; ++i) {
        FrameRecord frame;
        frame.index = i;
        frame.time = i / p.frame_rate;
        const Pose pose = bilift_object_pose(p, i);
        frame.object_poses[p.object_id] = pose;
        frame.object_clouds[p.object_id] =
            transform_cloud(pose, sample_mesh_surface(b.object_meshes[0],
                                                      static_cast<size_t>(p.cloud_points),
                                                      rng));
        frame.left_hand = Pose{Quat::Identity(), Vec3(0.35, 0.20, 0.15)};
        frame.right_hand = Pose{Quat::Identity(), Vec3(0.35, -0.20, 0.15)};
        b.frames.push_back(std::move(frame));
    }

    TaskAnnotation& ann = fx.annotation;
    ann.num_embodiments = 2;
    ann.horizon = p.horizon;
    Task task;
    task.embodiments = {0, 1};
    task.object_id = p.object_id;
    task.subactions = {{ActionType::Pregrasp, 0},
                       {ActionType::Grasp, p.grasp_frame},
                       {ActionType::Motion, p.motion_frame}};
    ann.tasks = {task};
    ann.finger_counts = {-1};
    return fx;
}

}  // namespace dexforge::synthetic
