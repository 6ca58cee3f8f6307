#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dexforge/demo.hpp"
#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/grasp.hpp"
#include "dexforge/hand.hpp"
#include "dexforge/mesh.hpp"
#include "dexforge/motion.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

struct AugmentConfig {
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    double object_xy = 0.10;                    // meters, per-axis bound
    double object_yaw = 30.0 * M_PI / 180.0;    // radians
    double camera_pos = 0.05;                   // meters, per-axis bound
    double camera_rot = 5.0 * M_PI / 180.0;     // radians
    double p_drop = 0.15;
    double p_noise = 0.15;
    double sigma = 0.015;                       // meters, along-normal noise
    double knn_delta = 0.01;                    // meters, extraction threshold
    std::uint64_t seed = 0;
    Vec3 workspace_lo = Vec3(0.2, -0.4, -0.05);
    Vec3 workspace_hi = Vec3(0.8, 0.4, 0.6);

    void validate() const {
        if (!(p_drop >= 0.0 && p_drop < 1.0))
            throw InvariantViolation("augment config: p_drop must lie in [0, 1)");
        if (!(p_noise >= 0.0 && p_noise < 1.0))
            throw InvariantViolation("augment config: p_noise must lie in [0, 1)");
        if (!(sigma >= 0.0))
            throw InvariantViolation("augment config: sigma must be nonnegative");
        if (!(scale_lo > 0.0 && scale_lo <= 1.0 && 1.0 <= scale_hi))
            throw InvariantViolation("augment config: scale range must bracket 1");
        if (object_xy < 0.0 || object_yaw < 0.0 || camera_pos < 0.0 || camera_rot < 0.0)
            throw InvariantViolation("augment config: jitter bounds must be nonnegative");
        if (!(knn_delta > 0.0))
            throw InvariantViolation("augment config: extraction threshold must be positive");
        if (!((workspace_lo.array() <= workspace_hi.array()).all()))
            throw InvariantViolation("augment config: workspace bounds are inverted");
    }
};

inline AugmentConfig augment_preset(const std::string& name) {
    AugmentConfig cfg;
    if (name == "appendix-a2") return cfg;
    if (name == "main-text") {
        cfg.p_drop = 0.30;
        cfg.p_noise = 0.30;
        return cfg;
    }
    throw FormatError("unknown augmentation preset: " + name);
}

namespace augment_detail {

inline bool exact_identity(const Pose& p) {
    return p.rotation.w() == 1.0 && p.rotation.x() == 0.0 && p.rotation.y() == 0.0 &&
           p.rotation.z() == 0.0 && p.translation.x() == 0.0 &&
           p.translation.y() == 0.0 && p.translation.z() == 0.0;
}

// Composition that keeps untouched inputs bit-stable: renormalizing a
// rotation multiplied by an exact identity may still flip low bits, and
// zero-bound augmentation must be an exact no-op.
inline Pose apply_delta(const Pose& delta, const Pose& pose) {
    const bool pure_shift = delta.rotation.w() == 1.0 && delta.rotation.x() == 0.0 &&
                            delta.rotation.y() == 0.0 && delta.rotation.z() == 0.0;
    if (pure_shift) {
        Pose out = pose;
        out.translation += delta.translation;
        return out;
    }
    return pose_compose(delta, pose);
}

inline Vec3 apply_delta_point(const Pose& delta, const Vec3& p) {
    const bool pure_shift = delta.rotation.w() == 1.0 && delta.rotation.x() == 0.0 &&
                            delta.rotation.y() == 0.0 && delta.rotation.z() == 0.0;
    if (pure_shift) return p + delta.translation;
    return delta.apply(p);
}

inline Vec3 rotate_delta_normal(const Pose& delta, const Vec3& n) {
    const bool pure_shift = delta.rotation.w() == 1.0 && delta.rotation.x() == 0.0 &&
                            delta.rotation.y() == 0.0 && delta.rotation.z() == 0.0;
    if (pure_shift) return n;
    return delta.rotate(n);
}

// Joints actuating exactly one finger's contact chains. Shared joints (a
// palm flex, say) are excluded so re-closing one finger never moves another.
inline std::map<int, std::vector<int>> finger_joint_sets(const HandModelSpec& hand) {
    std::map<int, std::set<int>> chains;
    for (const auto& contact : hand.contacts)
        for (int j : hand.link_chain[static_cast<size_t>(contact.link)])
            chains[contact.finger].insert(j);
    std::map<int, std::vector<int>> out;
    for (const auto& [finger, joints] : chains) {
        for (int j : joints) {
            bool shared = false;
            for (const auto& [other, theirs] : chains)
                if (other != finger && theirs.count(j)) shared = true;
            if (!shared) out[finger].push_back(j);
        }
    }
    return out;
}

// Per-embodiment frame -> segment index map rebuilt from the stored segments.
inline std::vector<std::vector<int>> segment_cover(const DemoRecord& record) {
    const int T = record.timesteps();
    std::vector<std::vector<int>> cover(record.hands.size(), std::vector<int>(
                                                                 static_cast<size_t>(T), -1));
    for (size_t s = 0; s < record.segments.size(); ++s) {
        const ScheduledSegment& seg = record.segments[s];
        for (int e : seg.embodiments) {
            if (e < 0 || e >= static_cast<int>(cover.size()))
                throw InvariantViolation("segment references an unknown embodiment");
            for (int f = seg.start; f < seg.start + seg.duration && f < T; ++f)
                cover[static_cast<size_t>(e)][static_cast<size_t>(f)] = static_cast<int>(s);
        }
    }
    return cover;
}

inline std::vector<double> lerp_q(const std::vector<double>& a, const std::vector<double>& b,
                                  double u) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - u) * a[i] + u * b[i];
    return out;
}

inline void check_wrist_continuity(const std::vector<HandState>& timeline, int embodiment) {
    for (size_t f = 1; f < timeline.size(); ++f) {
        const double step =
            (timeline[f].wrist.translation - timeline[f - 1].wrist.translation).norm();
        const double turn = rotation_geodesic_angle(timeline[f].wrist.rotation,
                                                    timeline[f - 1].wrist.rotation);
        if (step >= TrajectorySegment::step_translation_bound ||
            turn >= TrajectorySegment::step_rotation_bound)
            throw InvariantViolation("pose augmentation breaks continuity for embodiment " +
                                     std::to_string(embodiment) + " at frame " +
                                     std::to_string(f));
    }
}

}  // namespace augment_detail

// Partition a scene by proximity to a posed reference cloud: a point belongs
// to the object iff its nearest reference point lies strictly within delta.
inline std::pair<PointCloud, PointCloud> extract_object_points(const PointCloud& scene,
                                                               const PointCloud& reference,
                                                               double delta) {
    if (!(delta > 0.0)) throw InvariantViolation("extraction threshold must be positive");
    if (reference.points.empty()) throw EmptyInput("extraction reference cloud is empty");
    const double d2 = delta * delta;
    const bool normals = scene.normals.size() == scene.points.size();
    const bool colors = scene.colors.size() == scene.points.size();
    std::pair<PointCloud, PointCloud> out;
    for (size_t i = 0; i < scene.points.size(); ++i) {
        bool close = false;
        for (const Vec3& r : reference.points)
            if ((scene.points[i] - r).squaredNorm() < d2) {
                close = true;
                break;
            }
        PointCloud& side = close ? out.first : out.second;
        side.points.push_back(scene.points[i]);
        if (normals) side.normals.push_back(scene.normals[i]);
        if (colors) side.colors.push_back(scene.colors[i]);
    }
    return out;
}

// Drop a uniform subset, then pad back to the input cardinality with copies
// of kept points displaced along their stored normals by N(0, sigma^2).
inline PointCloud augment_observation(const PointCloud& cloud, Rng& rng,
                                      const AugmentConfig& cfg) {
    cfg.validate();
    const size_t n = cloud.points.size();
    if (n == 0) return PointCloud{};
    if (cloud.normals.size() != n)
        throw MissingNormals("observation augmentation needs per-point normals");
    // Cardinality is the contract; at least one survivor anchors the renoise.
    const size_t dropped = static_cast<size_t>(
        std::llround(cfg.p_drop * static_cast<double>(n)));
    const size_t kept_count = std::max<size_t>(1, n - dropped);
    const auto perm = rng.permutation(n);
    std::vector<size_t> kept(perm.begin(),
                             perm.begin() + static_cast<std::ptrdiff_t>(kept_count));
    std::sort(kept.begin(), kept.end());

    const bool colors = cloud.colors.size() == n;
    PointCloud out;
    out.points.reserve(n);
    out.normals.reserve(n);
    if (colors) out.colors.reserve(n);
    for (size_t i : kept) {
        out.points.push_back(cloud.points[i]);
        out.normals.push_back(cloud.normals[i]);
        if (colors) out.colors.push_back(cloud.colors[i]);
    }
    const size_t noisy = n - kept_count;
    for (size_t j = 0; j < noisy; ++j) {
        const size_t pick = kept[static_cast<size_t>(rng.uniform_index(kept_count))];
        const double eta = rng.normal(0.0, cfg.sigma);
        out.points.push_back(cloud.points[pick] + eta * cloud.normals[pick]);
        out.normals.push_back(cloud.normals[pick]);
        if (colors) out.colors.push_back(cloud.colors[pick]);
    }
    return out;
}

// Pure jitter: translation moves within a per-axis box, orientation turns by
// a random axis-angle within the bound. No look-at recentering.
inline Pose augment_camera(const Pose& camera, Rng& rng, const AugmentConfig& cfg) {
    cfg.validate();
    Vec3 dt;
    for (int a = 0; a < 3; ++a) dt[a] = rng.uniform(-cfg.camera_pos, cfg.camera_pos);
    Vec3 axis;
    do {
        axis = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (axis.norm() < 1e-9);
    axis.normalize();
    const double angle = rng.uniform(0.0, cfg.camera_rot);

    Pose out = camera;
    out.translation += dt;
    if (angle != 0.0)
        out.rotation = canonical_quat(
            (Quat(Eigen::AngleAxisd(angle, axis)) * camera.rotation).normalized());
    return out;
}

// One rigid world-frame delta per object: xy translation plus a yaw about
// the object's initial position, so the object pivots in place then shifts.
inline std::vector<Pose> sample_pose_deltas(const DemoRecord& record, Rng& rng,
                                            const AugmentConfig& cfg) {
    if (record.object_poses.empty())
        throw InvariantViolation("pose augmentation needs object tracks");
    std::vector<Pose> deltas;
    deltas.reserve(record.object_ids.size());
    for (size_t o = 0; o < record.object_ids.size(); ++o) {
        const double dx = rng.uniform(-cfg.object_xy, cfg.object_xy);
        const double dy = rng.uniform(-cfg.object_xy, cfg.object_xy);
        const double yaw = rng.uniform(-cfg.object_yaw, cfg.object_yaw);
        Pose delta;
        if (yaw != 0.0) {
            const Vec3 anchor = record.object_poses.front()[o].translation;
            delta.rotation = canonical_quat(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())));
            delta.translation = anchor - delta.rotation * anchor + Vec3(dx, dy, 0.0);
        } else {
            delta.translation = Vec3(dx, dy, 0.0);
        }
        deltas.push_back(delta);
    }
    return deltas;
}

// Apply per-object rigid deltas: object tracks and targets move rigidly,
// grasp/transport/release segments of each object's tasks move with it, and
// approach segments re-interpolate from their unchanged start states.
inline DemoRecord apply_object_deltas(const DemoRecord& record,
                                      const std::vector<Pose>& deltas,
                                      const AugmentConfig& cfg) {
    if (deltas.size() != record.object_ids.size())
        throw InvariantViolation("pose augmentation: one delta per object required");
    DemoRecord out = record;
    const int T = record.timesteps();

    const auto in_workspace = [&](const Vec3& t) {
        return (t.array() >= cfg.workspace_lo.array()).all() &&
               (t.array() <= cfg.workspace_hi.array()).all();
    };
    for (size_t o = 0; o < deltas.size(); ++o) {
        if (augment_detail::exact_identity(deltas[o])) continue;
        for (int f = 0; f < T; ++f) {
            Pose& pose = out.object_poses[static_cast<size_t>(f)][o];
            pose = augment_detail::apply_delta(deltas[o], pose);
            if (!in_workspace(pose.translation))
                throw WorkspaceViolation(
                    "object " + std::to_string(record.object_ids[o]) +
                    " leaves the workspace at frame " + std::to_string(f));
        }
        if (o < out.target_final.size()) {
            out.target_final[o] = augment_detail::apply_delta(deltas[o], out.target_final[o]);
            if (!in_workspace(out.target_final[o].translation))
                throw WorkspaceViolation("object " + std::to_string(record.object_ids[o]) +
                                         " target leaves the workspace");
        }
    }

    std::map<int, const Pose*> task_delta;
    for (const auto& grasp : record.grasps)
        task_delta[grasp.task] = &deltas[static_cast<size_t>(grasp.object)];
    for (auto& grasp : out.grasps) {
        const Pose& delta = deltas[static_cast<size_t>(grasp.object)];
        if (augment_detail::exact_identity(delta)) continue;
        for (auto& state : grasp.hands)
            state.wrist = augment_detail::apply_delta(delta, state.wrist);
    }

    const auto cover = augment_detail::segment_cover(record);
    for (size_t e = 0; e < record.hands.size(); ++e) {
        const auto& old_tl = record.hands[e];
        auto& new_tl = out.hands[e];
        std::vector<HandState> approach;
        int approach_seg = -1;
        for (int f = 0; f < T; ++f) {
            const int s = cover[e][static_cast<size_t>(f)];
            if (s < 0) {
                new_tl[static_cast<size_t>(f)] =
                    f > 0 ? new_tl[static_cast<size_t>(f) - 1] : old_tl[0];
                continue;
            }
            const ScheduledSegment& seg = record.segments[static_cast<size_t>(s)];
            const auto it = task_delta.find(seg.task);
            if (it == task_delta.end() || augment_detail::exact_identity(*it->second)) {
                new_tl[static_cast<size_t>(f)] = old_tl[static_cast<size_t>(f)];
                continue;
            }
            const Pose& delta = *it->second;
            if (seg.type == ActionType::Pregrasp) {
                if (s != approach_seg) {
                    const HandState start =
                        seg.start > 0 ? new_tl[static_cast<size_t>(seg.start) - 1] : old_tl[0];
                    HandState goal =
                        old_tl[static_cast<size_t>(seg.start + seg.duration) - 1];
                    goal.wrist = augment_detail::apply_delta(delta, goal.wrist);
                    auto fitted = interpolate_trajectory(start, goal, seg.duration);
                    if (static_cast<int>(fitted.frames.size()) != seg.duration)
                        throw InvariantViolation(
                            "task " + std::to_string(seg.task) +
                            " approach cannot reach the augmented pose within its "
                            "scheduled window");
                    approach = std::move(fitted.frames);
                    approach_seg = s;
                }
                new_tl[static_cast<size_t>(f)] =
                    approach[static_cast<size_t>(f - seg.start)];
            } else {
                new_tl[static_cast<size_t>(f)] = old_tl[static_cast<size_t>(f)];
                new_tl[static_cast<size_t>(f)].wrist = augment_detail::apply_delta(
                    delta, old_tl[static_cast<size_t>(f)].wrist);
            }
        }
        augment_detail::check_wrist_continuity(new_tl, static_cast<int>(e));
    }
    out.validate();
    return out;
}

inline DemoRecord augment_object_pose(const DemoRecord& record, Rng& rng,
                                      const AugmentConfig& cfg) {
    cfg.validate();
    return apply_object_deltas(record, sample_pose_deltas(record, rng, cfg), cfg);
}

// With the wrist held fixed, binary-search a per-finger flexion scaling
// parameter s (joints sweep open -> s * original) until the finger's nearest
// used contact lies within 2 mm of the scaled surface.
inline std::vector<double> adjust_fingers_for_scale(const HandModelSpec& hand,
                                                    const Pose& wrist,
                                                    const std::vector<double>& q,
                                                    const std::vector<int>& contact_ids,
                                                    const GraspObject& target) {
    constexpr double tol = 0.002;  // contact tolerance, meters
    if (q.size() != hand.open_q.size())
        throw InvariantViolation("finger adjustment: joint vector size mismatch");
    std::map<int, std::vector<int>> used;
    for (int cid : contact_ids) {
        if (cid < 0 || cid >= static_cast<int>(hand.contacts.size()))
            throw InvariantViolation("finger adjustment: contact id out of range");
        used[hand.contacts[static_cast<size_t>(cid)].finger].push_back(cid);
    }
    const auto exclusive = augment_detail::finger_joint_sets(hand);

    std::vector<double> out = q;
    for (const auto& [finger, cids] : used) {
        const auto jit = exclusive.find(finger);
        const std::vector<int> joints =
            jit == exclusive.end() ? std::vector<int>{} : jit->second;
        const auto q_at = [&](double s) {
            std::vector<double> probe = out;
            for (int j : joints) {
                const size_t ji = static_cast<size_t>(j);
                const double v = hand.open_q[ji] + s * (q[ji] - hand.open_q[ji]);
                probe[ji] = std::clamp(v, hand.joints[ji].lower, hand.joints[ji].upper);
            }
            return probe;
        };
        const auto nearest = [&](const std::vector<double>& probe) {
            const auto cache = forward_kinematics(hand, wrist, probe);
            double best = std::numeric_limits<double>::infinity();
            for (int cid : cids)
                best = std::min(
                    best,
                    closest_surface_point(target.mesh, cache.contact_position(cid)).distance);
            return best;
        };
        // Signed reach of the most advanced contact; positive outside the hull.
        const auto advance = [&](const std::vector<double>& probe) {
            const auto cache = forward_kinematics(hand, wrist, probe);
            double worst = std::numeric_limits<double>::infinity();
            for (int cid : cids)
                worst =
                    std::min(worst, target.planes.signed_distance(cache.contact_position(cid)));
            return worst;
        };

        // Already touching: keep the original joints bit-exactly.
        if (nearest(out) < tol) continue;

        const double g1 = advance(out);
        double lo = 1.0, hi = 1.0;
        if (g1 > 0.0) {  // object shrank: curl further until the surface is crossed
            double s = 1.0;
            std::vector<double> prev = q_at(s);
            for (;;) {
                s += std::max(0.25, 0.5 * s);
                const auto probe = q_at(s);
                if (probe == prev)
                    throw ContactUnreachable(
                        "finger " + std::to_string(finger) +
                        " saturates its limits before reaching the scaled surface");
                if (advance(probe) <= 0.0) {
                    hi = s;
                    break;
                }
                lo = s;
                prev = probe;
            }
        } else if (g1 < 0.0) {  // object grew: open toward the rest pose
            double s = 1.0;
            for (;;) {
                s *= 0.5;
                if (s < 1e-6) {
                    if (advance(q_at(0.0)) < 0.0)
                        throw ContactUnreachable("finger " + std::to_string(finger) +
                                                 " penetrates the scaled surface even "
                                                 "when fully open");
                    lo = 0.0;
                    break;
                }
                if (advance(q_at(s)) > 0.0) {
                    lo = s;
                    break;
                }
                hi = s;
            }
        }
        for (int it = 0; it < 80 && hi > lo; ++it) {
            const double mid = 0.5 * (lo + hi);
            (advance(q_at(mid)) > 0.0 ? lo : hi) = mid;
        }
        const auto probe = q_at(hi);
        if (nearest(probe) >= tol)
            throw ContactUnreachable("finger " + std::to_string(finger) +
                                     " cannot restore contact within tolerance");
        for (int j : joints) out[static_cast<size_t>(j)] = probe[static_cast<size_t>(j)];
    }
    return out;
}

inline std::vector<std::vector<double>> adjust_fingers_for_scale(const HandModelSpec& hand,
                                                                 const GraspCandidate& grasp,
                                                                 const GraspObject& scaled) {
    std::vector<std::vector<double>> out;
    out.reserve(grasp.hands.size());
    for (size_t h = 0; h < grasp.hands.size(); ++h) {
        std::vector<int> ids;
        for (const auto& [slot, cid] : grasp.contacts)
            if (slot == static_cast<int>(h)) ids.push_back(cid);
        out.push_back(adjust_fingers_for_scale(hand, grasp.hands[h].wrist, grasp.hands[h].q,
                                               ids, scaled));
    }
    return out;
}

// Scale every object about its centroid, keeping wrists and transport
// motions bit-identical; only finger articulation is rebuilt around the
// re-closed grasp configurations.
inline DemoRecord augment_scale(const DemoRecord& record, double factor,
                                const HandModelSpec& hand,
                                const std::map<int, TriMesh>& meshes) {
    if (!(factor > 0.0)) throw InvariantViolation("scale factor must be positive");
    if (factor == 1.0) return record;
    DemoRecord out = record;
    out.object_scale = record.object_scale * factor;
    const int T = record.timesteps();

    std::map<std::pair<int, int>, std::vector<double>> reclosed;  // (task, embodiment) -> q
    for (auto& grasp : out.grasps) {
        const int oid = record.object_ids[static_cast<size_t>(grasp.object)];
        const auto mit = meshes.find(oid);
        if (mit == meshes.end())
            throw MissingAsset("scale augmentation: no mesh for object " +
                               std::to_string(oid));
        int attach = 0;
        for (const auto& seg : record.segments)
            if (seg.task == grasp.task && seg.type == ActionType::Grasp) {
                attach = std::min(seg.start + seg.duration, T - 1);
                break;
            }
        const Pose& obj_pose =
            record.object_poses[static_cast<size_t>(attach)][static_cast<size_t>(grasp.object)];
        const TriMesh local = scale_mesh_about(mit->second, out.object_scale,
                                               mesh_vertex_centroid(mit->second));
        const GraspObject scaled = make_grasp_object(transform_mesh(obj_pose, local));
        for (size_t i = 0; i < grasp.embodiments.size(); ++i) {
            auto qn = adjust_fingers_for_scale(hand, grasp.hands[i].wrist, grasp.hands[i].q,
                                               grasp.contact_ids[i], scaled);
            reclosed[{grasp.task, grasp.embodiments[i]}] = qn;
            grasp.hands[i].q = std::move(qn);
        }
    }
    if (reclosed.empty()) return out;

    const auto cover = augment_detail::segment_cover(record);
    for (size_t e = 0; e < record.hands.size(); ++e) {
        bool touched = false;
        for (const auto& [key, q] : reclosed) touched = touched || key.second == static_cast<int>(e);
        if (!touched) continue;
        const auto& old_tl = record.hands[e];
        auto& new_tl = out.hands[e];
        std::vector<double> entry_q;
        for (int f = 0; f < T; ++f) {
            const int s = cover[e][static_cast<size_t>(f)];
            if (s < 0) {
                new_tl[static_cast<size_t>(f)].q =
                    f > 0 ? new_tl[static_cast<size_t>(f) - 1].q : old_tl[0].q;
                continue;
            }
            const ScheduledSegment& seg = record.segments[static_cast<size_t>(s)];
            const auto rit = reclosed.find({seg.task, static_cast<int>(e)});
            if (rit == reclosed.end()) {
                new_tl[static_cast<size_t>(f)].q = old_tl[static_cast<size_t>(f)].q;
                continue;
            }
            const int k = f - seg.start;
            const double u = seg.duration > 1
                                 ? static_cast<double>(k) / (seg.duration - 1)
                                 : 1.0;
            switch (seg.type) {
                case ActionType::Grasp:
                    if (k == 0)
                        entry_q = f > 0 ? new_tl[static_cast<size_t>(f) - 1].q : old_tl[0].q;
                    new_tl[static_cast<size_t>(f)].q =
                        augment_detail::lerp_q(entry_q, rit->second, u);
                    break;
                case ActionType::Motion:
                    new_tl[static_cast<size_t>(f)].q =
                        f > 0 ? new_tl[static_cast<size_t>(f) - 1].q : old_tl[0].q;
                    break;
                case ActionType::Release: {
                    if (k == 0)
                        entry_q = f > 0 ? new_tl[static_cast<size_t>(f) - 1].q : old_tl[0].q;
                    const auto& end_q =
                        old_tl[static_cast<size_t>(seg.start + seg.duration) - 1].q;
                    new_tl[static_cast<size_t>(f)].q =
                        augment_detail::lerp_q(entry_q, end_q, u);
                    break;
                }
                case ActionType::Pregrasp:
                    new_tl[static_cast<size_t>(f)].q = old_tl[static_cast<size_t>(f)].q;
                    break;
            }
        }
        for (const auto& state : new_tl)
            if (!limit_violations(hand, state.q).empty())
                throw InvariantViolation("scale augmentation produced out-of-limit joints");
    }
    out.validate();
    return out;
}

// Full per-demo pipeline: object pose jitter, object scaling with finger
// re-closing, camera jitter, then observation rebuild (per-object extraction,
// carry through the pose/scale maps, drop + renoise). Deterministic in
// (source, config, index); the per-demo stream is derive_seed(seed, index).
inline DemoRecord augment_record(const DemoRecord& source,
                                 const std::map<int, TriMesh>& meshes,
                                 const HandModelSpec& hand, const AugmentConfig& cfg,
                                 std::uint64_t index) {
    cfg.validate();
    const std::uint64_t seed = derive_seed(cfg.seed, index);
    Rng rng(seed);

    const auto deltas = sample_pose_deltas(source, rng, cfg);
    DemoRecord out = apply_object_deltas(source, deltas, cfg);
    const double factor = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    out = augment_scale(out, factor, hand, meshes);
    out.camera_pose = augment_camera(source.camera_pose, rng, cfg);

    // With identity geometry and no dropout the rebuild would only regroup
    // points; skip it so an all-zero config is an exact no-op.
    bool geometry_moved = factor != 1.0 || cfg.p_drop != 0.0;
    for (const Pose& delta : deltas)
        geometry_moved = geometry_moved || !augment_detail::exact_identity(delta);

    if (!source.observations.empty() && geometry_moved) {
        const int T = source.timesteps();
        for (int f = 0; f < T; ++f) {
            PointCloud rest = source.observations[static_cast<size_t>(f)];
            std::vector<PointCloud> parts(source.object_ids.size());
            for (size_t o = 0; o < source.object_ids.size(); ++o) {
                const auto mit = meshes.find(source.object_ids[o]);
                if (mit == meshes.end())
                    throw MissingAsset("augmentation: no mesh for object " +
                                       std::to_string(source.object_ids[o]));
                TriMesh local = mit->second;
                if (source.object_scale != 1.0)
                    local = scale_mesh_about(local, source.object_scale,
                                             mesh_vertex_centroid(local));
                const Pose& pose = source.object_poses[static_cast<size_t>(f)][o];
                PointCloud reference;
                reference.points.reserve(local.vertices.size());
                for (const Vec3& v : local.vertices) reference.points.push_back(pose.apply(v));
                auto [part, remainder] = extract_object_points(rest, reference, cfg.knn_delta);
                rest = std::move(remainder);
                if (!part.points.empty()) {
                    const Vec3 anchor = pose.apply(mesh_vertex_centroid(local));
                    for (auto& p : part.points) {
                        if (factor != 1.0) p = anchor + factor * (p - anchor);
                        p = augment_detail::apply_delta_point(deltas[o], p);
                    }
                    for (auto& nrm : part.normals)
                        nrm = augment_detail::rotate_delta_normal(deltas[o], nrm);
                }
                parts[o] = augment_observation(part, rng, cfg);
            }
            PointCloud obs = std::move(rest);
            for (auto& part : parts) append_cloud(obs, part);
            out.observations[static_cast<size_t>(f)] = std::move(obs);
        }
    }

    out.augment_seed = seed;
    out.validate();
    return out;
}

}  // namespace dexforge
