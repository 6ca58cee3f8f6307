#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dexforge/augment.hpp"
#include "dexforge/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace dexforge;

namespace {

void set_q(const HandModelSpec& hand, std::vector<double>& q, const std::string& name,
           double value) {
    for (size_t j = 0; j < hand.joints.size(); ++j)
        if (hand.joints[j].name == name) {
            q[j] = value;
            return;
        }
    FAIL("no joint named " << name);
}

// Max of translation gap and canonical quaternion coefficient gap.
double pose_gap(const Pose& a, const Pose& b) {
    const Quat qa = canonical_quat(a.rotation), qb = canonical_quat(b.rotation);
    return std::max((qa.coeffs() - qb.coeffs()).norm(), (a.translation - b.translation).norm());
}

bool pose_bits_equal(const Pose& a, const Pose& b) {
    return a.rotation.coeffs() == b.rotation.coeffs() && a.translation == b.translation;
}

// One fully synthesized pick-and-place demonstration shared by the suite:
// optimized pinch grasp, scheduled plan, assembled record with observations.
struct PipelineFixture {
    synthetic::PickPlaceParams params;
    synthetic::Fixture fx;
    GraspCandidate candidate;
    DemoRecord rec;
    std::map<int, TriMesh> meshes;
};

const PipelineFixture& pipeline() {
    static const PipelineFixture cached = [] {
        PipelineFixture p;
        p.fx = synthetic::make_pickplace_fixture(p.params);
        const HandModelSpec& hand = testing::test_hand();

        const Pose rest = synthetic::pickplace_object_pose(p.params, 0);
        const TriMesh& local = p.fx.bundle.mesh_for(p.params.object_id);
        const GraspObject object = make_grasp_object(transform_mesh(rest, local));
        GraspProblem prob;
        prob.object = &object;
        prob.hand = &hand;
        prob.contact_ids = restrict_contacts(hand, 2);

        GraspCandidate seed;
        HandAssignment ha;
        ha.embodiment = 0;
        ha.q = hand.open_q;
        set_q(hand, ha.q, "th_mcp", 0.3);
        set_q(hand, ha.q, "th_pip", 0.2);
        set_q(hand, ha.q, "idx_mcp", 0.9);
        set_q(hand, ha.q, "idx_pip", 0.5);
        set_q(hand, ha.q, "idx_dip", 0.3);
        ha.wrist.translation = rest.translation - Vec3(0.07, -0.012, 0.05);
        seed.hands.push_back(ha);
        p.candidate = optimize_grasp(prob, seed);

        MotionExecutor exec(p.fx.bundle, p.fx.annotation, hand, {p.candidate});
        const Executor fn = [&exec](const ExecutorRequest& r) { return exec(r); };
        const auto sched = schedule(p.fx.annotation.num_embodiments, p.fx.annotation.horizon,
                                    p.fx.annotation.tasks, fn);
        p.rec = assemble_demo(p.fx.bundle, p.fx.annotation, sched, exec, Pose{});
        p.meshes[p.params.object_id] = local;
        return p;
    }();
    return cached;
}

// Sum of |q - open| over one finger's exclusive joints.
double finger_flexion(const HandModelSpec& hand, const std::vector<double>& q, int finger) {
    const auto sets = augment_detail::finger_joint_sets(hand);
    double sum = 0.0;
    for (int j : sets.at(finger)) sum += std::abs(q[static_cast<size_t>(j)] -
                                                  hand.open_q[static_cast<size_t>(j)]);
    return sum;
}

std::set<int> used_fingers(const HandModelSpec& hand, const std::vector<int>& cids) {
    std::set<int> out;
    for (int cid : cids) out.insert(hand.contacts[static_cast<size_t>(cid)].finger);
    return out;
}

}  // namespace

TEST_CASE("presets select documented knob sets and bad configs are rejected") {
    const AugmentConfig base = augment_preset("appendix-a2");
    REQUIRE(base.p_drop == 0.15);
    REQUIRE(base.p_noise == 0.15);
    REQUIRE(base.sigma == 0.015);
    REQUIRE(base.scale_lo == 0.8);
    REQUIRE(base.scale_hi == 1.2);

    const AugmentConfig heavy = augment_preset("main-text");
    REQUIRE(heavy.p_drop == 0.30);
    REQUIRE(heavy.p_noise == 0.30);
    REQUIRE(heavy.sigma == 0.015);

    REQUIRE_THROWS_AS(augment_preset("aggressive"), FormatError);

    AugmentConfig bad;
    bad.p_drop = 1.0;
    REQUIRE_THROWS_AS(bad.validate(), InvariantViolation);
    bad = AugmentConfig{};
    bad.sigma = -0.01;
    REQUIRE_THROWS_AS(bad.validate(), InvariantViolation);
    bad = AugmentConfig{};
    bad.scale_lo = 1.1;
    REQUIRE_THROWS_AS(bad.validate(), InvariantViolation);
    bad = AugmentConfig{};
    bad.knn_delta = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), InvariantViolation);
    bad = AugmentConfig{};
    bad.workspace_lo.x() = bad.workspace_hi.x() + 1.0;
    REQUIRE_THROWS_AS(bad.validate(), InvariantViolation);
}

TEST_CASE("observation augmentation drops a fixed fraction and renoises it back") {
    Rng fill(5);
    PointCloud cloud;
    for (int i = 0; i < 1000; ++i) {
        cloud.points.push_back(Vec3(fill.uniform(0, 1), fill.uniform(0, 1), fill.uniform(0, 1)));
        cloud.normals.push_back(Vec3::UnitX());
        cloud.colors.push_back(Vec3(fill.uniform(0, 1), 0.5, 0.5));
    }

    AugmentConfig cfg;  // p_drop 0.15 -> 850 kept, 150 renoised
    Rng rng(6);
    const PointCloud out = augment_observation(cloud, rng, cfg);
    REQUIRE(out.points.size() == 1000);
    REQUIRE(out.normals.size() == 1000);
    REQUIRE(out.colors.size() == 1000);

    // The first 850 entries are surviving originals in their original order.
    size_t cursor = 0;
    std::set<size_t> kept;
    for (size_t i = 0; i < 850; ++i) {
        while (cursor < cloud.points.size() && cloud.points[cursor] != out.points[i]) ++cursor;
        REQUIRE(cursor < cloud.points.size());
        REQUIRE(out.normals[i] == cloud.normals[cursor]);
        REQUIRE(out.colors[i] == cloud.colors[cursor]);
        kept.insert(cursor);
        ++cursor;
    }
    REQUIRE(kept.size() == 850);  // sampled without replacement

    // The tail is kept points displaced along their own (copied) normals.
    for (size_t i = 850; i < 1000; ++i) {
        bool matched = false;
        for (size_t k : kept) {
            const Vec3 d = out.points[i] - cloud.points[k];
            if (out.normals[i] == cloud.normals[k] && out.colors[i] == cloud.colors[k] &&
                (d - d.dot(cloud.normals[k]) * cloud.normals[k]).norm() < 1e-12) {
                matched = true;
                break;
            }
        }
        REQUIRE(matched);
    }
}

TEST_CASE("renoise displacement matches the configured normal spread") {
    const size_t n = 400000;
    PointCloud flat;
    flat.points.assign(n, Vec3::Zero());
    flat.normals.assign(n, Vec3::UnitZ());

    AugmentConfig cfg;
    cfg.p_drop = 0.5;
    Rng rng(777);
    const PointCloud out = augment_observation(flat, rng, cfg);
    REQUIRE(out.points.size() == n);

    const size_t kept = n / 2;
    for (size_t i = 0; i < kept; ++i) REQUIRE(out.points[i].z() == 0.0);
    double mean = 0.0;
    for (size_t i = kept; i < n; ++i) mean += out.points[i].z();
    mean /= static_cast<double>(n - kept);
    double var = 0.0;
    for (size_t i = kept; i < n; ++i)
        var += (out.points[i].z() - mean) * (out.points[i].z() - mean);
    var /= static_cast<double>(n - kept - 1);
    REQUIRE(std::abs(mean) < 2e-4);
    REQUIRE(std::abs(std::sqrt(var) / cfg.sigma - 1.0) < 0.01);

    // Zero spread puts every replacement exactly on a surviving point.
    AugmentConfig frozen = cfg;
    frozen.sigma = 0.0;
    Rng rng2(778);
    const PointCloud still = augment_observation(flat, rng2, frozen);
    for (const Vec3& p : still.points) REQUIRE(p == Vec3::Zero());
}

TEST_CASE("observation augmentation edge cases") {
    AugmentConfig cfg;
    Rng rng(1);
    REQUIRE(augment_observation(PointCloud{}, rng, cfg).points.empty());

    PointCloud bare;
    bare.points.push_back(Vec3::Zero());
    REQUIRE_THROWS_AS(augment_observation(bare, rng, cfg), MissingNormals);

    // A lone point survives any drop rate: cardinality cannot reach zero.
    PointCloud lone;
    lone.points.push_back(Vec3(0.1, 0.2, 0.3));
    lone.normals.push_back(Vec3::UnitY());
    AugmentConfig harsh;
    harsh.p_drop = 0.9;
    const PointCloud kept = augment_observation(lone, rng, harsh);
    REQUIRE(kept.points.size() == 1);
    REQUIRE(kept.points[0] == lone.points[0]);

    // No dropout reproduces the cloud bit for bit.
    Rng fill(9);
    PointCloud cloud;
    for (int i = 0; i < 64; ++i) {
        cloud.points.push_back(Vec3(fill.normal(), fill.normal(), fill.normal()));
        cloud.normals.push_back(Vec3::UnitZ());
    }
    AugmentConfig none;
    none.p_drop = 0.0;
    const PointCloud same = augment_observation(cloud, rng, none);
    REQUIRE(same.points == cloud.points);
    REQUIRE(same.normals == cloud.normals);
}

TEST_CASE("object extraction partitions a scene by reference proximity") {
    Rng rng(11);
    PointCloud scene;
    for (int i = 0; i < 200; ++i) {
        scene.points.push_back(Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)));
        scene.normals.push_back(Vec3::UnitZ());
        scene.colors.push_back(Vec3(1, 0, 0));
    }

    SECTION("a self-reference claims every point") {
        const auto [obj, rest] = extract_object_points(scene, scene, 0.01);
        REQUIRE(obj.points.size() == scene.points.size());
        REQUIRE(rest.points.empty());
        REQUIRE(obj.points == scene.points);
        REQUIRE(obj.normals == scene.normals);
        REQUIRE(obj.colors == scene.colors);
    }

    SECTION("a distant reference claims nothing") {
        PointCloud far;
        far.points.push_back(Vec3(100, 100, 100));
        const auto [obj, rest] = extract_object_points(scene, far, 0.01);
        REQUIRE(obj.points.empty());
        REQUIRE(rest.points.size() == scene.points.size());
        REQUIRE(rest.points == scene.points);
    }

    SECTION("the split is exhaustive, disjoint, and order preserving") {
        PointCloud ref;
        ref.points.push_back(Vec3(0.5, 0.5, 0.5));
        const auto [obj, rest] = extract_object_points(scene, ref, 0.25);
        REQUIRE(obj.points.size() + rest.points.size() == scene.points.size());
        REQUIRE_FALSE(obj.points.empty());
        REQUIRE_FALSE(rest.points.empty());
        for (const Vec3& p : obj.points) REQUIRE((p - ref.points[0]).norm() < 0.25);
        for (const Vec3& p : rest.points) REQUIRE((p - ref.points[0]).norm() >= 0.25);
        // both sides preserve scene order
        size_t cursor = 0;
        for (const Vec3& p : obj.points) {
            while (cursor < scene.points.size() && scene.points[cursor] != p) ++cursor;
            REQUIRE(cursor++ < scene.points.size());
        }
        cursor = 0;
        for (const Vec3& p : rest.points) {
            while (cursor < scene.points.size() && scene.points[cursor] != p) ++cursor;
            REQUIRE(cursor++ < scene.points.size());
        }
    }

    SECTION("bad arguments are rejected") {
        REQUIRE_THROWS_AS(extract_object_points(scene, scene, 0.0), InvariantViolation);
        REQUIRE_THROWS_AS(extract_object_points(scene, PointCloud{}, 0.01), EmptyInput);
        PointCloud ref;
        ref.points.push_back(Vec3::Zero());
        const auto [obj, rest] = extract_object_points(PointCloud{}, ref, 0.01);
        REQUIRE(obj.points.empty());
        REQUIRE(rest.points.empty());
    }
}

TEST_CASE("extraction isolates the fixture object from the tabletop") {
    const auto& p = pipeline();
    const Pose rest_pose = synthetic::pickplace_object_pose(p.params, 0);
    const TriMesh& local = p.fx.bundle.mesh_for(p.params.object_id);
    const auto& sphere = p.fx.bundle.frames[0].object_clouds.at(p.params.object_id);

    PointCloud scene = p.fx.bundle.table_cloud;
    append_cloud(scene, sphere);
    PointCloud reference;
    for (const Vec3& v : local.vertices) reference.points.push_back(rest_pose.apply(v));

    const auto [obj, rest] = extract_object_points(scene, reference, 0.01);
    REQUIRE(obj.points.size() + rest.points.size() == scene.points.size());

    size_t true_object = 0;
    for (const Vec3& q : obj.points)
        for (const Vec3& s : sphere.points)
            if (q == s) {
                ++true_object;
                break;
            }
    // Every object point is recovered; background leakage stays under 1%.
    REQUIRE(true_object == sphere.points.size());
    REQUIRE(obj.points.size() - true_object <=
            p.fx.bundle.table_cloud.points.size() / 100);
}

TEST_CASE("camera jitter stays inside its bounds on a stable draw stream") {
    Pose cam;
    cam.rotation = canonical_quat(Quat(Eigen::AngleAxisd(0.4, Vec3(1, 2, 0.5).normalized())));
    cam.translation = Vec3(0.4, -0.3, 0.6);

    AugmentConfig cfg;
    Rng rng(4242);
    double max_dt = 0.0, max_angle = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Pose out = augment_camera(cam, rng, cfg);
        max_dt = std::max(max_dt, (out.translation - cam.translation).cwiseAbs().maxCoeff());
        max_angle = std::max(max_angle, rotation_geodesic_angle(out.rotation, cam.rotation));
        REQUIRE(std::abs(out.rotation.norm() - 1.0) < 1e-12);
    }
    REQUIRE(max_dt <= cfg.camera_pos);
    REQUIRE(max_angle <= cfg.camera_rot + 1e-12);
    // the sampler actually explores its range
    REQUIRE(max_dt > 0.9 * cfg.camera_pos);
    REQUIRE(max_angle > 0.9 * cfg.camera_rot);

    // Zero bounds return the camera bit-exactly yet consume the same stream.
    AugmentConfig zero = cfg;
    zero.camera_pos = 0.0;
    zero.camera_rot = 0.0;
    Rng a(99), b(99);
    const Pose frozen = augment_camera(cam, a, zero);
    REQUIRE(pose_bits_equal(frozen, cam));
    (void)augment_camera(cam, b, cfg);
    REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("pose deltas pivot each object about its initial position") {
    const auto& p = pipeline();
    AugmentConfig cfg;

    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const auto deltas = sample_pose_deltas(p.rec, rng, cfg);
        REQUIRE(deltas.size() == p.rec.object_ids.size());
        for (size_t o = 0; o < deltas.size(); ++o) {
            const Vec3 anchor = p.rec.object_poses[0][o].translation;
            const Vec3 moved = deltas[o].apply(anchor) - anchor;
            REQUIRE(std::abs(moved.x()) <= cfg.object_xy + 1e-12);
            REQUIRE(std::abs(moved.y()) <= cfg.object_xy + 1e-12);
            REQUIRE(std::abs(moved.z()) < 1e-12);
            REQUIRE(rotation_geodesic_angle(deltas[o].rotation, Quat::Identity()) <=
                    cfg.object_yaw + 1e-12);
        }
    }

    AugmentConfig zero = cfg;
    zero.object_xy = 0.0;
    zero.object_yaw = 0.0;
    const auto identity = sample_pose_deltas(p.rec, rng, zero);
    for (const Pose& d : identity) REQUIRE(augment_detail::exact_identity(d));

    // zero-bound draws still consume the stream
    Rng c(98), d(98);
    (void)sample_pose_deltas(p.rec, c, zero);
    (void)sample_pose_deltas(p.rec, d, cfg);
    REQUIRE(c.next_u64() == d.next_u64());
}

TEST_CASE("a pure shift moves the object, its grasp, and nothing else") {
    const auto& p = pipeline();
    const HandModelSpec& hand = testing::test_hand();
    AugmentConfig cfg;
    Pose shift;
    shift.translation = Vec3(0.12, 0.07, 0.0);

    const DemoRecord out = apply_object_deltas(p.rec, {shift}, cfg);
    const int T = p.rec.timesteps();
    REQUIRE(out.timesteps() == T);

    for (int f = 0; f < T; ++f) {
        REQUIRE(out.object_poses[static_cast<size_t>(f)][0].translation ==
                p.rec.object_poses[static_cast<size_t>(f)][0].translation + shift.translation);
        REQUIRE(out.object_poses[static_cast<size_t>(f)][0].rotation.coeffs() ==
                p.rec.object_poses[static_cast<size_t>(f)][0].rotation.coeffs());
    }
    REQUIRE(out.target_final[0].translation ==
            p.rec.target_final[0].translation + shift.translation);

    // grasped interval: the wrist rides the shift bit-exactly
    const Attachment& att = p.rec.attachments[0];
    for (int f = att.start; f < att.end; ++f) {
        REQUIRE(out.hands[0][static_cast<size_t>(f)].wrist.translation ==
                p.rec.hands[0][static_cast<size_t>(f)].wrist.translation + shift.translation);
        REQUIRE(out.hands[0][static_cast<size_t>(f)].q ==
                p.rec.hands[0][static_cast<size_t>(f)].q);
    }
    // the stored hand-object offset still reproduces the object track
    for (int f = att.start; f < att.end; ++f)
        REQUIRE(pose_gap(pose_compose(out.hands[0][static_cast<size_t>(f)].wrist, att.offset),
                         out.object_poses[static_cast<size_t>(f)][0]) < 1e-9);

    // the approach re-interpolates: same start, shifted landing
    REQUIRE(pose_bits_equal(out.hands[0][0].wrist, p.rec.hands[0][0].wrist));
    REQUIRE(out.hands[0][19].wrist.translation ==
            p.rec.hands[0][19].wrist.translation + shift.translation);

    // grasp provenance follows
    REQUIRE(out.grasps[0].hands[0].wrist.translation ==
            p.rec.grasps[0].hands[0].wrist.translation + shift.translation);
    REQUIRE(out.grasps[0].hands[0].q == p.rec.grasps[0].hands[0].q);

    // the idle hand never moves
    for (int f = 0; f < T; ++f) {
        REQUIRE(pose_bits_equal(out.hands[1][static_cast<size_t>(f)].wrist,
                                p.rec.hands[1][static_cast<size_t>(f)].wrist));
        REQUIRE(out.hands[1][static_cast<size_t>(f)].q ==
                p.rec.hands[1][static_cast<size_t>(f)].q);
    }

    // continuity of the rebuilt timeline
    for (int e = 0; e < 2; ++e) {
        TrajectorySegment whole;
        whole.embodiment = e;
        whole.frames = out.hands[static_cast<size_t>(e)];
        REQUIRE_NOTHROW(whole.validate(hand));
    }
}

TEST_CASE("yaw augmentation pivots the object in place") {
    const auto& p = pipeline();
    AugmentConfig cfg;
    cfg.object_xy = 0.0;

    Rng rng(31);
    const auto deltas = sample_pose_deltas(p.rec, rng, cfg);
    const double yaw = rotation_geodesic_angle(deltas[0].rotation, Quat::Identity());
    REQUIRE(yaw > 0.0);
    REQUIRE(yaw <= cfg.object_yaw);

    const DemoRecord out = apply_object_deltas(p.rec, deltas, cfg);
    // frame 0 stays put; only the heading changes
    REQUIRE((out.object_poses[0][0].translation - p.rec.object_poses[0][0].translation).norm() <
            1e-12);
    REQUIRE(std::abs(rotation_geodesic_angle(out.object_poses[0][0].rotation,
                                             p.rec.object_poses[0][0].rotation) -
                     yaw) < 1e-9);
    // later frames rotate about the frame-0 anchor, not about themselves
    const Vec3 anchor = p.rec.object_poses[0][0].translation;
    for (int f = 0; f < p.rec.timesteps(); ++f) {
        const Vec3 expect =
            deltas[0].rotation * (p.rec.object_poses[static_cast<size_t>(f)][0].translation -
                                  anchor) +
            anchor;
        REQUIRE((out.object_poses[static_cast<size_t>(f)][0].translation - expect).norm() <
                1e-12);
    }
}

TEST_CASE("pose augmentation respects the workspace and the schedule") {
    const auto& p = pipeline();
    AugmentConfig cfg;

    Pose big;
    big.translation = Vec3(3.0, 0.0, 0.0);
    REQUIRE_THROWS_AS(apply_object_deltas(p.rec, {big}, cfg), WorkspaceViolation);
    try {
        (void)apply_object_deltas(p.rec, {big}, cfg);
        FAIL("expected WorkspaceViolation");
    } catch (const WorkspaceViolation& e) {
        REQUIRE(std::string(e.what()).find("object 3") != std::string::npos);
    }

    // with the workspace out of the way, the approach window is the binding
    // constraint: three meters cannot be absorbed by a 20-frame approach
    AugmentConfig wide = cfg;
    wide.workspace_lo = Vec3(-99, -99, -99);
    wide.workspace_hi = Vec3(99, 99, 99);
    try {
        (void)apply_object_deltas(p.rec, {big}, wide);
        FAIL("expected InvariantViolation");
    } catch (const InvariantViolation& e) {
        REQUIRE(std::string(e.what()).find("scheduled window") != std::string::npos);
    }

    REQUIRE_THROWS_AS(apply_object_deltas(p.rec, {}, cfg), InvariantViolation);
}

TEST_CASE("pose augmentation leaves unrelated objects untouched") {
    const auto& p = pipeline();
    AugmentConfig cfg;

    DemoRecord two = p.rec;
    two.object_ids.push_back(99);
    Pose phantom;
    phantom.translation = Vec3(0.6, 0.15, 0.03);
    for (auto& row : two.object_poses) row.push_back(phantom);
    two.target_final.push_back(phantom);
    REQUIRE_NOTHROW(two.validate());

    Pose d;
    d.translation = Vec3(0.05, -0.03, 0.0);

    SECTION("moving the ungrasped object moves no hand") {
        const DemoRecord out = apply_object_deltas(two, {Pose{}, d}, cfg);
        for (int f = 0; f < two.timesteps(); ++f) {
            REQUIRE(pose_bits_equal(out.object_poses[static_cast<size_t>(f)][0],
                                    two.object_poses[static_cast<size_t>(f)][0]));
            REQUIRE(out.object_poses[static_cast<size_t>(f)][1].translation ==
                    phantom.translation + d.translation);
            for (int e = 0; e < 2; ++e) {
                REQUIRE(pose_bits_equal(
                    out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist,
                    two.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist));
                REQUIRE(out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q ==
                        two.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q);
            }
        }
    }

    SECTION("moving the grasped object leaves the phantom alone") {
        const DemoRecord out = apply_object_deltas(two, {d, Pose{}}, cfg);
        const Attachment& att = two.attachments[0];
        for (int f = 0; f < two.timesteps(); ++f)
            REQUIRE(pose_bits_equal(out.object_poses[static_cast<size_t>(f)][1], phantom));
        for (int f = att.start; f < att.end; ++f)
            REQUIRE(out.hands[0][static_cast<size_t>(f)].wrist.translation ==
                    two.hands[0][static_cast<size_t>(f)].wrist.translation + d.translation);
    }
}

TEST_CASE("zero-bound pose augmentation is an exact no-op") {
    const auto& p = pipeline();
    AugmentConfig cfg;
    cfg.object_xy = 0.0;
    cfg.object_yaw = 0.0;

    Rng rng(8);
    const DemoRecord out = augment_object_pose(p.rec, rng, cfg);
    for (int f = 0; f < p.rec.timesteps(); ++f) {
        REQUIRE(pose_bits_equal(out.object_poses[static_cast<size_t>(f)][0],
                                p.rec.object_poses[static_cast<size_t>(f)][0]));
        for (int e = 0; e < 2; ++e) {
            REQUIRE(pose_bits_equal(
                out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist,
                p.rec.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist));
            REQUIRE(out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q ==
                    p.rec.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q);
        }
    }
    REQUIRE(pose_bits_equal(out.target_final[0], p.rec.target_final[0]));
    REQUIRE(pose_bits_equal(out.grasps[0].hands[0].wrist, p.rec.grasps[0].hands[0].wrist));
}

TEST_CASE("scaling re-closes fingers while every wrist holds still") {
    const auto& p = pipeline();
    const HandModelSpec& hand = testing::test_hand();
    const auto fingers = used_fingers(hand, p.rec.grasps[0].contact_ids[0]);
    REQUIRE(fingers.size() == 2);  // pinch: thumb and index

    // Worst contact distance against the scaled surface at the attach frame.
    const auto worst_contact = [&](const DemoRecord& rec, double total_scale) {
        const TriMesh& local = p.fx.bundle.mesh_for(p.params.object_id);
        const TriMesh scaled =
            scale_mesh_about(local, total_scale, mesh_vertex_centroid(local));
        const GraspObject obj =
            make_grasp_object(transform_mesh(rec.object_poses[30][0], scaled));
        const auto cache =
            forward_kinematics(hand, rec.grasps[0].hands[0].wrist, rec.grasps[0].hands[0].q);
        double worst = 0.0;
        for (int cid : rec.grasps[0].contact_ids[0])
            worst = std::max(worst,
                             closest_surface_point(obj.mesh, cache.contact_position(cid)).distance);
        return worst;
    };

    for (const double factor : {0.8, 1.2}) {
        const DemoRecord out = augment_scale(p.rec, factor, hand, p.meshes);
        REQUIRE(out.object_scale == factor);

        // wrists and object tracks are not allowed to move at all
        for (int f = 0; f < p.rec.timesteps(); ++f) {
            for (int e = 0; e < 2; ++e)
                REQUIRE(pose_bits_equal(
                    out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist,
                    p.rec.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist));
            REQUIRE(pose_bits_equal(out.object_poses[static_cast<size_t>(f)][0],
                                    p.rec.object_poses[static_cast<size_t>(f)][0]));
        }

        // fingers curl further for a smaller object and open for a larger one
        for (int finger : fingers) {
            const double before = finger_flexion(hand, p.rec.grasps[0].hands[0].q, finger);
            const double after = finger_flexion(hand, out.grasps[0].hands[0].q, finger);
            if (factor < 1.0)
                REQUIRE(after > before);
            else
                REQUIRE(after < before);
        }
        // untouched fingers keep their joints bit-exactly
        const auto joint_sets = augment_detail::finger_joint_sets(hand);
        for (int j : joint_sets.at(2))
            REQUIRE(out.grasps[0].hands[0].q[static_cast<size_t>(j)] ==
                    p.rec.grasps[0].hands[0].q[static_cast<size_t>(j)]);

        REQUIRE(worst_contact(out, factor) < 0.002);

        // articulation timeline: approach untouched, transport holds the new
        // closure, release still ends at the original open pose
        for (int f = 0; f < 20; ++f)
            REQUIRE(out.hands[0][static_cast<size_t>(f)].q ==
                    p.rec.hands[0][static_cast<size_t>(f)].q);
        for (int f = 30; f < 50; ++f)
            REQUIRE(out.hands[0][static_cast<size_t>(f)].q == out.grasps[0].hands[0].q);
        REQUIRE(out.hands[0][59].q == p.rec.hands[0][59].q);
        REQUIRE_NOTHROW(out.validate());
    }
}

TEST_CASE("scale identity and failure modes") {
    const auto& p = pipeline();
    const HandModelSpec& hand = testing::test_hand();

    SECTION("a unit factor is a bit-exact identity") {
        const DemoRecord out = augment_scale(p.rec, 1.0, hand, p.meshes);
        REQUIRE(out.object_scale == p.rec.object_scale);
        REQUIRE(out.grasps[0].hands[0].q == p.rec.grasps[0].hands[0].q);
        for (int f = 0; f < p.rec.timesteps(); ++f)
            REQUIRE(out.hands[0][static_cast<size_t>(f)].q ==
                    p.rec.hands[0][static_cast<size_t>(f)].q);
    }

    SECTION("an already-touching grasp keeps its joints verbatim") {
        const Pose rest = synthetic::pickplace_object_pose(p.params, 0);
        const TriMesh& local = p.fx.bundle.mesh_for(p.params.object_id);
        const GraspObject same = make_grasp_object(transform_mesh(rest, local));
        const auto qn = adjust_fingers_for_scale(hand, p.rec.grasps[0].hands[0].wrist,
                                                 p.rec.grasps[0].hands[0].q,
                                                 p.rec.grasps[0].contact_ids[0], same);
        REQUIRE(qn == p.rec.grasps[0].hands[0].q);
    }

    SECTION("invalid factors and missing assets are rejected") {
        REQUIRE_THROWS_AS(augment_scale(p.rec, 0.0, hand, p.meshes), InvariantViolation);
        REQUIRE_THROWS_AS(augment_scale(p.rec, -1.0, hand, p.meshes), InvariantViolation);
        REQUIRE_THROWS_AS(augment_scale(p.rec, 0.9, hand, {}), MissingAsset);
    }

    SECTION("unreachable rescales fail loudly in both directions") {
        // far below range: fingers saturate before touching the shrunk surface
        REQUIRE_THROWS_AS(augment_scale(p.rec, 0.5, hand, p.meshes), ContactUnreachable);
        // far above range: even the open hand penetrates the grown surface
        REQUIRE_THROWS_AS(augment_scale(p.rec, 3.0, hand, p.meshes), ContactUnreachable);
    }
}

TEST_CASE("finger joint sets are exclusive and skip shared joints") {
    const HandModelSpec& hand = testing::test_hand();
    const auto sets = augment_detail::finger_joint_sets(hand);
    REQUIRE(sets.size() == 3);

    std::set<int> seen;
    for (const auto& [finger, joints] : sets) {
        REQUIRE_FALSE(joints.empty());
        for (int j : joints) {
            REQUIRE(hand.joints[static_cast<size_t>(j)].name != "palm_flex");
            REQUIRE(seen.insert(j).second);  // disjoint across fingers
        }
    }
    // every thumb joint actuates only the thumb
    for (int j : sets.at(hand.thumb_finger))
        REQUIRE(hand.joints[static_cast<size_t>(j)].name.substr(0, 3) == "th_");
}

TEST_CASE("augmented demonstrations are bit-reproducible by seed and index") {
    const auto& p = pipeline();
    const HandModelSpec& hand = testing::test_hand();
    AugmentConfig cfg;
    cfg.seed = 99;

    const DemoRecord a = augment_record(p.rec, p.meshes, hand, cfg, 7);
    const DemoRecord b = augment_record(p.rec, p.meshes, hand, cfg, 7);
    REQUIRE(a.augment_seed == derive_seed(cfg.seed, 7));
    REQUIRE(b.augment_seed == a.augment_seed);

    REQUIRE(a.timesteps() == p.rec.timesteps());
    for (int f = 0; f < a.timesteps(); ++f) {
        for (int e = 0; e < 2; ++e) {
            REQUIRE(pose_bits_equal(
                a.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist,
                b.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist));
            REQUIRE(a.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q ==
                    b.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q);
        }
        REQUIRE(pose_bits_equal(a.object_poses[static_cast<size_t>(f)][0],
                                b.object_poses[static_cast<size_t>(f)][0]));
        REQUIRE(a.observations[static_cast<size_t>(f)].points ==
                b.observations[static_cast<size_t>(f)].points);
        REQUIRE(a.observations[static_cast<size_t>(f)].normals ==
                b.observations[static_cast<size_t>(f)].normals);
        // the rebuild preserves per-frame cardinality
        REQUIRE(a.observations[static_cast<size_t>(f)].points.size() ==
                p.rec.observations[static_cast<size_t>(f)].points.size());
    }
    REQUIRE(pose_bits_equal(a.camera_pose, b.camera_pose));
    REQUIRE_NOTHROW(a.validate());

    // a different index draws a different demonstration
    const DemoRecord c = augment_record(p.rec, p.meshes, hand, cfg, 8);
    REQUIRE(c.augment_seed != a.augment_seed);
    bool differs = false;
    for (int f = 0; f < a.timesteps() && !differs; ++f)
        differs = a.object_poses[static_cast<size_t>(f)][0].translation !=
                  c.object_poses[static_cast<size_t>(f)][0].translation;
    REQUIRE(differs);

    std::set<std::uint64_t> seeds;
    for (std::uint64_t i = 0; i < 64; ++i) seeds.insert(derive_seed(cfg.seed, i));
    REQUIRE(seeds.size() == 64);
}

TEST_CASE("an all-zero config reproduces the input record") {
    const auto& p = pipeline();
    const HandModelSpec& hand = testing::test_hand();
    AugmentConfig cfg;
    cfg.object_xy = 0.0;
    cfg.object_yaw = 0.0;
    cfg.camera_pos = 0.0;
    cfg.camera_rot = 0.0;
    cfg.p_drop = 0.0;
    cfg.sigma = 0.0;
    cfg.scale_lo = 1.0;
    cfg.scale_hi = 1.0;

    const DemoRecord out = augment_record(p.rec, p.meshes, hand, cfg, 3);
    REQUIRE(out.augment_seed == derive_seed(cfg.seed, 3));
    REQUIRE(out.object_scale == p.rec.object_scale);
    REQUIRE(pose_bits_equal(out.camera_pose, p.rec.camera_pose));
    for (int f = 0; f < p.rec.timesteps(); ++f) {
        for (int e = 0; e < 2; ++e) {
            REQUIRE(pose_bits_equal(
                out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist,
                p.rec.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].wrist));
            REQUIRE(out.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q ==
                    p.rec.hands[static_cast<size_t>(e)][static_cast<size_t>(f)].q);
        }
        REQUIRE(pose_bits_equal(out.object_poses[static_cast<size_t>(f)][0],
                                p.rec.object_poses[static_cast<size_t>(f)][0]));
        REQUIRE(out.observations[static_cast<size_t>(f)].points ==
                p.rec.observations[static_cast<size_t>(f)].points);
    }
}
