#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "dexforge/align.hpp"
#include "dexforge/hull.hpp"
#include "dexforge/mesh.hpp"
#include "dexforge/rng.hpp"

using namespace dexforge;

TEST_CASE("visibility raster culls an occluded parallel square") {
    TriMesh m;
    // Near square at z=1, far square at z=2, identical footprints.
    for (double z : {1.0, 2.0}) {
        const int base = static_cast<int>(m.vertices.size());
        m.vertices.push_back(Vec3(0, 0, z));
        m.vertices.push_back(Vec3(1, 0, z));
        m.vertices.push_back(Vec3(1, 1, z));
        m.vertices.push_back(Vec3(0, 1, z));
        m.faces.push_back({base, base + 1, base + 2});
        m.faces.push_back({base, base + 2, base + 3});
    }
    const auto kept = visible_subset(m, Vec3(0, 0, 1), 0.1, 1);
    REQUIRE(kept == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("visibility raster keeps roughly the camera-facing hemisphere") {
    // View-axis-aligned sphere: every far-side vertex shares a raster cell
    // with its mirror on the near side, so the far side is culled exactly.
    const Vec3 center(0.3, -0.2, 5.0);
    const TriMesh sphere = make_uv_sphere(1.0, 96, 52, center);
    REQUIRE(sphere.vertices.size() > 4000);
    const double cell = 0.02;
    const auto kept = visible_subset(sphere, Vec3(0, 0, 1), cell);

    const double fraction =
        static_cast<double>(kept.size()) / static_cast<double>(sphere.vertices.size());
    CAPTURE(fraction);
    REQUIRE(fraction >= 0.4);
    REQUIRE(fraction <= 0.6);
    for (int idx : kept) REQUIRE(sphere.vertices[idx].z() <= center.z() + 1e-9);

    // Brute-force ray oracle: every retained vertex lies within one raster
    // cell of the first surface the camera ray meets.
    for (int idx : kept) {
        const Vec3& v = sphere.vertices[idx];
        const Vec3 origin = v - Vec3(0, 0, 10.0);
        const auto hit = ray_cast(sphere, origin, Vec3(0, 0, 1));
        if (hit) REQUIRE(10.0 - *hit <= cell + 1e-9);
    }
}

TEST_CASE("visibility raster halves the cell when too little survives") {
    const TriMesh small = make_uv_sphere(0.01, 16, 12);
    // 5 mm cells on a 1 cm sphere leave a handful of occupied cells; the
    // retry at 2.5 mm must recover more of the near side.
    const auto coarse = visible_subset(small, Vec3(0, 0, 1), 0.005, 1);
    const auto refined = visible_subset(small, Vec3(0, 0, 1), 0.005, 50);
    REQUIRE(refined.size() > coarse.size());
}

TEST_CASE("translation refinement recovers an exact offset") {
    const TriMesh mesh = make_uv_sphere(0.09, 24, 16, Vec3(0.2, 0.1, 0.9));
    const auto vis = visible_subset(mesh, Vec3(0, 0, 1));
    PointCloud observed;
    for (int idx : vis) observed.points.push_back(mesh.vertices[idx] + Vec3(0.1, 0, 0));
    const Vec3 t = refine_translation(mesh, observed, Vec3(0, 0, 1));
    REQUIRE((t - Vec3(0.1, 0, 0)).norm() < 1e-6);
}

TEST_CASE("scale recovery is exactly inverse to cloud scaling") {
    const TriMesh mesh = make_uv_sphere(0.09, 32, 24, Vec3(0, 0, 1.0));
    const auto vis = visible_subset(mesh, Vec3(0, 0, 1));
    PointCloud observed;
    for (int idx : vis) observed.points.push_back(mesh.vertices[idx]);

    const AlignResult unit = align_render_align(mesh, observed, Vec3(0, 0, 1));
    REQUIRE(unit.scale == Catch::Approx(1.0).margin(1e-9));

    // A capture at half metric depth doubles the recovered scale: template
    // axis 0.18 against an observed 0.09 reads s = 2.
    PointCloud shrunk = observed;
    for (auto& p : shrunk.points) p *= 0.5;
    const AlignResult two = align_render_align(mesh, shrunk, Vec3(0, 0, 1));
    REQUIRE(two.scale == Catch::Approx(2.0).margin(1e-9));

    PointCloud stretched = observed;
    for (auto& p : stretched.points) p *= 1.0 / 1.7;
    REQUIRE(align_render_align(mesh, stretched, Vec3(0, 0, 1)).scale ==
            Catch::Approx(1.7).margin(1e-9));
}

TEST_CASE("alignment rejects degenerate observations") {
    const TriMesh mesh = make_uv_sphere(0.09, 16, 12);
    REQUIRE_THROWS_AS(align_render_align(mesh, PointCloud{}, Vec3(0, 0, 1)), EmptyInput);
    PointCloud point;
    point.points.assign(5, Vec3(0.1, 0.2, 0.3));
    REQUIRE_THROWS_AS(align_render_align(mesh, point, Vec3(0, 0, 1)), DegenerateCloud);
}

namespace {

PointCloud table_patch(const Vec3& origin, const Vec3& du, const Vec3& dv, int n) {
    PointCloud cloud;
    for (int i = -n; i <= n; ++i)
        for (int j = -n; j <= n; ++j)
            cloud.points.push_back(origin + (0.02 * i) * du + (0.02 * j) * dv);
    return cloud;
}

}  // namespace

TEST_CASE("world frame on an already-aligned scene is the identity") {
    // Table surface at z = -0.1 (camera above), hands straddling y, objects
    // centered behind the origin on -x so that +x faces the viewer.
    const PointCloud table = table_patch(Vec3(-0.6, 0, -0.1), Vec3::UnitX(), Vec3::UnitY(), 12);
    const Vec3 left(-0.6, 0.2, 0.1), right(-0.6, -0.2, 0.1);
    PointCloud objects;
    objects.points = {Vec3(-0.7, -0.1, -0.08), Vec3(-0.5, 0.1, 0.0)};

    const WorldFrame wf = build_world_frame(table, left, right, {&objects}, {}, 0.6);
    REQUIRE(rotation_geodesic_angle(wf.transform.rotation, Quat::Identity()) < 1e-9);
    REQUIRE((wf.transform.apply(Vec3(-0.6, 0, -0.04)) - Vec3(0.6, 0, 0.06)).norm() < 1e-9);
    // Table surface maps onto the world z = 0 plane.
    for (const auto& p : table.points)
        REQUIRE(std::abs(wf.transform.apply(p).z()) < 1e-9);
    REQUIRE((wf.table_normal - Vec3(0, 0, 1)).norm() < 1e-9);
}

TEST_CASE("world frame rotation is equivariant under scene rotation") {
    Rng rng(77);
    const PointCloud table = table_patch(Vec3(-0.5, 0, -0.2), Vec3::UnitX(), Vec3::UnitY(), 10);
    const Vec3 left(-0.5, 0.25, 0.05), right(-0.45, -0.2, 0.08);
    PointCloud objects;
    objects.points = {Vec3(-0.6, -0.05, -0.1), Vec3(-0.4, 0.1, -0.05)};
    const WorldFrame base = build_world_frame(table, left, right, {&objects}, {}, 0.6);

    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        const Quat q(Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis.normalized()));
        Pose rot;
        rot.rotation = q;

        const PointCloud table_r = transform_cloud(rot, table);
        PointCloud objects_r = transform_cloud(rot, objects);
        const WorldFrame turned = build_world_frame(table_r, rot.apply(left),
                                                    rot.apply(right), {&objects_r}, {}, 0.6);
        const Quat composed = turned.transform.rotation * q;
        REQUIRE(rotation_geodesic_angle(composed, base.transform.rotation) < 1e-6);
        // Full transforms agree on scene points as well.
        for (const auto& p : objects.points)
            REQUIRE((turned.transform.apply(rot.apply(p)) - base.transform.apply(p)).norm() <
                    1e-6);
    }
}

TEST_CASE("world frame rejects degenerate hand layouts") {
    const PointCloud table = table_patch(Vec3(0, 0, 0.8), Vec3::UnitX(), Vec3::UnitY(), 10);
    PointCloud objects;
    objects.points = {Vec3(0.1, 0.1, 0.75)};

    REQUIRE_THROWS_AS(
        build_world_frame(table, Vec3(0.1, 0, 0.7), Vec3(0.1, 0, 0.7), {&objects}, {}, 0.6),
        DegenerateHands);
    // Camera straight above the hands' midpoint: the bisector direction is
    // parallel to the table normal and x is undefined.
    REQUIRE_THROWS_AS(
        build_world_frame(table, Vec3(-0.2, 0, 0.7), Vec3(0.2, 0, 0.7), {&objects}, {}, 0.6),
        DegenerateHands);

    PointCloud line;
    for (int i = 0; i < 30; ++i) line.points.push_back(Vec3(0.01 * i, 0, 0.8));
    REQUIRE_THROWS_AS(
        build_world_frame(line, Vec3(-0.2, 0.1, 0.7), Vec3(0.2, 0, 0.7), {&objects}, {}, 0.6),
        DegenerateCloud);
}
