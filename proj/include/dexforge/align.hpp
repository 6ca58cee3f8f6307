#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dexforge/geom.hpp"
#include "dexforge/mesh.hpp"

namespace dexforge {

namespace align_detail {

inline std::int64_t cell_key(int ci, int cj) {
    return (static_cast<std::int64_t>(ci) << 32) ^ (static_cast<std::int64_t>(cj) & 0xffffffffll);
}

}  // namespace align_detail

// Vertices of `mesh` that survive an orthographic visibility pass along
// `view_dir`: vertices are binned into square raster cells perpendicular to
// the view and each occupied cell retains only the vertex nearest the
// camera. The raster grid is anchored at the projected vertex centroid,
// which makes the retained set invariant under translation of the mesh.
//
// If fewer than `min_retained` vertices survive, the pass reruns once with
// half the cell size (small meshes vs. coarse cells).
inline std::vector<int> visible_subset(const TriMesh& mesh, const Vec3& view_dir,
                                       double cell_size = 0.005, int min_retained = 50) {
    if (mesh.vertices.empty()) throw EmptyInput("visibility pass on empty mesh");
    if (cell_size <= 0.0) throw InvariantViolation("raster cell size must be positive");
    const Vec3 w = view_dir.normalized();
    const Mat3 basis = frame_from_z(w);
    const Vec3 u = basis.col(0), v = basis.col(1);

    const Vec3 centroid = mesh_vertex_centroid(mesh);
    const double cu = u.dot(centroid), cv = v.dot(centroid);

    auto run = [&](double cell) {
        // cell -> index of the nearest vertex seen so far
        std::unordered_map<std::int64_t, int> nearest;
        nearest.reserve(mesh.vertices.size() * 2);
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            const Vec3& p = mesh.vertices[i];
            const int ci = static_cast<int>(std::floor((u.dot(p) - cu) / cell));
            const int cj = static_cast<int>(std::floor((v.dot(p) - cv) / cell));
            const auto key = align_detail::cell_key(ci, cj);
            auto [it, fresh] = nearest.try_emplace(key, static_cast<int>(i));
            if (!fresh && w.dot(p) < w.dot(mesh.vertices[it->second]))
                it->second = static_cast<int>(i);
        }
        std::vector<int> keep;
        keep.reserve(nearest.size());
        for (const auto& [key, idx] : nearest) keep.push_back(idx);
        std::sort(keep.begin(), keep.end());
        return keep;
    };

    std::vector<int> keep = run(cell_size);
    if (static_cast<int>(keep.size()) < min_retained &&
        static_cast<int>(mesh.vertices.size()) >= min_retained)
        keep = run(0.5 * cell_size);
    return keep;
}

struct AlignResult {
    Vec3 translation = Vec3::Zero();  // applied to the mesh: mesh -> cloud frame
    double scale = 1.0;               // mesh principal axis / cloud principal axis
    std::vector<int> visible;         // retained vertex indices
};

// Center the mesh on the observed cloud, cull to the visible subset, center
// again, and read the metric scale off the principal-axis ratio between the
// visible template geometry and the observation.
inline AlignResult align_render_align(const TriMesh& mesh, const PointCloud& observed,
                                      const Vec3& view_dir, double cell_size = 0.005) {
    if (observed.points.empty()) throw EmptyInput("alignment against empty cloud");
    AlignResult out;
    out.visible = visible_subset(mesh, view_dir, cell_size);
    if (out.visible.size() < 2)
        throw DegenerateCloud("visibility pass retained fewer than 2 vertices");

    PointCloud visible_cloud;
    visible_cloud.points.reserve(out.visible.size());
    for (int idx : out.visible) visible_cloud.points.push_back(mesh.vertices[idx]);

    // Step 1 translates the full-mesh centroid onto the cloud; step 2
    // re-centers using only the visible subset. The visible set is
    // translation-invariant, so the net shift collapses to one expression.
    const Vec3 cloud_c = cloud_centroid(observed);
    out.translation = cloud_c - cloud_centroid(visible_cloud);

    const double cloud_axis = principal_axis_length(observed);
    if (cloud_axis <= 1e-12) throw DegenerateCloud("observed cloud has no extent");
    out.scale = principal_axis_length(visible_cloud) / cloud_axis;
    return out;
}

// Translation-only refinement for per-frame template fitting.
inline Vec3 refine_translation(const TriMesh& mesh, const PointCloud& observed,
                               const Vec3& view_dir, double cell_size = 0.005) {
    return align_render_align(mesh, observed, view_dir, cell_size).translation;
}

struct WorldFrame {
    Pose transform;             // p_world = transform.apply(p_camera)
    Vec3 table_normal = Vec3::UnitZ();  // in camera coordinates
    double table_offset = 0.0;  // table plane: table_normal . p == table_offset
    double scale = 1.0;         // metric scale applied before the transform
};

// Gravity-aligned workspace frame from one observed scene:
//   z: table plane normal, signed toward the camera origin;
//   x: direction from the hands' midpoint toward the camera, projected into
//      the hands' perpendicular-bisector plane and then flattened onto the
//      table plane (workspace "+x faces the viewer" convention);
//   y: right-handed completion;
//   origin: the first-frame object AABB center lands at (workspace_x, 0, h),
//      h being its height above the table, i.e. the table surface is z = 0.
inline WorldFrame build_world_frame(const PointCloud& table_cloud, const Vec3& left_hand,
                                    const Vec3& right_hand,
                                    const std::vector<const PointCloud*>& object_clouds,
                                    const std::vector<const TriMesh*>& object_meshes,
                                    double workspace_x) {
    WorldFrame out;
    out.table_normal = fit_plane_normal(table_cloud);
    out.table_offset = out.table_normal.dot(cloud_centroid(table_cloud));

    const Vec3 span = right_hand - left_hand;
    if (span.norm() <= 1e-3)
        throw DegenerateHands("hand positions coincide; world x is undefined");
    const Vec3 u = span.normalized();
    const Vec3 mid = 0.5 * (left_hand + right_hand);
    Vec3 toward_camera = -mid;
    toward_camera -= toward_camera.dot(u) * u;            // into the bisector plane
    Vec3 x = toward_camera - toward_camera.dot(out.table_normal) * out.table_normal;
    if (x.norm() <= 1e-6)
        throw DegenerateHands("hand bisector direction is parallel to the table normal");
    x.normalize();
    const Vec3 z = out.table_normal;
    const Vec3 y = z.cross(x);

    Mat3 rot;
    rot.row(0) = x;
    rot.row(1) = y;
    rot.row(2) = z;
    out.transform.rotation = canonical_quat(Quat(rot));

    const Vec3 c = aabb_center(object_clouds, object_meshes);
    const double height = z.dot(c) - out.table_offset;
    out.transform.translation = Vec3(workspace_x, 0.0, height) - rot * c;
    return out;
}

}  // namespace dexforge
