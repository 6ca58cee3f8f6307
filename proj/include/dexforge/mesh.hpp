#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dexforge/geom.hpp"
#include "dexforge/rng.hpp"

namespace dexforge {

inline Vec3 mesh_vertex_centroid(const TriMesh& mesh) {
    if (mesh.vertices.empty()) throw EmptyInput("centroid of empty mesh");
    Vec3 c = Vec3::Zero();
    for (const auto& v : mesh.vertices) c += v;
    return c / static_cast<double>(mesh.vertices.size());
}

inline TriMesh scale_mesh_about(const TriMesh& mesh, double factor, const Vec3& center) {
    TriMesh out = mesh;
    for (auto& v : out.vertices) v = center + factor * (v - center);
    return out;
}

inline Vec3 face_normal(const TriMesh& mesh, std::size_t face) {
    const auto& f = mesh.faces[face];
    const Vec3 a = mesh.vertices[f[0]];
    return (mesh.vertices[f[1]] - a).cross(mesh.vertices[f[2]] - a).normalized();
}

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                      const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + w * (c - b);
    }

    const double denom = 1.0 / (va + vb + vc);
    return a + (vb * denom) * ab + (vc * denom) * ac;
}

struct SurfaceHit {
    Vec3 point;
    int face = -1;
    double distance = std::numeric_limits<double>::infinity();
};

// Unsigned distance from p to the mesh surface (brute force over faces;
// meshes in this library stay small enough that an acceleration structure
// would be dead weight).
inline SurfaceHit closest_surface_point(const TriMesh& mesh, const Vec3& p) {
    if (mesh.faces.empty()) throw EmptyInput("closest point on empty mesh");
    SurfaceHit hit;
    double best2 = std::numeric_limits<double>::infinity();
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto& f = mesh.faces[fi];
        const Vec3 q = closest_point_on_triangle(p, mesh.vertices[f[0]],
                                                 mesh.vertices[f[1]], mesh.vertices[f[2]]);
        const double d2 = (p - q).squaredNorm();
        if (d2 < best2) {
            best2 = d2;
            hit.point = q;
            hit.face = static_cast<int>(fi);
        }
    }
    hit.distance = std::sqrt(best2);
    return hit;
}

// Moeller-Trumbore ray/triangle; returns nearest hit parameter t >= 0.
inline std::optional<double> ray_cast(const TriMesh& mesh, const Vec3& origin,
                                      const Vec3& dir) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices[f[0]];
        const Vec3 e1 = mesh.vertices[f[1]] - a;
        const Vec3 e2 = mesh.vertices[f[2]] - a;
        const Vec3 h = dir.cross(e2);
        const double det = e1.dot(h);
        if (std::abs(det) < 1e-14) continue;
        const double inv = 1.0 / det;
        const Vec3 s = origin - a;
        const double u = inv * s.dot(h);
        if (u < -1e-12 || u > 1.0 + 1e-12) continue;
        const Vec3 q = s.cross(e1);
        const double v = inv * dir.dot(q);
        if (v < -1e-12 || u + v > 1.0 + 1e-12) continue;
        const double t = inv * e2.dot(q);
        if (t >= 0.0 && t < best) best = t;
    }
    if (best == std::numeric_limits<double>::infinity()) return std::nullopt;
    return best;
}

// Area-weighted uniform surface samples; normals are face normals.
inline PointCloud sample_mesh_surface(const TriMesh& mesh, std::size_t count, Rng& rng,
                                      bool with_normals = true) {
    if (mesh.faces.empty()) throw EmptyInput("sampling an empty mesh");
    std::vector<double> cum(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        total += 0.5 * e1.cross(e2).norm();
        cum[i] = total;
    }
    if (total <= 0.0) throw DegenerateCloud("mesh has zero surface area");

    PointCloud out;
    out.points.reserve(count);
    if (with_normals) out.normals.reserve(count);
    for (std::size_t s = 0; s < count; ++s) {
        const double pick = rng.uniform01() * total;
        const std::size_t fi = static_cast<std::size_t>(
            std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin());
        const auto& f = mesh.faces[std::min(fi, mesh.faces.size() - 1)];
        double r1 = std::sqrt(rng.uniform01());
        double r2 = rng.uniform01();
        const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
        out.points.push_back(wa * mesh.vertices[f[0]] + wb * mesh.vertices[f[1]] +
                             wc * mesh.vertices[f[2]]);
        if (with_normals)
            out.normals.push_back(face_normal(mesh, std::min(fi, mesh.faces.size() - 1)));
    }
    return out;
}

// --- primitive meshes (fixtures, synthetic objects) ---

inline TriMesh make_box(const Vec3& extents, const Vec3& center = Vec3::Zero()) {
    const Vec3 h = 0.5 * extents;
    TriMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back(center + Vec3((i & 1) ? h.x() : -h.x(),
                                           (i & 2) ? h.y() : -h.y(),
                                           (i & 4) ? h.z() : -h.z()));
    const int quads[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                             {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

inline TriMesh make_uv_sphere(double radius, int slices = 24, int stacks = 16,
                              const Vec3& center = Vec3::Zero()) {
    TriMesh m;
    m.vertices.push_back(center + Vec3(0, 0, radius));
    for (int st = 1; st < stacks; ++st) {
        const double phi = M_PI * st / stacks;
        for (int sl = 0; sl < slices; ++sl) {
            const double th = 2.0 * M_PI * sl / slices;
            m.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(th),
                                                        std::sin(phi) * std::sin(th),
                                                        std::cos(phi)));
        }
    }
    m.vertices.push_back(center + Vec3(0, 0, -radius));
    const int bottom = static_cast<int>(m.vertices.size()) - 1;
    auto ring = [&](int st, int sl) { return 1 + (st - 1) * slices + (sl % slices); };
    for (int sl = 0; sl < slices; ++sl) m.faces.push_back({0, ring(1, sl), ring(1, sl + 1)});
    for (int st = 1; st < stacks - 1; ++st)
        for (int sl = 0; sl < slices; ++sl) {
            m.faces.push_back({ring(st, sl), ring(st + 1, sl), ring(st + 1, sl + 1)});
            m.faces.push_back({ring(st, sl), ring(st + 1, sl + 1), ring(st, sl + 1)});
        }
    for (int sl = 0; sl < slices; ++sl)
        m.faces.push_back({bottom, ring(stacks - 1, sl + 1), ring(stacks - 1, sl)});
    return m;
}

inline TriMesh make_cylinder(double radius, double height, int segments = 32,
                             const Vec3& center = Vec3::Zero()) {
    TriMesh m;
    const double hz = 0.5 * height;
    for (int i = 0; i < segments; ++i) {
        const double th = 2.0 * M_PI * i / segments;
        const Vec3 rim(radius * std::cos(th), radius * std::sin(th), 0.0);
        m.vertices.push_back(center + rim + Vec3(0, 0, -hz));
        m.vertices.push_back(center + rim + Vec3(0, 0, hz));
    }
    m.vertices.push_back(center + Vec3(0, 0, -hz));
    m.vertices.push_back(center + Vec3(0, 0, hz));
    const int cb = 2 * segments, ct = 2 * segments + 1;
    for (int i = 0; i < segments; ++i) {
        const int j = (i + 1) % segments;
        const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
        m.faces.push_back({b0, b1, t1});
        m.faces.push_back({b0, t1, t0});
        m.faces.push_back({cb, b1, b0});
        m.faces.push_back({ct, t0, t1});
    }
    return m;
}

}  // namespace dexforge
