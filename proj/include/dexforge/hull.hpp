#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dexforge/geom.hpp"

namespace dexforge {

namespace hull_detail {

struct Face {
    int v[3];
    int nb[3];  // nb[k] = face across edge (v[k], v[(k+1)%3])
    Vec3 n;     // outward unit normal
    double d;   // plane offset: n.x == d on the plane
    bool alive = true;
    std::vector<int> conflicts;  // input points strictly outside this face

    double dist(const Vec3& p) const { return n.dot(p) - d; }
};

inline int edge_slot(const Face& f, int a, int b) {
    for (int k = 0; k < 3; ++k) {
        const int u = f.v[k], w = f.v[(k + 1) % 3];
        if ((u == a && w == b) || (u == b && w == a)) return k;
    }
    return -1;
}

}  // namespace hull_detail

// 3D convex hull (quickhull). Returns a watertight, outward-oriented
// triangulation whose vertex list contains exactly the extreme input points.
// Throws DegenerateCloud when the input is coplanar, collinear or empty.
inline TriMesh convex_hull(const std::vector<Vec3>& points) {
    using hull_detail::Face;
    const int n = static_cast<int>(points.size());
    if (n < 4) throw DegenerateCloud("convex hull needs >= 4 points");

    Aabb box;
    for (const auto& p : points) box.extend(p);
    const double diag = (box.hi - box.lo).norm();
    const double eps = std::max(1e-12, 1e-10 * diag);

    // Initial simplex: farthest pair among axis extremes, farthest from the
    // line, farthest from the plane.
    int e[6] = {0, 0, 0, 0, 0, 0};
    for (int i = 1; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            if (points[i][a] < points[e[a]][a]) e[a] = i;
            if (points[i][a] > points[e[3 + a]][a]) e[3 + a] = i;
        }
    }
    int i0 = e[0], i1 = e[3];
    double best = -1.0;
    for (int a = 0; a < 6; ++a)
        for (int b = a + 1; b < 6; ++b) {
            const double d2 = (points[e[a]] - points[e[b]]).squaredNorm();
            if (d2 > best) {
                best = d2;
                i0 = e[a];
                i1 = e[b];
            }
        }
    if (std::sqrt(std::max(best, 0.0)) <= eps)
        throw DegenerateCloud("convex hull of coincident points");

    const Vec3 dir = (points[i1] - points[i0]).normalized();
    int i2 = -1;
    best = eps;
    for (int i = 0; i < n; ++i) {
        const Vec3 r = points[i] - points[i0];
        const double d = (r - r.dot(dir) * dir).norm();
        if (d > best) {
            best = d;
            i2 = i;
        }
    }
    if (i2 < 0) throw DegenerateCloud("convex hull of collinear points");

    Vec3 pn = (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
    int i3 = -1;
    best = eps;
    for (int i = 0; i < n; ++i) {
        const double d = std::abs(pn.dot(points[i] - points[i0]));
        if (d > best) {
            best = d;
            i3 = i;
        }
    }
    if (i3 < 0) throw DegenerateCloud("convex hull of coplanar points");

    const Vec3 interior =
        0.25 * (points[i0] + points[i1] + points[i2] + points[i3]);

    std::vector<Face> faces;
    auto make_face = [&](int a, int b, int c) {
        Face f;
        Vec3 fn = (points[b] - points[a]).cross(points[c] - points[a]);
        if (fn.dot(interior - points[a]) > 0.0) {
            std::swap(b, c);
            fn = -fn;
        }
        f.v[0] = a;
        f.v[1] = b;
        f.v[2] = c;
        f.n = fn.normalized();
        f.d = f.n.dot(points[a]);
        f.nb[0] = f.nb[1] = f.nb[2] = -1;
        faces.push_back(f);
        return static_cast<int>(faces.size() - 1);
    };

    make_face(i0, i1, i2);
    make_face(i0, i1, i3);
    make_face(i0, i2, i3);
    make_face(i1, i2, i3);
    for (int a = 0; a < 4; ++a)
        for (int k = 0; k < 3; ++k) {
            const int u = faces[a].v[k], w = faces[a].v[(k + 1) % 3];
            for (int b = 0; b < 4; ++b) {
                if (b == a) continue;
                if (hull_detail::edge_slot(faces[b], u, w) >= 0) faces[a].nb[k] = b;
            }
        }

    // Seed conflict lists.
    for (int i = 0; i < n; ++i) {
        if (i == i0 || i == i1 || i == i2 || i == i3) continue;
        double dmax = eps;
        int fbest = -1;
        for (int fi = 0; fi < 4; ++fi) {
            const double d = faces[fi].dist(points[i]);
            if (d > dmax) {
                dmax = d;
                fbest = fi;
            }
        }
        if (fbest >= 0) faces[fbest].conflicts.push_back(i);
    }

    std::vector<int> pending;
    for (int fi = 0; fi < 4; ++fi)
        if (!faces[fi].conflicts.empty()) pending.push_back(fi);

    std::vector<int> visible, stack;
    while (!pending.empty()) {
        const int f0 = pending.back();
        pending.pop_back();
        if (!faces[f0].alive || faces[f0].conflicts.empty()) continue;

        int apex = faces[f0].conflicts[0];
        double dmax = faces[f0].dist(points[apex]);
        for (int idx : faces[f0].conflicts) {
            const double d = faces[f0].dist(points[idx]);
            if (d > dmax) {
                dmax = d;
                apex = idx;
            }
        }
        const Vec3& p = points[apex];

        // Flood-fill the faces visible from the apex.
        visible.clear();
        stack.assign(1, f0);
        std::vector<std::uint8_t> seen(faces.size(), 0);
        seen[f0] = 1;
        while (!stack.empty()) {
            const int fi = stack.back();
            stack.pop_back();
            visible.push_back(fi);
            for (int k = 0; k < 3; ++k) {
                const int nb = faces[fi].nb[k];
                if (nb < 0 || seen[nb] || !faces[nb].alive) continue;
                if (faces[nb].dist(p) > eps) {
                    seen[nb] = 1;
                    stack.push_back(nb);
                }
            }
        }

        // Horizon edges: visible face edge whose neighbor stays.
        struct HorizonEdge {
            int a, b, outside;
        };
        std::vector<HorizonEdge> horizon;
        std::vector<int> orphans;
        for (int fi : visible) {
            Face& f = faces[fi];
            f.alive = false;
            for (int idx : f.conflicts)
                if (idx != apex) orphans.push_back(idx);
            f.conflicts.clear();
            for (int k = 0; k < 3; ++k) {
                const int nb = f.nb[k];
                if (nb >= 0 && faces[nb].alive && !seen[nb])
                    horizon.push_back({f.v[k], f.v[(k + 1) % 3], nb});
            }
        }

        // New cone of faces from the horizon to the apex.
        std::map<std::pair<int, int>, std::pair<int, int>> open_edges;
        std::vector<int> fresh;
        for (const auto& h : horizon) {
            const int nf = make_face(h.a, h.b, apex);
            fresh.push_back(nf);
            const int slot_out = hull_detail::edge_slot(faces[nf], h.a, h.b);
            faces[nf].nb[slot_out] = h.outside;
            const int back = hull_detail::edge_slot(faces[h.outside], h.a, h.b);
            faces[h.outside].nb[back] = nf;
            for (int k = 0; k < 3; ++k) {
                if (k == slot_out) continue;
                const int u = faces[nf].v[k], w = faces[nf].v[(k + 1) % 3];
                const auto key = std::minmax(u, w);
                auto it = open_edges.find(key);
                if (it == open_edges.end()) {
                    open_edges.emplace(key, std::make_pair(nf, k));
                } else {
                    faces[nf].nb[k] = it->second.first;
                    faces[it->second.first].nb[it->second.second] = nf;
                    open_edges.erase(it);
                }
            }
        }
        if (!open_edges.empty())
            throw InvariantViolation("convex hull horizon failed to close");

        // Re-home orphaned conflict points.
        for (int idx : orphans) {
            double dm = eps;
            int fbest = -1;
            for (int nf : fresh) {
                const double d = faces[nf].dist(points[idx]);
                if (d > dm) {
                    dm = d;
                    fbest = nf;
                }
            }
            if (fbest >= 0) faces[fbest].conflicts.push_back(idx);
        }
        for (int nf : fresh)
            if (!faces[nf].conflicts.empty()) pending.push_back(nf);
    }

    // Compact to the vertices referenced by live faces.
    std::vector<int> remap(points.size(), -1);
    TriMesh out;
    for (const auto& f : faces) {
        if (!f.alive) continue;
        std::array<int, 3> tri{};
        for (int k = 0; k < 3; ++k) {
            int& m = remap[f.v[k]];
            if (m < 0) {
                m = static_cast<int>(out.vertices.size());
                out.vertices.push_back(points[f.v[k]]);
            }
            tri[k] = m;
        }
        out.faces.push_back(tri);
    }
    return out;
}

inline TriMesh convex_hull(const PointCloud& cloud) { return convex_hull(cloud.points); }

// Half-space representation of a convex mesh: rows (nx, ny, nz, d) with
// n.x <= d inside.
struct HalfSpaces {
    std::vector<Eigen::Vector4d> planes;

    // Signed distance bound: negative inside, max-over-planes outside (a
    // lower bound on the true exterior distance, exact for face regions).
    double signed_distance(const Vec3& p) const {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& pl : planes)
            best = std::max(best, pl.head<3>().dot(p) - pl(3));
        return best;
    }

    bool contains(const Vec3& p, double tol = 0.0) const {
        return signed_distance(p) <= tol;
    }
};

inline HalfSpaces half_spaces(const TriMesh& hull) {
    HalfSpaces hs;
    hs.planes.reserve(hull.faces.size());
    for (const auto& f : hull.faces) {
        const Vec3 a = hull.vertices[f[0]];
        const Vec3 n =
            (hull.vertices[f[1]] - a).cross(hull.vertices[f[2]] - a).normalized();
        hs.planes.emplace_back(n.x(), n.y(), n.z(), n.dot(a));
    }
    return hs;
}

// Signed volume and volume centroid of a closed, outward-oriented mesh
// (divergence theorem over origin-rooted tetrahedra).
inline double mesh_volume(const TriMesh& mesh, Vec3* centroid = nullptr) {
    double vol = 0.0;
    Vec3 c = Vec3::Zero();
    for (const auto& f : mesh.faces) {
        const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]],
                   &d = mesh.vertices[f[2]];
        const double v = a.dot(b.cross(d)) / 6.0;
        vol += v;
        c += v * (a + b + d) / 4.0;
    }
    if (centroid) *centroid = vol != 0.0 ? Vec3(c / vol) : Vec3::Zero();
    return vol;
}

inline double mesh_surface_area(const TriMesh& mesh) {
    double area = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        area += 0.5 * e1.cross(e2).norm();
    }
    return area;
}

}  // namespace dexforge
