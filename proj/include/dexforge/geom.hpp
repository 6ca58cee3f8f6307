#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dexforge/errors.hpp"

namespace dexforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// Flip a unit quaternion onto the canonical half-sphere: w > 0, or w == 0
// and the first nonzero vector component positive. q and -q encode the same
// rotation; serialization and comparisons rely on one representative.
inline Quat canonical_quat(Quat q) {
    const double* c = q.coeffs().data();  // x y z w
    double lead = c[3];
    for (int i = 2; lead == 0.0 && i >= 0; --i) lead = c[i];
    if (lead < 0.0) q.coeffs() = -q.coeffs();
    return q;
}

// Rigid transform: x_out = rotation * x_in + translation.
struct Pose {
    Quat rotation = Quat::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return Pose{}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 rotate(const Vec3& v) const { return rotation * v; }

    Pose inverse() const {
        Pose out;
        out.rotation = rotation.conjugate();
        out.translation = -(out.rotation * translation);
        return out;
    }

    Mat3 matrix() const { return rotation.toRotationMatrix(); }

    // Renormalize and canonicalize; composing long chains drifts otherwise.
    Pose normalized() const {
        Pose out = *this;
        out.rotation.normalize();
        out.rotation = canonical_quat(out.rotation);
        return out;
    }
};

// a then b applied as a(b(x)).
inline Pose pose_compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = canonical_quat((a.rotation * b.rotation).normalized());
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

// Geodesic angle between two rotations in [0, pi].
inline double rotation_geodesic_angle(const Quat& a, const Quat& b) {
    const Mat3 rel = a.toRotationMatrix() * b.toRotationMatrix().transpose();
    const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

inline double pose_geodesic_angle(const Pose& a, const Pose& b) {
    return rotation_geodesic_angle(a.rotation, b.rotation);
}

// Shortest-arc spherical interpolation. Exactly antipodal rotations admit
// two equal arcs; the tie breaks toward the sign making the second input
// lexicographically largest in (w, x, y, z), keeping the path deterministic.
// Endpoints are returned without interpolation arithmetic.
inline Quat quat_slerp(const Quat& a, const Quat& b, double u) {
    if (u <= 0.0) return canonical_quat(a);
    if (u >= 1.0) return canonical_quat(b);
    double dot = a.dot(b);
    double sign = 1.0;
    if (dot < 0.0) {
        sign = -1.0;
        dot = -dot;
    } else if (dot == 0.0) {
        const double lex[4] = {b.w(), b.x(), b.y(), b.z()};
        for (int i = 0; i < 4; ++i) {
            if (lex[i] != 0.0) {
                if (lex[i] < 0.0) sign = -1.0;
                break;
            }
        }
    }
    Quat out;
    const double omega = std::acos(std::min(dot, 1.0));
    if (omega < 1e-9) {
        out.coeffs() = (1.0 - u) * a.coeffs() + u * sign * b.coeffs();
    } else {
        const double s = std::sin(omega);
        out.coeffs() = std::sin((1.0 - u) * omega) / s * a.coeffs() +
                       std::sin(u * omega) / s * sign * b.coeffs();
    }
    out.normalize();
    return canonical_quat(out);
}

// Point cloud with optional per-point attributes. Either attribute vector is
// empty or has exactly one entry per point.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // unit vectors when present
    std::vector<Vec3> colors;   // rgb in [0,1] when present

    std::size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_colors() const { return !colors.empty(); }

    void validate() const {
        if (has_normals() && normals.size() != points.size())
            throw InvariantViolation("cloud normals count mismatches points");
        if (has_colors() && colors.size() != points.size())
            throw InvariantViolation("cloud colors count mismatches points");
        if (has_normals()) {
            for (std::size_t i = 0; i < normals.size(); ++i) {
                if (std::abs(normals[i].norm() - 1.0) > 1e-5)
                    throw InvariantViolation("cloud normal not unit length at index " +
                                             std::to_string(i));
            }
        }
    }
};

inline PointCloud transform_cloud(const Pose& t, const PointCloud& in) {
    PointCloud out = in;
    for (auto& p : out.points) p = t.apply(p);
    for (auto& n : out.normals) n = t.rotate(n);
    return out;
}

// Concatenation keeps an optional attribute only when both sides carry it;
// a half-attributed cloud would fail validate().
inline void append_cloud(PointCloud& dst, const PointCloud& src) {
    if (src.points.empty()) return;
    if (dst.points.empty()) {
        dst = src;
        return;
    }
    const bool normals = dst.has_normals() && src.has_normals();
    const bool colors = dst.has_colors() && src.has_colors();
    dst.points.insert(dst.points.end(), src.points.begin(), src.points.end());
    if (normals)
        dst.normals.insert(dst.normals.end(), src.normals.begin(), src.normals.end());
    else
        dst.normals.clear();
    if (colors)
        dst.colors.insert(dst.colors.end(), src.colors.begin(), src.colors.end());
    else
        dst.colors.clear();
}

// Indexed triangle mesh. Faces are CCW when viewed from outside for closed
// surfaces produced by this library.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }
};

inline TriMesh transform_mesh(const Pose& t, const TriMesh& in) {
    TriMesh out = in;
    for (auto& v : out.vertices) v = t.apply(v);
    return out;
}

// Axis-aligned bounding box accumulator.
struct Aabb {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

    bool empty() const { return lo.x() > hi.x(); }

    void extend(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void extend(const PointCloud& c) {
        for (const auto& p : c.points) extend(p);
    }
    void extend(const TriMesh& m) {
        for (const auto& v : m.vertices) extend(v);
    }

    Vec3 center() const {
        if (empty()) throw EmptyInput("aabb over no geometry");
        return 0.5 * (lo + hi);
    }
};

// Center of the AABB enclosing every listed geometry.
inline Vec3 aabb_center(const std::vector<const PointCloud*>& clouds,
                        const std::vector<const TriMesh*>& meshes = {}) {
    Aabb box;
    for (const auto* c : clouds)
        if (c) box.extend(*c);
    for (const auto* m : meshes)
        if (m) box.extend(*m);
    return box.center();
}

// Linear-interpolation percentile of a sample (numpy-style): position
// q*(n-1) between order statistics. q in [0, 1].
inline double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw EmptyInput("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    if (i + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(i);
    return values[i] + frac * (values[i + 1] - values[i]);
}

inline Vec3 cloud_centroid(const PointCloud& cloud) {
    if (cloud.points.empty()) throw EmptyInput("centroid of empty cloud");
    Vec3 c = Vec3::Zero();
    for (const auto& p : cloud.points) c += p;
    return c / static_cast<double>(cloud.points.size());
}

inline Mat3 cloud_covariance(const PointCloud& cloud, const Vec3& centroid) {
    Mat3 cov = Mat3::Zero();
    for (const auto& p : cloud.points) {
        const Vec3 d = p - centroid;
        cov += d * d.transpose();
    }
    return cov / static_cast<double>(cloud.points.size());
}

// Extent of the cloud along its dominant principal axis. For N >= 200 the
// extent is the 1st..99th percentile span of the projections (robust to
// stray points); below that every point counts.
inline double principal_axis_length(const PointCloud& cloud) {
    if (cloud.points.empty()) throw EmptyInput("principal axis of empty cloud");
    if (cloud.points.size() == 1) return 0.0;
    const Vec3 c = cloud_centroid(cloud);
    const Mat3 cov = cloud_covariance(cloud, c);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 axis = eig.eigenvectors().col(2);  // largest eigenvalue last

    std::vector<double> proj;
    proj.reserve(cloud.points.size());
    for (const auto& p : cloud.points) proj.push_back(axis.dot(p - c));
    if (cloud.points.size() >= 200)
        return percentile(proj, 0.99) - percentile(proj, 0.01);
    const auto [mn, mx] = std::minmax_element(proj.begin(), proj.end());
    return *mx - *mn;
}

// Least-squares plane normal (smallest-eigenvalue eigenvector of the
// covariance), oriented toward the camera origin: the viewer sits at the
// origin of the frame the cloud lives in, so the normal must leave the
// surface on the origin's side. Ties (plane through the origin) resolve to
// the canonical sign with negative z, matching a camera that looks along +z.
inline Vec3 fit_plane_normal(const PointCloud& cloud) {
    if (cloud.points.size() < 3) throw DegenerateCloud("plane fit needs >= 3 points");
    const Vec3 c = cloud_centroid(cloud);
    const Mat3 cov = cloud_covariance(cloud, c);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    // Collinear (or coincident) points: the two smallest eigenvalues vanish.
    const double scale = std::max(eig.eigenvalues()(2), 1e-30);
    if (eig.eigenvalues()(1) <= 1e-10 * scale)
        throw DegenerateCloud("plane fit on (near-)collinear cloud");
    Vec3 n = eig.eigenvectors().col(0).normalized();
    const double toward = n.dot(-c);
    if (toward < 0.0) {
        n = -n;
    } else if (toward == 0.0) {
        // Plane through the origin: prefer the normal facing back toward a
        // +z-looking camera; fall back to first-nonzero-positive.
        double lead = -n.z();
        if (lead == 0.0) lead = n.x() != 0.0 ? n.x() : n.y();
        if (lead < 0.0) n = -n;
    }
    return n;
}

// Cross-product matrix: skew(a) * b == a.cross(b).
inline Mat3 skew(const Vec3& a) {
    Mat3 m;
    m << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
    return m;
}

// SE(3) exponential of the twist (v, w): rotation exp([w]), translation V v
// with the standard left Jacobian V. Small angles fall back to the series.
inline Pose se3_exp(const Eigen::Matrix<double, 6, 1>& twist) {
    const Vec3 v = twist.head<3>();
    const Vec3 w = twist.tail<3>();
    const double theta = w.norm();
    const Mat3 W = skew(w);
    Mat3 R, V;
    if (theta < 1e-9) {
        R = Mat3::Identity() + W + 0.5 * W * W;
        V = Mat3::Identity() + 0.5 * W + W * W / 6.0;
    } else {
        const double t2 = theta * theta;
        R = Mat3::Identity() + std::sin(theta) / theta * W +
            (1.0 - std::cos(theta)) / t2 * W * W;
        V = Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * W +
            (theta - std::sin(theta)) / (t2 * theta) * W * W;
    }
    Pose out;
    out.rotation = canonical_quat(Quat(R));
    out.translation = V * v;
    return out;
}

// Rotation with the given z axis; x/y completed deterministically (useful
// for tests and seed placement). `z` need not be normalized.
inline Mat3 frame_from_z(const Vec3& z_axis) {
    const Vec3 z = z_axis.normalized();
    Vec3 ref = std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 x = (ref - ref.dot(z) * z).normalized();
    const Vec3 y = z.cross(x);
    Mat3 m;
    m.col(0) = x;
    m.col(1) = y;
    m.col(2) = z;
    return m;
}

}  // namespace dexforge
