#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"

namespace dexforge {

struct HandLink {
    std::string name;
    std::vector<std::pair<Vec3, double>> spheres;  // centre (link frame), radius
};

struct HandJoint {
    std::string name;
    int parent = -1;
    int child = -1;
    Vec3 axis = Vec3::UnitZ();  // unit, in parent-of-rotation frame
    Pose origin;                // fixed transform parent link -> joint frame
    double lower = 0.0;
    double upper = 0.0;
};

struct HandContact {
    std::string name;
    int link = -1;
    int finger = -1;
    Vec3 position = Vec3::Zero();  // link frame
    Vec3 normal = Vec3::UnitX();   // link frame, unit, points out of the pad
};

struct HandModelSpec {
    std::string name;
    int num_fingers = 0;
    int thumb_finger = -1;  // -1 when the hand has no designated thumb
    Vec3 palm_axis = Vec3::UnitX();
    Vec3 palm_center = Vec3::Zero();
    std::vector<double> open_q;
    std::vector<HandLink> links;
    std::vector<HandJoint> joints;
    std::vector<HandContact> contacts;

    // joint indices from the root to each link, in actuation order
    std::vector<std::vector<int>> link_chain;

    int joint_count() const { return static_cast<int>(joints.size()); }

    int link_index(const std::string& link_name) const {
        for (size_t i = 0; i < links.size(); ++i)
            if (links[i].name == link_name) return static_cast<int>(i);
        throw InvariantViolation("unknown link: " + link_name);
    }

    void finalize() {
        if (links.empty()) throw InvariantViolation("hand has no links");
        std::vector<int> incoming(links.size(), -1);
        for (size_t j = 0; j < joints.size(); ++j) {
            const HandJoint& jt = joints[j];
            if (jt.parent < 0 || jt.parent >= static_cast<int>(links.size()) || jt.child <= 0 ||
                jt.child >= static_cast<int>(links.size()))
                throw InvariantViolation("joint " + jt.name + " references invalid links");
            if (jt.parent >= jt.child)
                throw InvariantViolation("joint " + jt.name + " breaks topological link order");
            if (incoming[jt.child] != -1)
                throw InvariantViolation("link " + links[jt.child].name + " has two parents");
            if (std::abs(jt.axis.norm() - 1.0) > 1e-6)
                throw InvariantViolation("joint " + jt.name + " axis is not unit length");
            if (jt.lower > jt.upper)
                throw InvariantViolation("joint " + jt.name + " has inverted limits");
            incoming[jt.child] = static_cast<int>(j);
        }
        for (size_t l = 1; l < links.size(); ++l)
            if (incoming[l] == -1)
                throw InvariantViolation("link " + links[l].name + " is not attached");
        if (open_q.size() != joints.size())
            throw InvariantViolation("open_q size does not match joint count");
        for (size_t j = 0; j < joints.size(); ++j)
            if (open_q[j] < joints[j].lower - 1e-9 || open_q[j] > joints[j].upper + 1e-9)
                throw InvariantViolation("open_q violates limits at joint " + joints[j].name);
        for (const HandContact& c : contacts) {
            if (c.link < 0 || c.link >= static_cast<int>(links.size()))
                throw InvariantViolation("contact " + c.name + " references invalid link");
            if (c.finger < 0 || c.finger >= num_fingers)
                throw InvariantViolation("contact " + c.name + " references invalid finger");
            if (std::abs(c.normal.norm() - 1.0) > 1e-6)
                throw InvariantViolation("contact " + c.name + " normal is not unit length");
        }
        if (std::abs(palm_axis.norm() - 1.0) > 1e-6)
            throw InvariantViolation("palm_axis is not unit length");
        link_chain.assign(links.size(), {});
        for (size_t l = 1; l < links.size(); ++l) {
            const HandJoint& jt = joints[incoming[l]];
            link_chain[l] = link_chain[jt.parent];
            link_chain[l].push_back(incoming[l]);
        }
    }
};

// Forward kinematics snapshot: world link poses plus per-joint world axis and
// rotation-centre, enough to assemble analytic Jacobians.
struct KinematicsCache {
    const HandModelSpec* model = nullptr;
    Pose wrist;
    std::vector<double> q;
    std::vector<Pose> link_poses;
    std::vector<Vec3> joint_axis_world;
    std::vector<Vec3> joint_origin_world;

    Vec3 contact_position(int contact) const {
        const HandContact& c = model->contacts[contact];
        return link_poses[c.link].apply(c.position);
    }
    Vec3 contact_normal(int contact) const {
        const HandContact& c = model->contacts[contact];
        return link_poses[c.link].rotate(c.normal);
    }
    Vec3 palm_axis_world() const { return wrist.rotate(model->palm_axis); }
    Vec3 palm_center_world() const { return wrist.apply(model->palm_center); }
};

inline KinematicsCache forward_kinematics(const HandModelSpec& model, const Pose& wrist,
                                          const std::vector<double>& q) {
    if (q.size() != model.joints.size())
        throw InvariantViolation("joint vector size does not match hand model");
    for (size_t j = 0; j < q.size(); ++j)
        if (q[j] < model.joints[j].lower - 1e-6 || q[j] > model.joints[j].upper + 1e-6)
            throw JointLimit("joint " + model.joints[j].name + " out of range");
    KinematicsCache cache;
    cache.model = &model;
    cache.wrist = wrist;
    cache.q = q;
    cache.link_poses.assign(model.links.size(), Pose{});
    cache.link_poses[0] = wrist;
    cache.joint_axis_world.resize(model.joints.size());
    cache.joint_origin_world.resize(model.joints.size());
    for (size_t j = 0; j < model.joints.size(); ++j) {
        const HandJoint& jt = model.joints[j];
        const Pose joint_frame = pose_compose(cache.link_poses[jt.parent], jt.origin);
        cache.joint_axis_world[j] = joint_frame.rotate(jt.axis);
        cache.joint_origin_world[j] = joint_frame.translation;
        Pose spin;
        spin.rotation = Quat(Eigen::AngleAxisd(q[j], jt.axis));
        cache.link_poses[jt.child] = pose_compose(joint_frame, spin);
    }
    return cache;
}

// 3 x J Jacobian of a world point rigidly attached to `link` w.r.t. joint
// angles; columns outside the link's kinematic chain are zero.
inline Eigen::Matrix3Xd point_jacobian_q(const KinematicsCache& cache, int link,
                                         const Vec3& world_point) {
    Eigen::Matrix3Xd jac = Eigen::Matrix3Xd::Zero(3, cache.model->joint_count());
    for (int j : cache.model->link_chain[link])
        jac.col(j) = cache.joint_axis_world[j].cross(world_point - cache.joint_origin_world[j]);
    return jac;
}

// Same for a direction vector attached to `link` (translation-free).
inline Eigen::Matrix3Xd direction_jacobian_q(const KinematicsCache& cache, int link,
                                             const Vec3& world_dir) {
    Eigen::Matrix3Xd jac = Eigen::Matrix3Xd::Zero(3, cache.model->joint_count());
    for (int j : cache.model->link_chain[link])
        jac.col(j) = cache.joint_axis_world[j].cross(world_dir);
    return jac;
}

inline std::vector<std::pair<Vec3, double>> collision_spheres_world(
    const KinematicsCache& cache) {
    std::vector<std::pair<Vec3, double>> out;
    for (size_t l = 0; l < cache.model->links.size(); ++l)
        for (const auto& [center, radius] : cache.model->links[l].spheres)
            out.emplace_back(cache.link_poses[l].apply(center), radius);
    return out;
}

inline void clamp_to_limits(const HandModelSpec& model, std::vector<double>& q) {
    for (size_t j = 0; j < q.size(); ++j)
        q[j] = std::clamp(q[j], model.joints[j].lower, model.joints[j].upper);
}

// Names of joints whose value leaves [lower, upper] by more than `tol`.
inline std::vector<std::string> limit_violations(const HandModelSpec& model,
                                                 const std::vector<double>& q,
                                                 double tol = 1e-9) {
    if (q.size() != model.joints.size())
        throw InvariantViolation("joint vector size does not match hand model");
    std::vector<std::string> bad;
    for (size_t j = 0; j < q.size(); ++j)
        if (q[j] < model.joints[j].lower - tol || q[j] > model.joints[j].upper + tol)
            bad.push_back(model.joints[j].name);
    return bad;
}

namespace hand_detail {

inline Vec3 vec3_field(const nlohmann::json& node, const char* key) {
    if (!node.contains(key) || !node[key].is_array() || node[key].size() != 3)
        throw FormatError(std::string("hand model: expected 3-vector field '") + key + "'");
    return Vec3(node[key][0].get<double>(), node[key][1].get<double>(),
                node[key][2].get<double>());
}

}  // namespace hand_detail

inline HandModelSpec hand_from_json(const nlohmann::json& doc) {
    using hand_detail::vec3_field;
    HandModelSpec model;
    try {
        model.name = doc.at("name").get<std::string>();
        model.num_fingers = doc.at("num_fingers").get<int>();
        model.thumb_finger = doc.value("thumb_finger", -1);
        model.palm_axis = vec3_field(doc, "palm_axis").normalized();
        model.palm_center = vec3_field(doc, "palm_center");
        model.open_q = doc.at("open_q").get<std::vector<double>>();

        std::map<std::string, int> link_ids;
        for (const auto& node : doc.at("links")) {
            HandLink link;
            link.name = node.at("name").get<std::string>();
            if (link_ids.count(link.name))
                throw FormatError("hand model: duplicate link " + link.name);
            for (const auto& s : node.value("spheres", nlohmann::json::array())) {
                if (!s.is_array() || s.size() != 4)
                    throw FormatError("hand model: sphere entries are [x, y, z, r]");
                link.spheres.emplace_back(
                    Vec3(s[0].get<double>(), s[1].get<double>(), s[2].get<double>()),
                    s[3].get<double>());
            }
            link_ids[link.name] = static_cast<int>(model.links.size());
            model.links.push_back(std::move(link));
        }

        auto lookup = [&](const std::string& name) {
            auto it = link_ids.find(name);
            if (it == link_ids.end()) throw FormatError("hand model: unknown link " + name);
            return it->second;
        };
        for (const auto& node : doc.at("joints")) {
            HandJoint joint;
            joint.name = node.at("name").get<std::string>();
            joint.parent = lookup(node.at("parent").get<std::string>());
            joint.child = lookup(node.at("child").get<std::string>());
            joint.axis = vec3_field(node, "axis");
            joint.origin.translation = vec3_field(node, "origin");
            if (node.contains("origin_quat")) {
                const auto& qn = node["origin_quat"];
                if (!qn.is_array() || qn.size() != 4)
                    throw FormatError("hand model: origin_quat is [w, x, y, z]");
                joint.origin.rotation =
                    canonical_quat(Quat(qn[0].get<double>(), qn[1].get<double>(),
                                        qn[2].get<double>(), qn[3].get<double>())
                                       .normalized());
            }
            const auto& lim = node.at("limits");
            if (!lim.is_array() || lim.size() != 2)
                throw FormatError("hand model: limits are [lower, upper]");
            joint.lower = lim[0].get<double>();
            joint.upper = lim[1].get<double>();
            model.joints.push_back(std::move(joint));
        }

        for (const auto& node : doc.at("contacts")) {
            HandContact contact;
            contact.name = node.at("name").get<std::string>();
            contact.link = lookup(node.at("link").get<std::string>());
            contact.finger = node.at("finger").get<int>();
            contact.position = vec3_field(node, "position");
            contact.normal = vec3_field(node, "normal").normalized();
            model.contacts.push_back(std::move(contact));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("hand model: ") + e.what());
    }
    model.finalize();
    return model;
}

inline HandModelSpec hand_from_stream(std::istream& in) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("hand model: ") + e.what());
    }
    return hand_from_json(doc);
}

}  // namespace dexforge
