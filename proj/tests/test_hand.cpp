#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "dexforge/hand.hpp"
#include "dexforge/rng.hpp"
#include "support/fixtures.hpp"

using namespace dexforge;

namespace {

int contact_id(const HandModelSpec& m, const std::string& name) {
    for (size_t i = 0; i < m.contacts.size(); ++i)
        if (m.contacts[i].name == name) return static_cast<int>(i);
    FAIL("no contact named " << name);
    return -1;
}

std::vector<double> random_q(const HandModelSpec& m, Rng& rng, double margin = 0.0) {
    std::vector<double> q(m.joints.size());
    for (size_t j = 0; j < q.size(); ++j)
        q[j] = rng.uniform(m.joints[j].lower + margin, m.joints[j].upper - margin);
    return q;
}

Pose random_pose(Rng& rng) {
    Pose p;
    const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    p.rotation = canonical_quat(
        Quat(Eigen::AngleAxisd(rng.uniform(-M_PI, M_PI), axis.normalized())));
    p.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    return p;
}

}  // namespace

TEST_CASE("test hand loads with sixteen joints and three digits") {
    const HandModelSpec& hand = testing::test_hand();
    REQUIRE(hand.joint_count() == 16);
    REQUIRE(hand.links.size() == 17);
    REQUIRE(hand.num_fingers == 3);
    REQUIRE(hand.thumb_finger == 0);
    REQUIRE(hand.contacts.size() == 3);
    REQUIRE(hand.open_q.size() == 16);
}

TEST_CASE("forward kinematics matches the straight-pose chain sums") {
    const HandModelSpec& hand = testing::test_hand();
    const auto cache = forward_kinematics(hand, Pose{}, hand.open_q);

    const Vec3 idx_tip = cache.contact_position(contact_id(hand, "idx_tip"));
    REQUIRE((idx_tip - Vec3(0.0068, -0.025, 0.175)).norm() < 1e-12);
    REQUIRE((cache.contact_normal(contact_id(hand, "idx_tip")) - Vec3(1, 0, 0)).norm() < 1e-12);

    const Vec3 th_tip = cache.contact_position(contact_id(hand, "th_tip"));
    REQUIRE((th_tip - Vec3(0.097, 0.0, 0.0272)).norm() < 1e-12);
    REQUIRE((cache.contact_normal(contact_id(hand, "th_tip")) - Vec3(0, 0, 1)).norm() < 1e-12);

    REQUIRE((cache.palm_axis_world() - Vec3(1, 0, 0)).norm() < 1e-12);
    REQUIRE((cache.palm_center_world() - Vec3(0.015, 0, 0.045)).norm() < 1e-12);
}

TEST_CASE("a right-angle mcp bend folds the finger over the palm normal") {
    const HandModelSpec& hand = testing::test_hand();
    std::vector<double> q(16, 0.0);
    q[3] = M_PI / 2;  // idx_mcp
    const auto cache = forward_kinematics(hand, Pose{}, q);

    // Local +z maps to +x, local +x maps to -z about the knuckle at
    // (0, -0.025, 0.09): tip = knuckle + (0.065 + 0.02)x - 0.0068z.
    const Vec3 tip = cache.contact_position(contact_id(hand, "idx_tip"));
    REQUIRE((tip - Vec3(0.085, -0.025, 0.0832)).norm() < 1e-12);
    REQUIRE((cache.contact_normal(contact_id(hand, "idx_tip")) - Vec3(0, 0, -1)).norm() <
            1e-12);

    const auto spheres = collision_spheres_world(cache);
    // First idx_prox sphere sits 12 mm along the flexed segment.
    bool found = false;
    for (const auto& [c, r] : spheres)
        if (r == 0.009 && (c - Vec3(0.012, -0.025, 0.09)).norm() < 1e-12) found = true;
    REQUIRE(found);
}

TEST_CASE("kinematics commute with a rigid wrist transform") {
    const HandModelSpec& hand = testing::test_hand();
    Rng rng(404);
    for (int trial = 0; trial < 10; ++trial) {
        const auto q = random_q(hand, rng);
        const Pose wrist = random_pose(rng);
        const auto at_identity = forward_kinematics(hand, Pose{}, q);
        const auto moved = forward_kinematics(hand, wrist, q);
        for (size_t c = 0; c < hand.contacts.size(); ++c) {
            const int ci = static_cast<int>(c);
            REQUIRE((moved.contact_position(ci) -
                     wrist.apply(at_identity.contact_position(ci)))
                        .norm() < 1e-12);
            REQUIRE((moved.contact_normal(ci) -
                     wrist.rotate(at_identity.contact_normal(ci)))
                        .norm() < 1e-12);
        }
    }
}

TEST_CASE("analytic contact jacobians match central differences") {
    const HandModelSpec& hand = testing::test_hand();
    Rng rng(808);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
        // Interior draw: the FD probe must stay within joint limits.
        const auto q = random_q(hand, rng, 1e-3);
        const Pose wrist = random_pose(rng);
        const auto cache = forward_kinematics(hand, wrist, q);
        for (size_t c = 0; c < hand.contacts.size(); ++c) {
            const int ci = static_cast<int>(c);
            const int link = hand.contacts[c].link;
            const auto jac_p = point_jacobian_q(cache, link, cache.contact_position(ci));
            const auto jac_n = direction_jacobian_q(cache, link, cache.contact_normal(ci));
            for (int j = 0; j < hand.joint_count(); ++j) {
                auto qp = q, qm = q;
                qp[j] += h;
                qm[j] -= h;
                const auto cp = forward_kinematics(hand, wrist, qp);
                const auto cm = forward_kinematics(hand, wrist, qm);
                const Vec3 fd_p =
                    (cp.contact_position(ci) - cm.contact_position(ci)) / (2 * h);
                const Vec3 fd_n = (cp.contact_normal(ci) - cm.contact_normal(ci)) / (2 * h);
                REQUIRE((jac_p.col(j) - fd_p).norm() < 1e-6);
                REQUIRE((jac_n.col(j) - fd_n).norm() < 1e-6);
            }
        }
    }
}

TEST_CASE("limit helpers clamp and report by joint name") {
    const HandModelSpec& hand = testing::test_hand();
    std::vector<double> q(16, 0.0);
    q[3] = 2.0;   // idx_mcp above 1.8
    q[5] = -0.2;  // idx_dip below 0
    const auto bad = limit_violations(hand, q);
    REQUIRE(bad == std::vector<std::string>{"idx_mcp", "idx_dip"});

    clamp_to_limits(hand, q);
    REQUIRE(q[3] == 1.8);
    REQUIRE(q[5] == 0.0);
    REQUIRE(limit_violations(hand, q).empty());

    REQUIRE_THROWS_AS(limit_violations(hand, std::vector<double>(3, 0.0)),
                      InvariantViolation);
    REQUIRE_THROWS_AS(forward_kinematics(hand, Pose{}, std::vector<double>(3, 0.0)),
                      InvariantViolation);

    std::vector<double> over(16, 0.0);
    over[3] = 2.0;
    REQUIRE_THROWS_AS(forward_kinematics(hand, Pose{}, over), JointLimit);
}

TEST_CASE("malformed hand documents are rejected") {
    auto load = [](const std::string& text) {
        std::istringstream in(text);
        return hand_from_stream(in);
    };
    REQUIRE_THROWS_AS(load("not json"), FormatError);
    REQUIRE_THROWS_AS(load("{}"), FormatError);

    // Minimal valid document, then break one field at a time.
    const char* base = R"({
        "name": "h", "num_fingers": 1, "thumb_finger": 0,
        "palm_axis": [1, 0, 0], "palm_center": [0, 0, 0],
        "open_q": [0.0],
        "links": [{"name": "root"}, {"name": "tip"}],
        "joints": [{"name": "j0", "parent": "root", "child": "tip",
                    "axis": [0, 1, 0], "origin": [0, 0, 0.1], "limits": [-1, 1]}],
        "contacts": [{"name": "c0", "link": "tip", "finger": 0,
                      "position": [0, 0, 0.05], "normal": [1, 0, 0]}]
    })";
    REQUIRE_NOTHROW(load(base));

    nlohmann::json doc = nlohmann::json::parse(base);
    doc["open_q"] = {0.0, 0.0};
    REQUIRE_THROWS_AS(hand_from_json(doc), InvariantViolation);

    doc = nlohmann::json::parse(base);
    doc["joints"][0]["limits"] = {1.0, -1.0};
    REQUIRE_THROWS_AS(hand_from_json(doc), InvariantViolation);

    doc = nlohmann::json::parse(base);
    doc["joints"][0]["axis"] = {0.0, 0.7, 0.0};
    REQUIRE_THROWS_AS(hand_from_json(doc), InvariantViolation);

    doc = nlohmann::json::parse(base);
    doc["contacts"][0]["link"] = "nope";
    REQUIRE_THROWS_AS(hand_from_json(doc), FormatError);

    doc = nlohmann::json::parse(base);
    doc["contacts"][0]["finger"] = 4;
    REQUIRE_THROWS_AS(hand_from_json(doc), InvariantViolation);
}
