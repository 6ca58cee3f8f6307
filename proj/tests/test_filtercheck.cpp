#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dexforge/filtercheck.hpp"
#include "dexforge/motion.hpp"
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

std::vector<double> curl_q(const HandModelSpec& hand) {
    std::vector<double> q = hand.open_q;
    set_q(hand, q, "th_mcp", 0.3);
    set_q(hand, q, "th_pip", 0.2);
    set_q(hand, q, "idx_mcp", 0.6);
    set_q(hand, q, "idx_pip", 0.3);
    for (size_t j = 0; j < q.size(); ++j)
        q[j] = std::min(std::max(q[j], hand.joints[j].lower + 0.02),
                        hand.joints[j].upper - 0.02);
    return q;
}

GraspCandidate single_candidate(const HandModelSpec& hand, const Pose& wrist) {
    HandAssignment ha;
    ha.embodiment = 0;
    ha.wrist = wrist;
    ha.q = curl_q(hand);
    GraspCandidate g;
    g.hands = {ha};
    for (size_t c = 0; c < hand.contacts.size(); ++c)
        g.contacts.emplace_back(0, static_cast<int>(c));
    g.wrench_residual = 0.0;
    return g;
}

// Assembled pick-and-place record plus the bundle it came from.
struct FilterFixture {
    synthetic::PickPlaceParams params;
    synthetic::Fixture fx;
    DemoRecord rec;
};

const FilterFixture& filter_fixture() {
    static const FilterFixture cached = [] {
        FilterFixture f;
        f.fx = synthetic::make_pickplace_fixture(f.params);
        const HandModelSpec& hand = testing::test_hand();
        const Pose grasp_wrist{Quat::Identity(), Vec3(0.35, -0.08, 0.03)};
        MotionExecutor exec(f.fx.bundle, f.fx.annotation, hand,
                            {single_candidate(hand, grasp_wrist)});
        const Executor fn = [&exec](const ExecutorRequest& r) { return exec(r); };
        const auto sched = schedule(f.fx.annotation.num_embodiments, f.fx.annotation.horizon,
                                    f.fx.annotation.tasks, fn);
        f.rec = assemble_demo(f.fx.bundle, f.fx.annotation, sched, exec, Pose{});
        return f;
    }();
    return cached;
}

const FilterCheck& check_named(const FilterReport& report, const std::string& name) {
    for (const FilterCheck& c : report.checks)
        if (c.name == name) return c;
    FAIL("no check named " << name);
    static FilterCheck never;
    return never;
}

std::string unique_temp_file(const std::string& tag) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    return (std::filesystem::temp_directory_path() /
            ("dexforge_judge_" + tag + "_" + std::to_string(stamp)))
        .string();
}

}  // namespace

TEST_CASE("a faithful replay passes every rule check") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    const FilterReport report = rule_filter(f.rec, f.fx.bundle, hand);
    REQUIRE(report.verdict);
    REQUIRE(report.checks.size() == 4);
    REQUIRE(check_named(report, "final-pose").passed);
    REQUIRE(check_named(report, "interpenetration").passed);
    REQUIRE(check_named(report, "schedule-gaps").passed);
    REQUIRE(check_named(report, "joint-limits").passed);
    for (const FilterCheck& c : report.checks) REQUIRE_FALSE(c.skipped);
    REQUIRE(check_named(report, "interpenetration").evidence == 0.0);
    REQUIRE(check_named(report, "schedule-gaps").evidence == 0.0);
    REQUIRE(report.record_id == f.rec.bundle_id + "/0");

    // filtering is pure: identical reruns, untouched record
    const FilterReport again = rule_filter(f.rec, f.fx.bundle, hand);
    REQUIRE(again == report);
    REQUIRE(f.rec.hands[0][30].wrist.translation == Vec3(0.35, -0.08, 0.03));
}

TEST_CASE("a displaced final pose fails with the offset as evidence") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    DemoRecord broken = f.rec;
    broken.object_poses.back()[0].translation += Vec3(0.10, 0.0, 0.0);
    const FilterReport report = rule_filter(broken, f.fx.bundle, hand);
    REQUIRE_FALSE(report.verdict);
    const FilterCheck& pose = check_named(report, "final-pose");
    REQUIRE_FALSE(pose.passed);
    REQUIRE(pose.evidence == Catch::Approx(0.10).margin(1e-12));
    REQUIRE(check_named(report, "schedule-gaps").passed);
    REQUIRE(check_named(report, "joint-limits").passed);

    // rotation alone also fails the same check
    DemoRecord spun = f.rec;
    spun.object_poses.back()[0].rotation = canonical_quat(
        Quat(Eigen::AngleAxisd(20.0 * M_PI / 180.0, Vec3::UnitZ())) *
        spun.object_poses.back()[0].rotation);
    const FilterReport rspin = rule_filter(spun, f.fx.bundle, hand);
    REQUIRE_FALSE(check_named(rspin, "final-pose").passed);
    REQUIRE(check_named(rspin, "final-pose").evidence < 1e-9);

    // a rotation within tolerance still passes
    DemoRecord nudged = f.rec;
    nudged.object_poses.back()[0].rotation = canonical_quat(
        Quat(Eigen::AngleAxisd(10.0 * M_PI / 180.0, Vec3::UnitZ())) *
        nudged.object_poses.back()[0].rotation);
    REQUIRE(check_named(rule_filter(nudged, f.fx.bundle, hand), "final-pose").passed);
}

TEST_CASE("overlapping object hulls fail the interpenetration check") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    // a second sphere whose center sits closer than two radii
    auto with_phantom = [&](double gap) {
        ReconBundle bundle = f.fx.bundle;
        bundle.object_ids.push_back(99);
        bundle.object_meshes.push_back(bundle.object_meshes[0]);
        DemoRecord rec = f.rec;
        rec.object_ids.push_back(99);
        Pose phantom;
        phantom.translation =
            synthetic::pickplace_object_pose(f.params, 0).translation - Vec3(gap, 0.0, 0.0);
        for (auto& row : rec.object_poses) row.push_back(phantom);
        rec.target_final.push_back(phantom);
        return std::pair{std::move(bundle), std::move(rec)};
    };

    SECTION("five millimeters of overlap is flagged") {
        const auto [bundle, rec] = with_phantom(2 * f.params.radius - 0.005);
        const FilterReport report = rule_filter(rec, bundle, hand);
        REQUIRE_FALSE(report.verdict);
        const FilterCheck& pen = check_named(report, "interpenetration");
        REQUIRE_FALSE(pen.passed);
        // vertex-into-half-space depth: the analytic 5 mm minus tessellation
        REQUIRE(pen.evidence > 0.003);
        REQUIRE(pen.evidence < 0.0055);
        REQUIRE(check_named(report, "final-pose").passed);
    }

    SECTION("clear separation passes with zero evidence") {
        const auto [bundle, rec] = with_phantom(2 * f.params.radius + 0.005);
        const FilterReport report = rule_filter(rec, bundle, hand);
        REQUIRE(report.verdict);
        REQUIRE(check_named(report, "interpenetration").evidence == 0.0);
    }
}

TEST_CASE("schedule corruption is counted as gap violations") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    DemoRecord broken = f.rec;
    broken.segments[1].start -= 5;  // now overlaps the approach on embodiment 0
    const FilterReport report = rule_filter(broken, f.fx.bundle, hand);
    REQUIRE_FALSE(report.verdict);
    const FilterCheck& gaps = check_named(report, "schedule-gaps");
    REQUIRE_FALSE(gaps.passed);
    REQUIRE(gaps.evidence >= 1.0);

    DemoRecord trailing = f.rec;
    trailing.segments.back().duration += 100;  // runs past the horizon
    REQUIRE_FALSE(check_named(rule_filter(trailing, f.fx.bundle, hand), "schedule-gaps").passed);
}

TEST_CASE("joint limit breaches are measured by their excess") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    DemoRecord broken = f.rec;
    broken.hands[0][40].q[3] = hand.joints[3].upper + 0.5;
    const FilterReport report = rule_filter(broken, f.fx.bundle, hand);
    REQUIRE_FALSE(report.verdict);
    const FilterCheck& limits = check_named(report, "joint-limits");
    REQUIRE_FALSE(limits.passed);
    REQUIRE(limits.evidence == Catch::Approx(0.5).margin(1e-12));

    // sub-slack excursions are tolerated
    DemoRecord grazing = f.rec;
    grazing.hands[0][40].q[3] = hand.joints[3].upper + 0.5e-10;
    REQUIRE(check_named(rule_filter(grazing, f.fx.bundle, hand), "joint-limits").passed);
}

TEST_CASE("the external judge hook runs a subprocess protocol") {
    const auto& f = filter_fixture();

    SECTION("not configured means skipped") {
        REQUIRE(external_judge_hook(f.rec, "demo", JudgeConfig{}) == JudgeVerdict::Skipped);
    }

    SECTION("a passing judge reads the summary and approves") {
        const std::string capture = unique_temp_file("pass");
        JudgeConfig judge;
        judge.command = "cat > " + capture + "; echo PASS";
        REQUIRE(external_judge_hook(f.rec, "pick and place", judge) == JudgeVerdict::Pass);
        std::ifstream in(capture);
        std::string line;
        REQUIRE(std::getline(in, line));
        REQUIRE(line.find(f.rec.bundle_id) != std::string::npos);
        REQUIRE(line.find("pick and place") != std::string::npos);
        REQUIRE(line.find("\"timesteps\":60") != std::string::npos);
        std::remove(capture.c_str());
    }

    SECTION("a failing judge rejects") {
        JudgeConfig judge;
        judge.command = "cat > /dev/null; echo FAIL";
        REQUIRE(external_judge_hook(f.rec, "demo", judge) == JudgeVerdict::Fail);
    }

    SECTION("garbage replies and timeouts are unavailability, not verdicts") {
        JudgeConfig judge;
        judge.command = "cat > /dev/null; echo MAYBE";
        REQUIRE_THROWS_AS(external_judge_hook(f.rec, "demo", judge), JudgeUnavailable);

        judge.command = "cat > /dev/null; exit 3";
        REQUIRE_THROWS_AS(external_judge_hook(f.rec, "demo", judge), JudgeUnavailable);

        judge.command = "sleep 30";
        judge.timeout_seconds = 0.2;
        const auto t0 = std::chrono::steady_clock::now();
        REQUIRE_THROWS_AS(external_judge_hook(f.rec, "demo", judge), JudgeUnavailable);
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        REQUIRE(elapsed < 2.0);
    }

    SECTION("judges that exit without reading stdin do not kill the caller") {
        JudgeConfig judge;
        judge.command = "echo PASS";
        REQUIRE(external_judge_hook(f.rec, "demo", judge) == JudgeVerdict::Pass);
    }
}

TEST_CASE("filter_record folds the judge into the report") {
    const auto& f = filter_fixture();
    const HandModelSpec& hand = testing::test_hand();

    SECTION("no judge: the fifth check is skipped and rules decide") {
        const FilterReport report = filter_record(f.rec, f.fx.bundle, hand);
        REQUIRE(report.checks.size() == 5);
        const FilterCheck& judge = check_named(report, "external-judge");
        REQUIRE(judge.skipped);
        REQUIRE(report.verdict);
    }

    SECTION("a failing judge overrides passing rules") {
        JudgeConfig judge;
        judge.command = "cat > /dev/null; echo FAIL";
        const FilterReport report = filter_record(f.rec, f.fx.bundle, hand, {}, judge);
        REQUIRE_FALSE(report.verdict);
        REQUIRE_FALSE(check_named(report, "external-judge").passed);
        REQUIRE(check_named(report, "final-pose").passed);
    }

    SECTION("an unavailable judge is skipped and rules still decide") {
        JudgeConfig judge;
        judge.command = "cat > /dev/null; echo MAYBE";
        const FilterReport report = filter_record(f.rec, f.fx.bundle, hand, {}, judge);
        REQUIRE(check_named(report, "external-judge").skipped);
        REQUIRE(report.verdict);

        // rules keep their own verdict even when the judge is down
        DemoRecord broken = f.rec;
        broken.object_poses.back()[0].translation += Vec3(0.10, 0.0, 0.0);
        const FilterReport rebroken = filter_record(broken, f.fx.bundle, hand, {}, judge);
        REQUIRE(check_named(rebroken, "external-judge").skipped);
        REQUIRE_FALSE(rebroken.verdict);
    }
}

TEST_CASE("filter configuration is validated") {
    FilterTolerances tol;
    tol.final_translation = -0.01;
    REQUIRE_THROWS_AS(tol.validate(), InvariantViolation);

    JudgeConfig judge;
    judge.timeout_seconds = 0.0;
    REQUIRE_THROWS_AS(judge.validate(), InvariantViolation);
    judge = JudgeConfig{};
    judge.max_in_flight = 0;
    REQUIRE_THROWS_AS(judge.validate(), InvariantViolation);
}
