#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csignal>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "dexforge/demo.hpp"
#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/hand.hpp"
#include "dexforge/hull.hpp"
#include "dexforge/ingest.hpp"
#include "dexforge/mesh.hpp"

namespace dexforge {

struct FilterTolerances {
    double final_translation = 0.02;              // meters
    double final_rotation = 15.0 * M_PI / 180.0;  // radians
    double interpenetration = 0.002;              // meters
    double joint_limit = 1e-9;                    // radians of slack

    void validate() const {
        if (final_translation < 0.0 || final_rotation < 0.0 || interpenetration < 0.0 ||
            joint_limit < 0.0)
            throw InvariantViolation("filter tolerances must be nonnegative");
    }
};

struct FilterCheck {
    std::string name;
    bool passed = false;
    bool skipped = false;  // evaluated but undecidable (external judge only)
    double evidence = 0.0;
    bool operator==(const FilterCheck&) const = default;
};

struct FilterReport {
    std::string record_id;
    bool verdict = false;  // every non-skipped check passed
    std::vector<FilterCheck> checks;
    bool operator==(const FilterReport&) const = default;
};

// External judge: a shell command receiving a one-line JSON summary on stdin
// and answering a single-line PASS or FAIL on stdout.
struct JudgeConfig {
    std::string command;           // empty: not configured
    double timeout_seconds = 30.0;
    int max_in_flight = 4;  // advisory bound for batch drivers

    void validate() const {
        if (timeout_seconds <= 0.0)
            throw InvariantViolation("judge timeout must be positive");
        if (max_in_flight < 1)
            throw InvariantViolation("judge concurrency must be at least 1");
    }
};

enum class JudgeVerdict { Pass, Fail, Skipped };

namespace filter_detail {

inline bool combined_verdict(const std::vector<FilterCheck>& checks) {
    for (const FilterCheck& c : checks)
        if (!c.skipped && !c.passed) return false;
    return true;
}

// Rigidly move a half-space set: n' = R n, d' = d + n' . t.
inline HalfSpaces transform_half_spaces(const HalfSpaces& hs, const Pose& pose) {
    HalfSpaces out;
    out.planes.reserve(hs.planes.size());
    for (const auto& pl : hs.planes) {
        const Vec3 n = pose.rotation * pl.head<3>();
        out.planes.emplace_back(n.x(), n.y(), n.z(), pl(3) + n.dot(pose.translation));
    }
    return out;
}

// Deepest vertex of `points` inside `hull`, zero when fully outside.
inline double vertex_penetration(const std::vector<Vec3>& points, const HalfSpaces& hull) {
    double worst = 0.0;
    for (const Vec3& p : points) worst = std::max(worst, -hull.signed_distance(p));
    return worst;
}

inline std::string record_label(const DemoRecord& record) {
    return record.bundle_id + "/" + std::to_string(record.augment_seed);
}

inline std::string run_judge(const std::string& command, const std::string& input,
                             double timeout_seconds) {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw JudgeUnavailable("judge pipe creation failed");
    if (pipe(from_child) != 0) {
        close(to_child[0]);
        close(to_child[1]);
        throw JudgeUnavailable("judge pipe creation failed");
    }
    const pid_t pid = fork();
    if (pid < 0) {
        close(to_child[0]);
        close(to_child[1]);
        close(from_child[0]);
        close(from_child[1]);
        throw JudgeUnavailable("judge fork failed");
    }
    if (pid == 0) {
        setpgid(0, 0);  // own group so a timeout can reap grandchildren too
        dup2(to_child[0], STDIN_FILENO);
        dup2(from_child[1], STDOUT_FILENO);
        const int sink = open("/dev/null", O_WRONLY);
        if (sink >= 0) dup2(sink, STDERR_FILENO);
        close(to_child[0]);
        close(to_child[1]);
        close(from_child[0]);
        close(from_child[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    setpgid(pid, pid);
    close(to_child[0]);
    close(from_child[1]);

    // The judge may answer without draining stdin; a broken pipe must not
    // kill this process. Summaries are far below the pipe buffer, so the
    // write cannot block.
    struct sigaction ignore_pipe{}, previous{};
    ignore_pipe.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &ignore_pipe, &previous);
    size_t written = 0;
    while (written < input.size()) {
        const ssize_t n = write(to_child[1], input.data() + written, input.size() - written);
        if (n <= 0) break;
        written += static_cast<size_t>(n);
    }
    close(to_child[1]);
    sigaction(SIGPIPE, &previous, nullptr);

    std::string reply;
    const double deadline_ms = timeout_seconds * 1000.0;
    double waited_ms = 0.0;
    bool timed_out = false;
    for (;;) {
        pollfd pfd{from_child[0], POLLIN, 0};
        const int slice = 50;
        const int rc = poll(&pfd, 1, slice);
        if (rc > 0) {
            char buf[512];
            const ssize_t n = read(from_child[0], buf, sizeof buf);
            if (n <= 0) break;  // EOF: judge finished
            reply.append(buf, static_cast<size_t>(n));
            if (reply.size() > 4096) break;  // a verdict does not need more
        } else {
            waited_ms += slice;
            if (waited_ms >= deadline_ms) {
                timed_out = true;
                break;
            }
        }
    }
    close(from_child[0]);
    if (timed_out) kill(-pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    if (timed_out) throw JudgeUnavailable("judge timed out");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw JudgeUnavailable("judge exited abnormally");
    return reply;
}

inline JudgeVerdict parse_judge_reply(const std::string& reply) {
    std::string line = reply.substr(0, reply.find('\n'));
    const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!line.empty() && issp(line.back())) line.pop_back();
    size_t begin = 0;
    while (begin < line.size() && issp(line[begin])) ++begin;
    line = line.substr(begin);
    if (line == "PASS") return JudgeVerdict::Pass;
    if (line == "FAIL") return JudgeVerdict::Fail;
    throw JudgeUnavailable("malformed judge reply: '" + line + "'");
}

}  // namespace filter_detail

// Geometric and kinematic acceptance rules. Pure reporting: the record is
// never modified and no check throws; undecidable geometry (an object the
// bundle has no mesh for) is simply not measured.
inline FilterReport rule_filter(const DemoRecord& record, const ReconBundle& bundle,
                                const HandModelSpec& hand,
                                const FilterTolerances& tol = {}) {
    tol.validate();
    FilterReport report;
    report.record_id = filter_detail::record_label(record);
    const int T = record.timesteps();

    // 1. Final object poses must land on their reconstructed targets.
    {
        FilterCheck check;
        check.name = "final-pose";
        check.passed = true;
        const size_t n = std::min(record.target_final.size(),
                                  record.object_poses.empty()
                                      ? size_t{0}
                                      : record.object_poses.back().size());
        if (n != record.object_ids.size()) {
            check.passed = false;
            check.evidence = std::numeric_limits<double>::infinity();
        }
        for (size_t o = 0; o < n; ++o) {
            const Pose& landed = record.object_poses.back()[o];
            const Pose& target = record.target_final[o];
            const double terr = (landed.translation - target.translation).norm();
            const double rerr = rotation_geodesic_angle(landed.rotation, target.rotation);
            check.evidence = std::max(check.evidence, terr);
            if (terr > tol.final_translation || rerr > tol.final_rotation)
                check.passed = false;
        }
        report.checks.push_back(std::move(check));
    }

    // 2. Object hulls may touch but not interpenetrate beyond tolerance.
    {
        FilterCheck check;
        check.name = "interpenetration";
        std::vector<int> measurable;  // indices into record.object_ids
        std::vector<std::vector<Vec3>> verts;
        std::vector<HalfSpaces> spaces;
        for (size_t o = 0; o < record.object_ids.size(); ++o) {
            const auto it = std::find(bundle.object_ids.begin(), bundle.object_ids.end(),
                                      record.object_ids[o]);
            if (it == bundle.object_ids.end()) continue;
            TriMesh local = bundle.mesh_for(record.object_ids[o]);
            if (record.object_scale != 1.0)
                local = scale_mesh_about(local, record.object_scale,
                                         mesh_vertex_centroid(local));
            const TriMesh hull = convex_hull(local.vertices);
            measurable.push_back(static_cast<int>(o));
            verts.push_back(hull.vertices);
            spaces.push_back(half_spaces(hull));
        }
        for (int f = 0; f < T; ++f) {
            for (size_t a = 0; a < measurable.size(); ++a) {
                const Pose& pa =
                    record.object_poses[static_cast<size_t>(f)][static_cast<size_t>(
                        measurable[a])];
                std::vector<Vec3> va = verts[a];
                for (Vec3& v : va) v = pa.apply(v);
                for (size_t b = a + 1; b < measurable.size(); ++b) {
                    const Pose& pb =
                        record.object_poses[static_cast<size_t>(f)][static_cast<size_t>(
                            measurable[b])];
                    const HalfSpaces hb = filter_detail::transform_half_spaces(spaces[b], pb);
                    check.evidence =
                        std::max(check.evidence, filter_detail::vertex_penetration(va, hb));
                    std::vector<Vec3> vb = verts[b];
                    for (Vec3& v : vb) v = pb.apply(v);
                    const HalfSpaces ha = filter_detail::transform_half_spaces(spaces[a], pa);
                    check.evidence =
                        std::max(check.evidence, filter_detail::vertex_penetration(vb, ha));
                }
            }
        }
        check.passed = check.evidence <= tol.interpenetration;
        report.checks.push_back(std::move(check));
    }

    // 3. Segments must stay in range, never overlap on an embodiment, and
    // execute each task's subactions in order. Evidence counts violations.
    {
        FilterCheck check;
        check.name = "schedule-gaps";
        int violations = 0;
        std::map<int, std::vector<const ScheduledSegment*>> by_embodiment;
        std::map<int, std::vector<const ScheduledSegment*>> by_task;
        for (const ScheduledSegment& seg : record.segments) {
            if (seg.start < 0 || seg.duration < 1 || seg.start + seg.duration > T) ++violations;
            for (int e : seg.embodiments) by_embodiment[e].push_back(&seg);
            by_task[seg.task].push_back(&seg);
        }
        for (auto& [e, segs] : by_embodiment) {
            std::sort(segs.begin(), segs.end(),
                      [](const ScheduledSegment* a, const ScheduledSegment* b) {
                          return a->start < b->start;
                      });
            for (size_t i = 1; i < segs.size(); ++i)
                if (segs[i]->start < segs[i - 1]->start + segs[i - 1]->duration) ++violations;
        }
        for (auto& [t, segs] : by_task) {
            std::sort(segs.begin(), segs.end(),
                      [](const ScheduledSegment* a, const ScheduledSegment* b) {
                          return a->subaction < b->subaction;
                      });
            for (size_t i = 1; i < segs.size(); ++i)
                if (segs[i]->start < segs[i - 1]->start + segs[i - 1]->duration) ++violations;
        }
        check.evidence = violations;
        check.passed = violations == 0;
        report.checks.push_back(std::move(check));
    }

    // 4. Every articulated frame respects the hand's joint limits.
    {
        FilterCheck check;
        check.name = "joint-limits";
        for (const auto& timeline : record.hands)
            for (const HandState& state : timeline) {
                if (state.q.size() != hand.joints.size()) {
                    check.evidence = std::numeric_limits<double>::infinity();
                    continue;
                }
                for (size_t j = 0; j < state.q.size(); ++j)
                    check.evidence = std::max(
                        {check.evidence, hand.joints[j].lower - state.q[j],
                         state.q[j] - hand.joints[j].upper});
            }
        check.passed = check.evidence <= tol.joint_limit;
        report.checks.push_back(std::move(check));
    }

    report.verdict = filter_detail::combined_verdict(report.checks);
    return report;
}

// Compact single-line summary handed to the external judge.
inline std::string judge_summary_json(const DemoRecord& record,
                                      const std::string& description) {
    nlohmann::json node;
    node["record"] = filter_detail::record_label(record);
    node["bundle"] = record.bundle_id;
    node["augment_seed"] = record.augment_seed;
    node["object_scale"] = record.object_scale;
    node["timesteps"] = record.timesteps();
    node["objects"] = record.object_ids;
    node["embodiments"] = record.hands.size();
    auto pose_node = [](const Pose& p) {
        return nlohmann::json{{"t", {p.translation.x(), p.translation.y(), p.translation.z()}},
                              {"q",
                               {p.rotation.w(), p.rotation.x(), p.rotation.y(),
                                p.rotation.z()}}};
    };
    node["target_final"] = nlohmann::json::array();
    for (const Pose& p : record.target_final) node["target_final"].push_back(pose_node(p));
    node["final"] = nlohmann::json::array();
    if (!record.object_poses.empty())
        for (const Pose& p : record.object_poses.back()) node["final"].push_back(pose_node(p));
    node["description"] = description;
    return node.dump() + "\n";
}

inline JudgeVerdict external_judge_hook(const DemoRecord& record,
                                        const std::string& description,
                                        const JudgeConfig& cfg) {
    cfg.validate();
    if (cfg.command.empty()) return JudgeVerdict::Skipped;
    const std::string reply = filter_detail::run_judge(
        cfg.command, judge_summary_json(record, description), cfg.timeout_seconds);
    return filter_detail::parse_judge_reply(reply);
}

// Rule checks plus the judge verdict in one report. An unavailable judge is
// recorded as skipped; the rule checks still decide.
inline FilterReport filter_record(const DemoRecord& record, const ReconBundle& bundle,
                                  const HandModelSpec& hand, const FilterTolerances& tol = {},
                                  const JudgeConfig& judge = {},
                                  const std::string& description = "") {
    FilterReport report = rule_filter(record, bundle, hand, tol);
    FilterCheck check;
    check.name = "external-judge";
    check.skipped = true;
    try {
        const JudgeVerdict verdict = external_judge_hook(record, description, judge);
        if (verdict != JudgeVerdict::Skipped) {
            check.skipped = false;
            check.passed = verdict == JudgeVerdict::Pass;
            check.evidence = check.passed ? 1.0 : 0.0;
        }
    } catch (const JudgeUnavailable&) {
        check.skipped = true;
    }
    report.checks.push_back(std::move(check));
    report.verdict = filter_detail::combined_verdict(report.checks);
    return report;
}

}  // namespace dexforge
