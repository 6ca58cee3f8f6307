#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dexforge/demo.hpp"
#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/grasp.hpp"
#include "dexforge/hand.hpp"
#include "dexforge/ingest.hpp"
#include "dexforge/schedule.hpp"

namespace dexforge {

// One embodiment's motion over a contiguous frame span. The continuity
// bounds are strict per-step limits on consecutive wrist poses.
struct TrajectorySegment {
    static constexpr double step_translation_bound = 0.05;            // meters
    static constexpr double step_rotation_bound = 20.0 * M_PI / 180.0;  // radians

    int embodiment = -1;
    ActionType kind = ActionType::Motion;
    std::vector<HandState> frames;

    void validate(const HandModelSpec& hand) const {
        if (frames.empty()) throw InvariantViolation("trajectory segment has no frames");
        for (size_t f = 0; f < frames.size(); ++f) {
            const auto bad = limit_violations(hand, frames[f].q);
            if (!bad.empty())
                throw JointLimit("segment frame " + std::to_string(f) + ": " + bad.front());
        }
        for (size_t f = 1; f < frames.size(); ++f) {
            const double dt =
                (frames[f].wrist.translation - frames[f - 1].wrist.translation).norm();
            const double dr =
                rotation_geodesic_angle(frames[f].wrist.rotation, frames[f - 1].wrist.rotation);
            if (dt >= step_translation_bound || dr >= step_rotation_bound)
               throw InvariantViolation("trajectory discontinuity at frame " +
                                        std::to_string(f) + ": step " + std::to_string(dt) +
                                        " m, " + std::to_string(dr) + " rad");
        }
    }
};

// T with p_t ∘ T = p_t2: the motion from t to t2 expressed in t's frame.
inline Pose relative_transform(const Pose& p_t, const Pose& p_t2) {
    return pose_compose(p_t.inverse(), p_t2);
}

// Wrist pose rigidly following a world-frame object motion delta.
inline Pose ee_target(const Pose& world_delta, const Pose& ee_pose) {
    return pose_compose(world_delta, ee_pose);
}

// Convenience: the delta implied by an object pose pair.
inline Pose ee_target(const Pose& obj_t, const Pose& obj_t2, const Pose& ee_pose) {
    return pose_compose(pose_compose(obj_t2, obj_t.inverse()), ee_pose);
}

namespace motion_detail {

// Smallest interval count whose uniform step stays strictly under the bound,
// with a relative margin so interpolation round-off cannot graze it.
inline int needed_intervals(double length, double bound) {
    int n = static_cast<int>(std::floor(length / bound)) + 1;
    while (length / n >= bound * (1.0 - 1e-9)) ++n;
    return n;
}

inline HandState lerp_state(const HandState& a, const HandState& b, double s) {
    HandState out;
    out.wrist.rotation = quat_slerp(a.wrist.rotation, b.wrist.rotation, s);
    out.wrist.translation = (1.0 - s) * a.wrist.translation + s * b.wrist.translation;
    out.q.resize(a.q.size());
    for (size_t j = 0; j < a.q.size(); ++j) out.q[j] = (1.0 - s) * a.q[j] + s * b.q[j];
    return out;
}

}  // namespace motion_detail

// Geodesic interpolation: linear translation and joints, shortest-arc
// rotation. `duration` is the frame count; it grows until every step meets
// the continuity bound. Endpoint frames are copies of the inputs.
inline TrajectorySegment interpolate_trajectory(const HandState& start, const HandState& goal,
                                                int duration,
                                                ActionType kind = ActionType::Motion,
                                                int embodiment = -1) {
    if (duration < 1) throw InvariantViolation("trajectory needs at least one frame");
    if (start.q.size() != goal.q.size())
        throw InvariantViolation("trajectory endpoints have mismatched joint counts");

    TrajectorySegment seg;
    seg.embodiment = embodiment;
    seg.kind = kind;
    if (duration == 1) {
        seg.frames = {goal};
        return seg;
    }

    const double dist = (goal.wrist.translation - start.wrist.translation).norm();
    const double angle = rotation_geodesic_angle(start.wrist.rotation, goal.wrist.rotation);
    int intervals = std::max(
        duration - 1,
        std::max(motion_detail::needed_intervals(dist,
                                                 TrajectorySegment::step_translation_bound),
                 motion_detail::needed_intervals(angle,
                                                 TrajectorySegment::step_rotation_bound)));

    seg.frames.reserve(static_cast<size_t>(intervals) + 1);
    seg.frames.push_back(start);
    for (int i = 1; i < intervals; ++i)
        seg.frames.push_back(
            motion_detail::lerp_state(start, goal, static_cast<double>(i) / intervals));
    seg.frames.push_back(goal);
    return seg;
}

struct MotionConfig {
    double standoff = 0.08;    // pregrasp distance back along the palm axis
    int approach_frames = 20;  // pregrasp base duration
    int close_frames = 10;     // grasp close / release open base duration
};

// Trajectory synthesized for one scheduled subaction: per-hand endpoint
// states plus the frames at the natural (pre-fitting) duration.
struct MotionPlan {
    ActionType type = ActionType::Motion;
    int task = -1;
    int subaction = -1;
    int object_id = -1;
    std::vector<int> embodiments;  // task order
    std::vector<HandState> start;  // per hand
    std::vector<HandState> end;
    Pose obj_start, obj_end;  // transport anchors; obj_start is the attach pose for Grasp
    int natural = 0;
    std::vector<std::vector<HandState>> frames;  // [hand][frame]
};

namespace motion_detail {

// Largest per-step violation ratio against the continuity bounds.
inline double step_ratio(const std::vector<HandState>& frames) {
    double worst = 0.0;
    for (size_t f = 1; f < frames.size(); ++f) {
        const double dt =
            (frames[f].wrist.translation - frames[f - 1].wrist.translation).norm();
        const double dr =
            rotation_geodesic_angle(frames[f].wrist.rotation, frames[f - 1].wrist.rotation);
        worst = std::max(worst, dt / TrajectorySegment::step_translation_bound);
        worst = std::max(worst, dr / TrajectorySegment::step_rotation_bound);
    }
    return worst;
}

// Wrist sequences for a rigid transport: the object runs its geodesic and
// every hand follows the world delta, so hand-object offsets are constant by
// construction. Endpoint frames are exact copies.
inline std::vector<std::vector<HandState>> transport_frames(
    const Pose& obj_start, const Pose& obj_end, const std::vector<HandState>& hands,
    int duration) {
    std::vector<std::vector<HandState>> out(hands.size());
    if (duration == 1) {
        for (size_t i = 0; i < hands.size(); ++i) {
            HandState final = hands[i];
            final.wrist = ee_target(obj_start, obj_end, hands[i].wrist);
            out[i] = {std::move(final)};
        }
        return out;
    }
    for (size_t i = 0; i < hands.size(); ++i) {
        out[i].reserve(static_cast<size_t>(duration));
        out[i].push_back(hands[i]);
    }
    for (int f = 1; f + 1 < duration; ++f) {
        const double s = static_cast<double>(f) / (duration - 1);
        Pose obj;
        obj.rotation = quat_slerp(obj_start.rotation, obj_end.rotation, s);
        obj.translation = (1.0 - s) * obj_start.translation + s * obj_end.translation;
        for (size_t i = 0; i < hands.size(); ++i) {
            HandState frame = hands[i];
            frame.wrist = ee_target(obj_start, obj, hands[i].wrist);
            out[i].push_back(std::move(frame));
        }
    }
    for (size_t i = 0; i < hands.size(); ++i) {
        HandState final = hands[i];
        final.wrist = ee_target(obj_start, obj_end, hands[i].wrist);
        out[i].push_back(std::move(final));
    }
    return out;
}

}  // namespace motion_detail

// Schedule executor: synthesizes each subaction's trajectory when the
// scheduler dispatches it, tracking per-embodiment and per-object state in
// dispatch (= time) order. Plans are cached for assembly.
class MotionExecutor {
  public:
    MotionExecutor(const ReconBundle& bundle, const TaskAnnotation& ann,
                   const HandModelSpec& hand, std::vector<GraspCandidate> grasps,
                   MotionConfig config = {})
        : bundle_(&bundle), ann_(&ann), hand_(&hand), grasps_(std::move(grasps)), cfg_(config) {
        if (grasps_.size() != ann.tasks.size())
            throw InvariantViolation("one grasp candidate per task required, got " +
                                     std::to_string(grasps_.size()) + " for " +
                                     std::to_string(ann.tasks.size()) + " tasks");
        if (ann.num_embodiments > 2)
            throw EmbodimentMismatch("bundles carry two hand tracks; annotation wants " +
                                     std::to_string(ann.num_embodiments));

        const auto indices =
            resample_frame_indices(static_cast<int>(bundle.frames.size()),
                                   bundle.frame_rate_source, bundle.frame_rate_target);
        for (int oid : bundle.object_ids) {
            auto& track = tracks_[oid];
            for (int idx : indices) {
                const auto& poses = bundle.frames[static_cast<size_t>(idx)].object_poses;
                const auto it = poses.find(oid);
                if (it == poses.end())
                    throw InvariantViolation("bundle frame " + std::to_string(idx) +
                                             " lacks a pose for object " + std::to_string(oid));
                track.push_back(it->second);
            }
            rest_[oid] = track.front();
        }

        // Objects wait where the reconstruction has them when first grasped.
        for (size_t t = 0; t < ann.tasks.size(); ++t) {
            const Task& task = ann.tasks[t];
            for (const Subaction& sub : task.subactions)
                if (sub.type == ActionType::Grasp) {
                    const Pose& at = track_pose(task.object_id, sub.start_frame);
                    auto& rest = rest_[task.object_id];
                    if (first_grasp_.find(task.object_id) == first_grasp_.end() ||
                        sub.start_frame < first_grasp_[task.object_id]) {
                        first_grasp_[task.object_id] = sub.start_frame;
                        rest = at;
                    }
                    break;
                }
        }

        for (int e = 0; e < ann.num_embodiments; ++e) {
            const FrameRecord& first = bundle.frames[static_cast<size_t>(indices.front())];
            HandState state;
            state.wrist = e == 0 ? first.left_hand : first.right_hand;
            state.q = hand.open_q;
            initial_.push_back(state);
        }
        current_hands_ = initial_;
        current_obj_ = rest_;

        for (size_t t = 0; t < ann.tasks.size(); ++t) {
            const Task& task = ann.tasks[t];
            std::vector<int> order;
            for (int e : task.embodiments) {
                int found = -1;
                for (size_t i = 0; i < grasps_[t].hands.size(); ++i)
                    if (grasps_[t].hands[i].embodiment == e) found = static_cast<int>(i);
                if (found < 0)
                    throw EmbodimentMismatch("task " + std::to_string(t) +
                                             ": grasp candidate has no hand for embodiment " +
                                             std::to_string(e));
                const auto& ha = grasps_[t].hands[static_cast<size_t>(found)];
                const auto bad = limit_violations(hand, ha.q);
                if (!bad.empty())
                    throw JointLimit("task " + std::to_string(t) + " grasp: " + bad.front());
                order.push_back(found);
            }
            grasp_hand_order_.push_back(std::move(order));
        }
    }

    int operator()(const ExecutorRequest& req) {
        const Task& task = ann_->tasks[static_cast<size_t>(req.task)];
        MotionPlan plan;
        plan.type = req.type;
        plan.task = req.task;
        plan.subaction = req.subaction;
        plan.object_id = task.object_id;
        plan.embodiments = task.embodiments;
        for (int e : task.embodiments) plan.start.push_back(current_hands_[static_cast<size_t>(e)]);

        switch (req.type) {
            case ActionType::Pregrasp: {
                for (size_t i = 0; i < task.embodiments.size(); ++i) {
                    HandState end;
                    end.wrist = standoff_pose(grasp_hand(req.task, i).wrist);
                    end.q = hand_->open_q;
                    plan.end.push_back(std::move(end));
                }
                build_uniform(plan, cfg_.approach_frames);
                break;
            }
            case ActionType::Grasp: {
                for (size_t i = 0; i < task.embodiments.size(); ++i) {
                    const HandAssignment& ha = grasp_hand(req.task, i);
                    plan.end.push_back({ha.wrist, ha.q});
                }
                plan.obj_start = current_obj_.at(task.object_id);
                build_uniform(plan, cfg_.close_frames);
                attached_[req.task] = true;
                break;
            }
            case ActionType::Motion: {
                if (!attached_[req.task])
                    throw InvariantViolation("task " + std::to_string(req.task) +
                                             ": transport before grasp");
                plan.obj_start = current_obj_.at(task.object_id);
                plan.obj_end = transport_goal(task, req.subaction);
                // Natural pace is the annotated span; the scheduler compresses
                // into the window separately when the task is running late.
                const auto& subs = task.subactions;
                const int a_start = subs[static_cast<size_t>(req.subaction)].start_frame;
                const int a_end = req.subaction + 1 < static_cast<int>(subs.size())
                                      ? subs[static_cast<size_t>(req.subaction) + 1].start_frame
                                      : ann_->horizon;
                build_transport(plan, std::max(2, a_end - a_start));
                current_obj_[task.object_id] = plan.obj_end;
                break;
            }
            case ActionType::Release: {
                if (!attached_[req.task])
                    throw InvariantViolation("task " + std::to_string(req.task) +
                                             ": release before grasp");
                for (size_t i = 0; i < task.embodiments.size(); ++i) {
                    HandState end;
                    end.wrist = standoff_pose(plan.start[i].wrist);  // retreat from here
                    end.q = hand_->open_q;
                    plan.end.push_back(std::move(end));
                }
                build_uniform(plan, cfg_.close_frames);
                attached_[req.task] = false;
                break;
            }
        }

        for (size_t i = 0; i < task.embodiments.size(); ++i)
            current_hands_[static_cast<size_t>(task.embodiments[i])] = plan.end[i];
        const int natural = plan.natural;
        plans_[{req.task, req.subaction}] = std::move(plan);
        return natural;
    }

    const MotionPlan& plan(int task, int subaction) const {
        const auto it = plans_.find({task, subaction});
        if (it == plans_.end())
            throw InvariantViolation("no plan for task " + std::to_string(task) +
                                     " subaction " + std::to_string(subaction));
        return it->second;
    }

    const HandModelSpec& hand_model() const { return *hand_; }
    const MotionConfig& config() const { return cfg_; }
    const HandState& initial_state(int embodiment) const {
        return initial_.at(static_cast<size_t>(embodiment));
    }
    const Pose& rest_pose(int object_id) const { return rest_.at(object_id); }
    const std::vector<Pose>& track(int object_id) const { return tracks_.at(object_id); }
    const GraspCandidate& grasp(int task) const {
        return grasps_.at(static_cast<size_t>(task));
    }
    // Candidate hand index realized by the task's slot-th embodiment.
    int grasp_hand_index(int task, size_t slot) const {
        return grasp_hand_order_.at(static_cast<size_t>(task)).at(slot);
    }

  private:
    const HandAssignment& grasp_hand(int task, size_t slot) const {
        const auto& g = grasps_[static_cast<size_t>(task)];
        return g.hands[static_cast<size_t>(
            grasp_hand_order_[static_cast<size_t>(task)][slot])];
    }

    Pose standoff_pose(const Pose& grasp_wrist) const {
        Pose out = grasp_wrist;
        out.translation -= cfg_.standoff * (grasp_wrist.rotation * hand_->palm_axis);
        return out;
    }

    const Pose& track_pose(int object_id, int frame) const {
        const auto& track = tracks_.at(object_id);
        const int last = static_cast<int>(track.size()) - 1;
        return track[static_cast<size_t>(std::clamp(frame, 0, last))];
    }

    // Keyframe anchoring: the transport ends at the reconstructed pose of
    // the next annotated subaction boundary, or the track end when last.
    Pose transport_goal(const Task& task, int subaction) const {
        if (subaction + 1 < static_cast<int>(task.subactions.size()))
            return track_pose(task.object_id,
                              task.subactions[static_cast<size_t>(subaction) + 1].start_frame);
        return tracks_.at(task.object_id).back();
    }

    // Interpolate every hand start->end at a shared duration (the longest
    // continuity-extended length across hands).
    void build_uniform(MotionPlan& plan, int base) const {
        int natural = base;
        plan.frames.clear();
        for (size_t i = 0; i < plan.start.size(); ++i) {
            auto seg = interpolate_trajectory(plan.start[i], plan.end[i], base);
            natural = std::max(natural, static_cast<int>(seg.frames.size()));
            plan.frames.push_back(std::move(seg.frames));
        }
        for (size_t i = 0; i < plan.frames.size(); ++i)
            if (static_cast<int>(plan.frames[i].size()) != natural)
                plan.frames[i] =
                    interpolate_trajectory(plan.start[i], plan.end[i], natural).frames;
        plan.natural = natural;
    }

    void build_transport(MotionPlan& plan, int base) const {
        int duration = base;
        for (int guard = 0;; ++guard) {
            if (guard > 32)
                throw InvariantViolation("transport continuity extension diverged");
            plan.frames = motion_detail::transport_frames(plan.obj_start, plan.obj_end,
                                                          plan.start, duration);
            double ratio = 0.0;
            for (const auto& frames : plan.frames)
                ratio = std::max(ratio, motion_detail::step_ratio(frames));
            if (ratio < 1.0 - 1e-9) break;
            duration = static_cast<int>(std::floor((duration - 1) * ratio)) + 2;
        }
        plan.natural = duration;
        for (size_t i = 0; i < plan.start.size(); ++i) plan.end.push_back(plan.frames[i].back());
    }

    const ReconBundle* bundle_;
    const TaskAnnotation* ann_;
    const HandModelSpec* hand_;
    std::vector<GraspCandidate> grasps_;
    MotionConfig cfg_;

    std::map<int, std::vector<Pose>> tracks_;
    std::map<int, Pose> rest_;
    std::map<int, int> first_grasp_;
    std::vector<HandState> initial_;
    std::vector<std::vector<int>> grasp_hand_order_;

    std::vector<HandState> current_hands_;
    std::map<int, Pose> current_obj_;
    std::map<int, bool> attached_;
    std::map<std::pair<int, int>, MotionPlan> plans_;
};

namespace motion_detail {

// Re-derive a plan's frames at the scheduled duration. Schedules compress
// segments into their windows; the compressed motion must still meet the
// continuity bound or assembly fails.
inline std::vector<std::vector<HandState>> fit_plan(const MotionPlan& plan, int duration) {
    if (duration == plan.natural) return plan.frames;
    if (plan.type == ActionType::Motion)
        return transport_frames(plan.obj_start, plan.obj_end, plan.start, duration);
    std::vector<std::vector<HandState>> out;
    for (size_t i = 0; i < plan.start.size(); ++i) {
        auto frames = interpolate_trajectory(plan.start[i], plan.end[i], duration).frames;
        if (static_cast<int>(frames.size()) != duration)
            throw InvariantViolation(
                "task " + std::to_string(plan.task) + " subaction " +
                std::to_string(plan.subaction) +
                " cannot satisfy the continuity bound within its scheduled window");
        out.push_back(std::move(frames));
    }
    return out;
}

}  // namespace motion_detail

// Concatenate scheduled segments into a complete demonstration: per-frame
// hand states (idle frames hold the last pose), kinematically replayed
// object poses (rigid attachment between grasp and release), attachment
// bookkeeping, and reconstruction-derived target poses.
inline DemoRecord assemble_demo(const ReconBundle& bundle, const TaskAnnotation& ann,
                                const ScheduleResult& sched, const MotionExecutor& exec,
                                const Pose& camera_pose) {
    const HandModelSpec& hand = exec.hand_model();
    const int T = sched.frames;
    const int E = static_cast<int>(sched.queues.size());

    DemoRecord rec;
    rec.bundle_id = bundle.id;
    rec.frame_rate = bundle.frame_rate_target;
    rec.camera_pose = camera_pose;
    rec.object_ids = bundle.object_ids;
    rec.segments = sched.segments;

    // Queue/segment cross-check: every frame a segment claims must point back
    // at it, and every occupied cell must belong to the claiming segment.
    for (size_t s = 0; s < sched.segments.size(); ++s) {
        const ScheduledSegment& seg = sched.segments[s];
        for (int e : seg.embodiments)
            for (int f = seg.start; f < seg.start + seg.duration; ++f) {
                const auto& queue = sched.queues[static_cast<size_t>(e)];
                if (f >= static_cast<int>(queue.size()) ||
                    queue[static_cast<size_t>(f)].segment != static_cast<int>(s) ||
                    queue[static_cast<size_t>(f)].step != f - seg.start)
                    throw AssemblyGap("embodiment " + std::to_string(e) +
                                      " has no state at frame " + std::to_string(f));
            }
    }
    for (int e = 0; e < E; ++e)
        for (int f = 0; f < static_cast<int>(sched.queues[static_cast<size_t>(e)].size()); ++f) {
            const QueueEntry& cell = sched.queues[static_cast<size_t>(e)][static_cast<size_t>(f)];
            if (cell.empty()) continue;
            const bool valid =
                cell.segment >= 0 && cell.segment < static_cast<int>(sched.segments.size());
            if (valid) {
                const ScheduledSegment& seg = sched.segments[static_cast<size_t>(cell.segment)];
                if (std::find(seg.embodiments.begin(), seg.embodiments.end(), e) !=
                        seg.embodiments.end() &&
                    cell.step == f - seg.start && cell.step >= 0 && cell.step < seg.duration)
                    continue;
            }
            throw AssemblyGap("embodiment " + std::to_string(e) +
                              " references an invalid segment at frame " + std::to_string(f));
        }

    // Fit trajectories to the scheduled durations and validate them.
    std::vector<std::vector<std::vector<HandState>>> fitted(sched.segments.size());
    for (size_t s = 0; s < sched.segments.size(); ++s) {
        const ScheduledSegment& seg = sched.segments[s];
        fitted[s] = motion_detail::fit_plan(exec.plan(seg.task, seg.subaction), seg.duration);
        for (size_t i = 0; i < seg.embodiments.size(); ++i) {
            TrajectorySegment ts;
            ts.embodiment = seg.embodiments[i];
            ts.kind = seg.type;
            ts.frames = fitted[s][i];
            ts.validate(hand);
        }
    }

    // Hand timelines: segment frames where scheduled, held poses elsewhere.
    rec.hands.assign(static_cast<size_t>(E), {});
    for (int e = 0; e < E; ++e) {
        HandState cur = exec.initial_state(e);
        auto& timeline = rec.hands[static_cast<size_t>(e)];
        timeline.reserve(static_cast<size_t>(T));
        for (int f = 0; f < T; ++f) {
            const QueueEntry& cell = sched.queues[static_cast<size_t>(e)][static_cast<size_t>(f)];
            if (!cell.empty()) {
                const ScheduledSegment& seg = sched.segments[static_cast<size_t>(cell.segment)];
                const size_t slot = static_cast<size_t>(
                    std::find(seg.embodiments.begin(), seg.embodiments.end(), e) -
                    seg.embodiments.begin());
                cur = fitted[static_cast<size_t>(cell.segment)][slot]
                            [static_cast<size_t>(cell.step)];
            }
            timeline.push_back(cur);
        }
    }

    // Attachments: rigid from the end of each grasp close to the start of the
    // matching release (or the demo end).
    const auto object_index = [&](int oid) {
        for (size_t i = 0; i < bundle.object_ids.size(); ++i)
            if (bundle.object_ids[i] == oid) return static_cast<int>(i);
        throw InvariantViolation("demo references unknown object " + std::to_string(oid));
    };
    std::vector<bool> grasped(bundle.object_ids.size(), false);
    for (size_t t = 0; t < ann.tasks.size(); ++t) {
        const ScheduledSegment* close = nullptr;
        const ScheduledSegment* release = nullptr;
        for (const auto& seg : sched.segments) {
            if (seg.task != static_cast<int>(t)) continue;
            if (seg.type == ActionType::Grasp && !close) close = &seg;
            if (seg.type == ActionType::Release && !release) release = &seg;
        }
        if (!close) continue;
        const MotionPlan& gp = exec.plan(static_cast<int>(t), close->subaction);
        const int oidx = object_index(gp.object_id);
        grasped[static_cast<size_t>(oidx)] = true;
        for (size_t i = 0; i < gp.embodiments.size(); ++i) {
            Attachment a;
            a.embodiment = gp.embodiments[i];
            a.object = oidx;
            a.start = close->start + close->duration;
            a.end = release ? release->start : T;
            a.offset = pose_compose(gp.end[i].wrist.inverse(), gp.obj_start);
            rec.attachments.push_back(std::move(a));
        }

        const GraspCandidate& cand = exec.grasp(static_cast<int>(t));
        GraspSummary gs;
        gs.task = static_cast<int>(t);
        gs.object = oidx;
        gs.embodiments = gp.embodiments;
        gs.hands = gp.end;
        gs.wrench_residual = cand.wrench_residual;
        gs.contact_ids.resize(gp.embodiments.size());
        for (size_t i = 0; i < gp.embodiments.size(); ++i) {
            const int hand_idx = exec.grasp_hand_index(static_cast<int>(t), i);
            for (const auto& [slot, cid] : cand.contacts)
                if (slot == hand_idx) gs.contact_ids[i].push_back(cid);
        }
        rec.grasps.push_back(std::move(gs));
    }

    // Object tracks: rest pose until attached, rigid follow while attached,
    // frozen where released.
    rec.object_poses.assign(static_cast<size_t>(T),
                            std::vector<Pose>(bundle.object_ids.size()));
    for (size_t o = 0; o < bundle.object_ids.size(); ++o) {
        Pose cur = exec.rest_pose(bundle.object_ids[o]);
        for (int f = 0; f < T; ++f) {
            for (const Attachment& a : rec.attachments)
                if (a.object == static_cast<int>(o) && f >= a.start && f < a.end) {
                    cur = pose_compose(
                        rec.hands[static_cast<size_t>(a.embodiment)][static_cast<size_t>(f)]
                            .wrist,
                        a.offset);
                    break;
                }
            rec.object_poses[static_cast<size_t>(f)][o] = cur;
        }
    }

    for (size_t o = 0; o < bundle.object_ids.size(); ++o)
        rec.target_final.push_back(grasped[o] ? exec.track(bundle.object_ids[o]).back()
                                              : exec.rest_pose(bundle.object_ids[o]));

    // Observations: static background plus each object's segmented first-frame
    // cloud carried rigidly along its pose track. Skipped when the bundle has
    // no source geometry at all.
    if (!bundle.frames.empty()) {
        const FrameRecord& first = bundle.frames.front();
        bool any = !bundle.table_cloud.points.empty();
        for (const auto& [oid, cloud] : first.object_clouds) any = any || !cloud.points.empty();
        if (any) {
            rec.observations.reserve(static_cast<size_t>(T));
            for (int f = 0; f < T; ++f) {
                PointCloud obs = bundle.table_cloud;
                for (size_t o = 0; o < bundle.object_ids.size(); ++o) {
                    const int oid = bundle.object_ids[o];
                    const auto cit = first.object_clouds.find(oid);
                    if (cit == first.object_clouds.end() || cit->second.points.empty())
                        continue;
                    const auto pit = first.object_poses.find(oid);
                    if (pit == first.object_poses.end()) continue;
                    const Pose move = pose_compose(rec.object_poses[static_cast<size_t>(f)][o],
                                                   pit->second.inverse());
                    append_cloud(obs, transform_cloud(move, cit->second));
                }
                rec.observations.push_back(std::move(obs));
            }
        }
    }

    rec.validate();
    return rec;
}

}  // namespace dexforge
