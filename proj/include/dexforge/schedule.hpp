#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dexforge/errors.hpp"

namespace dexforge {

enum class ActionType { Pregrasp, Grasp, Motion, Release };

inline const char* action_name(ActionType type) {
    switch (type) {
        case ActionType::Pregrasp: return "pregrasp";
        case ActionType::Grasp: return "grasp";
        case ActionType::Motion: return "motion";
        case ActionType::Release: return "release";
    }
    return "unknown";
}

inline ActionType action_from_name(const std::string& name) {
    if (name == "pregrasp") return ActionType::Pregrasp;
    if (name == "grasp") return ActionType::Grasp;
    if (name == "motion") return ActionType::Motion;
    if (name == "release") return ActionType::Release;
    throw FormatError("unknown action type: " + name);
}

struct Subaction {
    ActionType type = ActionType::Motion;
    int start_frame = 0;
    bool operator==(const Subaction&) const = default;
};

struct Task {
    std::vector<int> embodiments;  // hand ids this task drives (all written in lockstep)
    int object_id = -1;
    std::vector<Subaction> subactions;  // start frames non-decreasing
    bool operator==(const Task&) const = default;
};

// The scheduler asks the executor how long each subaction's trajectory runs;
// the executor may cache whatever it synthesised, keyed by (task, subaction).
struct ExecutorRequest {
    int task = -1;       // index into the caller's task list
    int subaction = -1;  // index into that task's subaction list
    ActionType type = ActionType::Motion;
    int start = 0;    // effective start frame (annotated start plus accrued delay)
    int window = -1;  // frames until the task's next subaction; -1 = unconstrained
};

using Executor = std::function<int(const ExecutorRequest&)>;

struct QueueEntry {
    int segment = -1;  // index into ScheduleResult::segments
    int step = -1;     // frame offset inside that segment
    bool empty() const { return segment < 0; }
    bool operator==(const QueueEntry&) const = default;
};

struct ScheduledSegment {
    int task = -1;
    int subaction = -1;
    ActionType type = ActionType::Motion;
    std::vector<int> embodiments;
    int start = 0;
    int duration = 0;          // frames actually occupied
    int natural_duration = 0;  // executor-reported length before any fitting
    double time_scale = 1.0;   // natural_duration / duration
    bool operator==(const ScheduledSegment&) const = default;
};

struct ScheduleResult {
    std::vector<std::vector<QueueEntry>> queues;  // one per embodiment, equal length
    std::vector<ScheduledSegment> segments;
    std::vector<bool> completed;     // per input task
    std::vector<int> active_trace;   // |active set| at each frame iteration
    int frames = 0;
    bool operator==(const ScheduleResult&) const = default;
};

inline ScheduleResult schedule(int num_embodiments, int horizon,
                               const std::vector<Task>& tasks, const Executor& executor) {
    if (num_embodiments < 1) throw InvariantViolation("schedule: no embodiments");
    if (horizon < 1) throw InvariantViolation("schedule: horizon must be at least one frame");
    for (size_t i = 0; i < tasks.size(); ++i) {
        const Task& task = tasks[i];
        const std::string tag = "task " + std::to_string(i);
        if (task.embodiments.empty())
            throw InvariantViolation(tag + " controls no embodiment");
        for (int e : task.embodiments)
            if (e < 0 || e >= num_embodiments)
                throw InvariantViolation(tag + " references embodiment " + std::to_string(e));
        int prev = 0;
        for (const Subaction& s : task.subactions) {
            if (s.start_frame < 0 || s.start_frame >= horizon)
                throw InvariantViolation(tag + " has a start frame outside the horizon");
            if (s.start_frame < prev)
                throw InvariantViolation(tag + " has decreasing start frames");
            prev = s.start_frame;
        }
    }

    const int cap = 10 * horizon + 1024;  // queues may outgrow the horizon, but not unboundedly
    ScheduleResult out;
    out.queues.assign(static_cast<size_t>(num_embodiments), {});
    out.completed.assign(tasks.size(), false);

    // Admission order: by first annotated start, ties by task index.
    std::vector<int> order;
    for (size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].subactions.empty())
            out.completed[i] = true;  // nothing to do
        else
            order.push_back(static_cast<int>(i));
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return tasks[a].subactions.front().start_frame <
               tasks[b].subactions.front().start_frame;
    });
    std::deque<int> pending(order.begin(), order.end());

    struct ActiveTask {
        int id = -1;
        int cursor = 0;
        int delay = 0;
    };
    std::vector<ActiveTask> active;
    std::vector<int> busy_until(static_cast<size_t>(num_embodiments), 0);

    auto effective_start = [&](const ActiveTask& at) {
        return tasks[at.id].subactions[at.cursor].start_frame + at.delay;
    };

    for (int t = 0; !pending.empty() || !active.empty(); ++t) {
        if (t > cap) throw InvariantViolation("schedule exceeded the horizon cap");
        while (static_cast<int>(active.size()) < num_embodiments && !pending.empty()) {
            active.push_back({pending.front(), 0, 0});
            pending.pop_front();
        }
        out.active_trace.push_back(static_cast<int>(active.size()));

        std::vector<int> slots(active.size());
        std::iota(slots.begin(), slots.end(), 0);
        std::stable_sort(slots.begin(), slots.end(), [&](int a, int b) {
            const int ea = effective_start(active[a]), eb = effective_start(active[b]);
            return ea != eb ? ea < eb : active[a].id < active[b].id;
        });

        std::vector<size_t> done;
        for (int slot : slots) {
            ActiveTask& at = active[slot];
            const Task& task = tasks[at.id];
            if (effective_start(at) > t) continue;
            const bool free = std::all_of(task.embodiments.begin(), task.embodiments.end(),
                                          [&](int e) { return busy_until[e] <= t; });
            if (!free) continue;  // still executing: launch as soon as the hands are idle

            at.delay += t - effective_start(at);  // late start shifts the rest of this task
            const Subaction& sub = task.subactions[at.cursor];
            int window = -1;
            if (at.cursor + 1 < static_cast<int>(task.subactions.size()))
                window = task.subactions[at.cursor + 1].start_frame + at.delay - t;

            ExecutorRequest req{at.id, at.cursor, sub.type, t, window};
            int natural = 0;
            try {
                natural = executor(req);
            } catch (const std::exception& ex) {
                throw ExecutorFailure("task " + std::to_string(at.id) + " subaction " +
                                      std::to_string(at.cursor) + " (" +
                                      action_name(sub.type) + "): " + ex.what());
            }
            if (natural < 1)
                throw ExecutorFailure("task " + std::to_string(at.id) + " subaction " +
                                      std::to_string(at.cursor) + " produced no frames");

            // Fit the segment so it ends the frame before the next subaction.
            int duration = natural;
            if (window >= 1 && natural > window) duration = window;
            if (t + duration > cap)
                throw InvariantViolation("schedule exceeded the horizon cap");

            ScheduledSegment seg;
            seg.task = at.id;
            seg.subaction = at.cursor;
            seg.type = sub.type;
            seg.embodiments = task.embodiments;
            seg.start = t;
            seg.duration = duration;
            seg.natural_duration = natural;
            seg.time_scale = static_cast<double>(natural) / duration;
            const int seg_id = static_cast<int>(out.segments.size());

            for (int e : task.embodiments) {
                auto& queue = out.queues[e];
                if (static_cast<int>(queue.size()) < t + duration)
                    queue.resize(static_cast<size_t>(t + duration));
                for (int step = 0; step < duration; ++step) {
                    QueueEntry& cell = queue[static_cast<size_t>(t + step)];
                    if (!cell.empty())
                        throw ScheduleConflict("embodiment " + std::to_string(e) +
                                               " frame " + std::to_string(t + step));
                    cell = {seg_id, step};
                }
                busy_until[e] = t + duration;
            }
            out.segments.push_back(std::move(seg));
            out.frames = std::max(out.frames, t + duration);

            if (++at.cursor == static_cast<int>(task.subactions.size())) {
                out.completed[at.id] = true;
                done.push_back(static_cast<size_t>(slot));
            }
        }
        std::sort(done.begin(), done.end(), std::greater<>());
        for (size_t slot : done) active.erase(active.begin() + static_cast<long>(slot));
    }

    for (auto& queue : out.queues) queue.resize(static_cast<size_t>(out.frames));
    return out;
}

struct ValidationReport {
    std::vector<std::pair<int, int>> conflicts;  // (embodiment, frame), sorted
    std::vector<double> utilization;             // occupied fraction per embodiment
    std::vector<bool> completed;
    bool ok() const { return conflicts.empty(); }

    std::string summary() const {
        std::ostringstream out;
        for (size_t e = 0; e < utilization.size(); ++e)
            out << "embodiment " << e << " utilization " << utilization[e] << "\n";
        for (size_t i = 0; i < completed.size(); ++i)
            out << "task " << i << (completed[i] ? " complete" : " incomplete") << "\n";
        for (const auto& [e, t] : conflicts)
            out << "conflict at embodiment " << e << " frame " << t << "\n";
        out << "conflicts " << conflicts.size() << "\n";
        return out.str();
    }
};

inline ValidationReport validate_schedule(const ScheduleResult& result) {
    ValidationReport report;
    report.completed = result.completed;
    int extent = result.frames;
    for (const auto& seg : result.segments) extent = std::max(extent, seg.start + seg.duration);

    std::vector<std::vector<int>> coverage(result.queues.size(),
                                           std::vector<int>(static_cast<size_t>(extent), 0));
    for (const auto& seg : result.segments)
        for (int e : seg.embodiments)
            for (int f = seg.start; f < seg.start + seg.duration; ++f)
                ++coverage[static_cast<size_t>(e)][static_cast<size_t>(f)];
    for (size_t e = 0; e < coverage.size(); ++e)
        for (int f = 0; f < extent; ++f)
            if (coverage[e][static_cast<size_t>(f)] > 1)
                report.conflicts.emplace_back(static_cast<int>(e), f);

    report.utilization.assign(result.queues.size(), 0.0);
    for (size_t e = 0; e < result.queues.size(); ++e) {
        if (result.frames == 0) continue;
        int busy = 0;
        for (const auto& cell : result.queues[e])
            if (!cell.empty()) ++busy;
        report.utilization[e] = static_cast<double>(busy) / result.frames;
    }
    return report;
}

}  // namespace dexforge
