#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/schedule.hpp"

namespace dexforge {

struct HandState {
    Pose wrist;
    std::vector<double> q;
};

// Rigid hand-object coupling over the frame interval [start, end);
// offset = wrist⁻¹ ∘ object at the moment of attachment.
struct Attachment {
    int embodiment = -1;
    int object = -1;  // index into DemoRecord::object_ids
    int start = 0;
    int end = 0;
    Pose offset;
};

// How a task's grasp was realized: the hand states at close completion and
// the model contacts each hand used.  Keeps augmentation able to re-close
// fingers against a resized object without re-running synthesis.
struct GraspSummary {
    int task = -1;
    int object = -1;                            // index into DemoRecord::object_ids
    std::vector<int> embodiments;               // participating hands
    std::vector<HandState> hands;               // grasp-end state per embodiment
    std::vector<std::vector<int>> contact_ids;  // used contacts per hand slot
    double wrench_residual = 0.0;
};

// One training-ready demonstration: per-frame embodiment states, kinematic
// object tracks, and synthesized observations, plus enough provenance and
// structure to re-derive, augment, and filter it.
struct DemoRecord {
    std::string bundle_id;
    uint64_t augment_seed = 0;
    double object_scale = 1.0;
    double frame_rate = 10.0;
    Pose camera_pose;

    std::vector<int> object_ids;
    std::vector<std::vector<HandState>> hands;    // [embodiment][timestep]
    std::vector<std::vector<Pose>> object_poses;  // [timestep][object index]
    std::vector<PointCloud> observations;         // [timestep], may be empty overall
    std::vector<Pose> target_final;               // [object index]

    std::vector<ScheduledSegment> segments;
    std::vector<Attachment> attachments;
    std::vector<GraspSummary> grasps;  // one per task that closes a grasp

    int timesteps() const {
        return object_poses.empty() && !hands.empty()
                   ? static_cast<int>(hands.front().size())
                   : static_cast<int>(object_poses.size());
    }

    void validate() const {
        const int steps = timesteps();
        for (size_t e = 0; e < hands.size(); ++e)
            if (static_cast<int>(hands[e].size()) != steps)
                throw InvariantViolation("demo record: embodiment " + std::to_string(e) +
                                         " has a mismatched timestep count");
        if (static_cast<int>(object_poses.size()) != steps && !object_poses.empty())
            throw InvariantViolation("demo record: object track length mismatch");
        for (const auto& frame : object_poses)
            if (frame.size() != object_ids.size())
                throw InvariantViolation("demo record: frame with wrong object count");
        if (!observations.empty() && static_cast<int>(observations.size()) != steps)
            throw InvariantViolation("demo record: observation count mismatch");
        if (target_final.size() != object_ids.size() && !target_final.empty())
            throw InvariantViolation("demo record: target pose count mismatch");
        for (const auto& a : attachments) {
            if (a.embodiment < 0 || a.embodiment >= static_cast<int>(hands.size()))
                throw InvariantViolation("demo record: attachment embodiment out of range");
            if (a.object < 0 || a.object >= static_cast<int>(object_ids.size()))
                throw InvariantViolation("demo record: attachment object out of range");
            if (a.start < 0 || a.end > steps || a.start > a.end)
                throw InvariantViolation("demo record: attachment interval out of range");
        }
        for (const auto& g : grasps) {
            if (g.object < 0 || g.object >= static_cast<int>(object_ids.size()))
                throw InvariantViolation("demo record: grasp object out of range");
            for (int e : g.embodiments)
                if (e < 0 || e >= static_cast<int>(hands.size()))
                    throw InvariantViolation("demo record: grasp embodiment out of range");
            if (g.hands.size() != g.embodiments.size() ||
                g.contact_ids.size() != g.embodiments.size())
                throw InvariantViolation("demo record: grasp hand/contact arity mismatch");
        }
    }
};

}  // namespace dexforge
