#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dexforge {

// Base class for all library errors. Subclasses map 1:1 onto the failure
// taxonomy used across modules so callers can catch by category; the CLI
// maps categories onto process exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unreadable input data (bad magic, schema violation, ...).
struct FormatError : Error {
    using Error::Error;
};

// A referenced file/asset is missing from a bundle or the filesystem.
struct MissingAsset : Error {
    using Error::Error;
};

// Filesystem-level read/write failure.
struct IoError : Error {
    using Error::Error;
};

// An operation received an empty container it cannot work with.
struct EmptyInput : Error {
    using Error::Error;
};

// Input violates a documented invariant (non-unit quaternion, ...).
struct InvariantViolation : Error {
    using Error::Error;
};

// Point set is degenerate for the requested operation (collinear cloud
// for plane fitting, coplanar cloud for hull construction, ...).
struct DegenerateCloud : Error {
    using Error::Error;
};

// Frame-rate arguments out of range for resampling.
struct InvalidRate : Error {
    using Error::Error;
};

// Hand positions too close (or collapsed) to define a world frame.
struct DegenerateHands : Error {
    using Error::Error;
};

// Two writers touched the same action-queue slot.
struct ScheduleConflict : Error {
    using Error::Error;
};

// A scheduler executor callback failed; carries task/subaction identity.
struct ExecutorFailure : Error {
    using Error::Error;
};

// Joint value outside the model's limits.
struct JointLimit : Error {
    using Error::Error;
};

// Requested finger count not satisfiable by the hand model.
struct InvalidFingerCount : Error {
    using Error::Error;
};

// Candidate sets from different embodiment layouts were mixed.
struct EmbodimentMismatch : Error {
    using Error::Error;
};

// Grasp optimization failed to converge; candidate is discarded.
struct NoConverge : Error {
    using Error::Error;
};

// No candidate survived stability screening; carries the per-candidate
// stability errors so callers can report how close the best attempt came.
struct NoStableGrasp : Error {
    explicit NoStableGrasp(const std::string& msg, std::vector<double> errs = {})
        : Error(msg), errors(std::move(errs)) {}
    std::vector<double> errors;
};

// Finger re-closing could not reach the (rescaled) object surface.
struct ContactUnreachable : Error {
    using Error::Error;
};

// An augmented object pose left the configured workspace bounds.
struct WorkspaceViolation : Error {
    using Error::Error;
};

// Operation requires per-point normals and the cloud has none.
struct MissingNormals : Error {
    using Error::Error;
};

// An embodiment has no defined state at some timestep during assembly.
struct AssemblyGap : Error {
    using Error::Error;
};

// External judge process missing, timed out, or spoke garbage.
struct JudgeUnavailable : Error {
    using Error::Error;
};

}  // namespace dexforge
