#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dexforge/demo.hpp"
#include "dexforge/errors.hpp"
#include "dexforge/geom.hpp"
#include "dexforge/hand.hpp"
#include "dexforge/schedule.hpp"

namespace dexforge {

// ---------------------------------------------------------------------------
// Frame-rate resampling
// ---------------------------------------------------------------------------

// Source indices for downsampling K frames at f Hz to f_t Hz: ⌊i·f/f_t⌋ for
// i = 0..⌊K·f_t/f⌋−1. Any index that would land past the stream is dropped
// rather than duplicated (the formula keeps them in range; the guard is
// defensive).
inline std::vector<int> resample_frame_indices(int frame_count, double f, double f_t) {
    if (frame_count < 1) throw InvariantViolation("resample: no frames");
    if (!(f > 0)) throw InvalidRate("resample: source rate must be positive");
    if (f_t <= 0 || f_t > f)
        throw InvalidRate("resample: target rate must be in (0, source rate]");
    const int last = static_cast<int>(std::floor(frame_count * f_t / f)) - 1;
    std::vector<int> out;
    out.reserve(static_cast<size_t>(std::max(0, last + 1)));
    for (int i = 0; i <= last; ++i) {
        const int idx = static_cast<int>(std::floor(i * f / f_t));
        if (idx >= frame_count) break;
        out.push_back(idx);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary geometry container ("DXF1"): little-endian, u32 count, u8 flags
// (bit0 normals, bit1 colors, bit2 faces), then float32 payloads.
// ---------------------------------------------------------------------------

namespace io_detail {

inline void put_bytes(std::ostream& out, const void* data, size_t n) {
    if (n == 0) return;
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw IoError("write failed");
}

inline void get_bytes(std::istream& in, void* data, size_t n, const char* what) {
    if (n == 0) return;
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw FormatError(std::string("truncated data while reading ") + what);
}

template <typename T>
void put_pod(std::ostream& out, T value) {
    put_bytes(out, &value, sizeof(T));
}

template <typename T>
T get_pod(std::istream& in, const char* what) {
    T value;
    get_bytes(in, &value, sizeof(T), what);
    return value;
}

inline void put_vec3_f32(std::ostream& out, const Vec3& v) {
    const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                          static_cast<float>(v.z())};
    put_bytes(out, xyz, sizeof(xyz));
}

inline Vec3 get_vec3_f32(std::istream& in, const char* what) {
    float xyz[3];
    get_bytes(in, xyz, sizeof(xyz), what);
    return Vec3(xyz[0], xyz[1], xyz[2]);
}

inline void put_vec3_f64(std::ostream& out, const Vec3& v) {
    const double xyz[3] = {v.x(), v.y(), v.z()};
    put_bytes(out, xyz, sizeof(xyz));
}

inline Vec3 get_vec3_f64(std::istream& in, const char* what) {
    double xyz[3];
    get_bytes(in, xyz, sizeof(xyz), what);
    return Vec3(xyz[0], xyz[1], xyz[2]);
}

constexpr uint8_t kFlagNormals = 1;
constexpr uint8_t kFlagColors = 2;
constexpr uint8_t kFlagFaces = 4;

inline void write_dxf_stream(std::ostream& out, const std::vector<Vec3>& points,
                             const std::vector<Vec3>& normals,
                             const std::vector<Vec3>& colors,
                             const std::vector<std::array<int, 3>>* faces) {
    out.write("DXF1", 4);
    put_pod<uint32_t>(out, static_cast<uint32_t>(points.size()));
    uint8_t flags = 0;
    if (!normals.empty()) flags |= kFlagNormals;
    if (!colors.empty()) flags |= kFlagColors;
    if (faces && !faces->empty()) flags |= kFlagFaces;
    put_pod<uint8_t>(out, flags);
    for (const Vec3& p : points) put_vec3_f32(out, p);
    for (const Vec3& n : normals) put_vec3_f32(out, n);
    for (const Vec3& c : colors) put_vec3_f32(out, c);
    if (flags & kFlagFaces) {
        put_pod<uint32_t>(out, static_cast<uint32_t>(faces->size()));
        for (const auto& f : *faces)
            for (int k = 0; k < 3; ++k) put_pod<uint32_t>(out, static_cast<uint32_t>(f[k]));
    }
}

struct DxfPayload {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<Vec3> colors;
    std::vector<std::array<int, 3>> faces;
};

inline DxfPayload read_dxf_stream(std::istream& in, const std::string& what) {
    char magic[4];
    get_bytes(in, magic, 4, what.c_str());
    if (std::memcmp(magic, "DXF1", 4) != 0)
        throw FormatError(what + ": bad magic bytes (expected DXF1)");
    const auto count = get_pod<uint32_t>(in, what.c_str());
    const auto flags = get_pod<uint8_t>(in, what.c_str());
    if (flags & ~(kFlagNormals | kFlagColors | kFlagFaces))
        throw FormatError(what + ": unknown flag bits");
    DxfPayload payload;
    payload.points.reserve(count);
    for (uint32_t i = 0; i < count; ++i)
        payload.points.push_back(get_vec3_f32(in, what.c_str()));
    if (flags & kFlagNormals) {
        // Renormalize: float32 storage nudges unit vectors off by ~1e-7.
        for (uint32_t i = 0; i < count; ++i) {
            Vec3 n = get_vec3_f32(in, what.c_str());
            const double len = n.norm();
            if (len < 0.5 || len > 1.5)
                throw FormatError(what + ": normal far from unit length");
            payload.normals.push_back(n / len);
        }
    }
    if (flags & kFlagColors)
        for (uint32_t i = 0; i < count; ++i)
            payload.colors.push_back(get_vec3_f32(in, what.c_str()));
    if (flags & kFlagFaces) {
        const auto faces = get_pod<uint32_t>(in, what.c_str());
        for (uint32_t i = 0; i < faces; ++i) {
            std::array<int, 3> tri;
            for (int k = 0; k < 3; ++k) {
                const auto v = get_pod<uint32_t>(in, what.c_str());
                if (v >= count) throw FormatError(what + ": face index out of range");
                tri[k] = static_cast<int>(v);
            }
            payload.faces.push_back(tri);
        }
    }
    return payload;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingAsset("missing file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    return in;
}

}  // namespace io_detail

inline void write_dxf_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    cloud.validate();
    auto out = io_detail::open_out(path);
    io_detail::write_dxf_stream(out, cloud.points, cloud.normals, cloud.colors, nullptr);
}

inline PointCloud read_dxf_cloud(const std::filesystem::path& path) {
    auto in = io_detail::open_in(path);
    auto payload = io_detail::read_dxf_stream(in, path.filename().string());
    if (!payload.faces.empty())
        throw FormatError(path.filename().string() + ": cloud file carries faces");
    PointCloud cloud;
    cloud.points = std::move(payload.points);
    cloud.normals = std::move(payload.normals);
    cloud.colors = std::move(payload.colors);
    cloud.validate();
    return cloud;
}

inline void write_dxf_mesh(const std::filesystem::path& path, const TriMesh& mesh) {
    auto out = io_detail::open_out(path);
    io_detail::write_dxf_stream(out, mesh.vertices, {}, {}, &mesh.faces);
}

inline TriMesh read_dxf_mesh(const std::filesystem::path& path) {
    auto in = io_detail::open_in(path);
    auto payload = io_detail::read_dxf_stream(in, path.filename().string());
    TriMesh mesh;
    mesh.vertices = std::move(payload.points);
    mesh.faces = std::move(payload.faces);
    return mesh;
}

// ---------------------------------------------------------------------------
// Reconstruction bundles: manifest.json + DXF1 geometry files in a directory.
// ---------------------------------------------------------------------------

struct FrameRecord {
    int index = 0;
    double time = 0.0;
    PointCloud scene_cloud;                  // may be empty
    std::map<int, PointCloud> object_clouds;  // segmented per object
    std::map<int, Pose> object_poses;         // absent before alignment
    Pose left_hand;
    Pose right_hand;
    PointCloud left_hand_cloud;   // segmented hand observations; may be empty
    PointCloud right_hand_cloud;
};

struct ReconBundle {
    std::string id;
    double frame_rate_source = 30.0;
    double frame_rate_target = 10.0;
    PointCloud table_cloud;
    std::vector<int> object_ids;
    std::vector<TriMesh> object_meshes;
    TriMesh left_hand_mesh;   // metric wrist-local templates; may be empty
    TriMesh right_hand_mesh;
    std::vector<FrameRecord> frames;

    const TriMesh& mesh_for(int object_id) const {
        for (size_t i = 0; i < object_ids.size(); ++i)
            if (object_ids[i] == object_id) return object_meshes[i];
        throw InvariantViolation("bundle has no object " + std::to_string(object_id));
    }
};

namespace io_detail {

inline nlohmann::json pose_to_json(const Pose& pose) {
    const Quat q = canonical_quat(pose.rotation);
    return nlohmann::json::array({q.w(), q.x(), q.y(), q.z(), pose.translation.x(),
                                  pose.translation.y(), pose.translation.z()});
}

inline Pose pose_from_json(const nlohmann::json& node, const std::string& where) {
    if (!node.is_array() || node.size() != 7)
        throw FormatError(where + ": pose must be [qw, qx, qy, qz, tx, ty, tz]");
    Pose pose;
    pose.rotation = Quat(node[0].get<double>(), node[1].get<double>(), node[2].get<double>(),
                         node[3].get<double>());
    const double norm = pose.rotation.norm();
    if (std::abs(norm - 1.0) > 1e-6)
        throw InvariantViolation(where + ": quaternion norm " + std::to_string(norm));
    pose.rotation = canonical_quat(pose.rotation.normalized());
    pose.translation =
        Vec3(node[4].get<double>(), node[5].get<double>(), node[6].get<double>());
    return pose;
}

}  // namespace io_detail

inline void write_bundle(const ReconBundle& bundle, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (bundle.object_ids.size() != bundle.object_meshes.size())
        throw InvariantViolation("bundle: object id/mesh count mismatch");
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["bundle_id"] = bundle.id;
    manifest["frame_rate_source"] = bundle.frame_rate_source;
    manifest["frame_rate_target"] = bundle.frame_rate_target;
    manifest["table_cloud"] = "table.dxf";
    write_dxf_cloud(dir / "table.dxf", bundle.table_cloud);

    manifest["objects"] = nlohmann::json::array();
    for (size_t i = 0; i < bundle.object_ids.size(); ++i) {
        const std::string name = "object_" + std::to_string(bundle.object_ids[i]) + ".dxf";
        write_dxf_mesh(dir / name, bundle.object_meshes[i]);
        manifest["objects"].push_back({{"id", bundle.object_ids[i]}, {"mesh", name}});
    }
    if (!bundle.left_hand_mesh.vertices.empty()) {
        write_dxf_mesh(dir / "hand_left.dxf", bundle.left_hand_mesh);
        manifest["left_hand_mesh"] = "hand_left.dxf";
    }
    if (!bundle.right_hand_mesh.vertices.empty()) {
        write_dxf_mesh(dir / "hand_right.dxf", bundle.right_hand_mesh);
        manifest["right_hand_mesh"] = "hand_right.dxf";
    }

    manifest["frames"] = nlohmann::json::array();
    for (size_t f = 0; f < bundle.frames.size(); ++f) {
        const FrameRecord& frame = bundle.frames[f];
        std::ostringstream stem;
        stem << "frame_" << std::setw(4) << std::setfill('0') << f;
        nlohmann::json node;
        node["index"] = frame.index;
        node["time"] = frame.time;
        if (!frame.scene_cloud.points.empty()) {
            const std::string name = stem.str() + "_scene.dxf";
            write_dxf_cloud(dir / name, frame.scene_cloud);
            node["scene_cloud"] = name;
        }
        node["object_clouds"] = nlohmann::json::object();
        for (const auto& [oid, cloud] : frame.object_clouds) {
            const std::string name = stem.str() + "_obj_" + std::to_string(oid) + ".dxf";
            write_dxf_cloud(dir / name, cloud);
            node["object_clouds"][std::to_string(oid)] = name;
        }
        if (!frame.object_poses.empty()) {
            node["object_poses"] = nlohmann::json::object();
            for (const auto& [oid, pose] : frame.object_poses)
                node["object_poses"][std::to_string(oid)] = io_detail::pose_to_json(pose);
        }
        node["hand_poses"] = {{"left", io_detail::pose_to_json(frame.left_hand)},
                              {"right", io_detail::pose_to_json(frame.right_hand)}};
        if (!frame.left_hand_cloud.points.empty()) {
            const std::string name = stem.str() + "_hand_left.dxf";
            write_dxf_cloud(dir / name, frame.left_hand_cloud);
            node["left_hand_cloud"] = name;
        }
        if (!frame.right_hand_cloud.points.empty()) {
            const std::string name = stem.str() + "_hand_right.dxf";
            write_dxf_cloud(dir / name, frame.right_hand_cloud);
            node["right_hand_cloud"] = name;
        }
        manifest["frames"].push_back(std::move(node));
    }

    auto out = io_detail::open_out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
}

inline ReconBundle load_bundle(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw MissingAsset("missing manifest: " + manifest_path.string());
    nlohmann::json manifest;
    try {
        auto in = io_detail::open_in(manifest_path);
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }

    ReconBundle bundle;
    try {
        bundle.id = manifest.at("bundle_id").get<std::string>();
        bundle.frame_rate_source = manifest.at("frame_rate_source").get<double>();
        bundle.frame_rate_target = manifest.at("frame_rate_target").get<double>();
        if (bundle.frame_rate_target <= 0 ||
            bundle.frame_rate_target > bundle.frame_rate_source)
            throw InvalidRate("manifest: target rate must be in (0, source rate]");
        bundle.table_cloud =
            read_dxf_cloud(dir / manifest.at("table_cloud").get<std::string>());

        for (const auto& node : manifest.at("objects")) {
            bundle.object_ids.push_back(node.at("id").get<int>());
            bundle.object_meshes.push_back(
                read_dxf_mesh(dir / node.at("mesh").get<std::string>()));
        }
        if (manifest.contains("left_hand_mesh"))
            bundle.left_hand_mesh =
                read_dxf_mesh(dir / manifest.at("left_hand_mesh").get<std::string>());
        if (manifest.contains("right_hand_mesh"))
            bundle.right_hand_mesh =
                read_dxf_mesh(dir / manifest.at("right_hand_mesh").get<std::string>());

        double prev_time = -std::numeric_limits<double>::infinity();
        int prev_index = -1;
        const auto& frames = manifest.at("frames");
        for (size_t f = 0; f < frames.size(); ++f) {
            const auto& node = frames[f];
            const std::string where = "frames[" + std::to_string(f) + "]";
            FrameRecord frame;
            frame.index = node.at("index").get<int>();
            frame.time = node.at("time").get<double>();
            if (frame.time <= prev_time)
                throw InvariantViolation(where + ": timestamps must strictly increase");
            if (frame.index <= prev_index && f > 0)
                throw InvariantViolation(where + ": frame indices must strictly increase");
            const int expected = static_cast<int>(std::floor(
                static_cast<double>(f) * bundle.frame_rate_source / bundle.frame_rate_target));
            if (frame.index != expected)
                throw InvariantViolation(where + ": index " + std::to_string(frame.index) +
                                         " does not match the resampling grid (expected " +
                                         std::to_string(expected) + ")");
            prev_time = frame.time;
            prev_index = frame.index;

            auto object_key = [&](const std::string& key, const char* field) {
                try {
                    return std::stoi(key);
                } catch (const std::exception&) {
                    throw FormatError(where + "." + field + ": non-integer object id '" +
                                      key + "'");
                }
            };
            if (node.contains("scene_cloud"))
                frame.scene_cloud =
                    read_dxf_cloud(dir / node.at("scene_cloud").get<std::string>());
            for (const auto& [key, value] : node.at("object_clouds").items())
                frame.object_clouds[object_key(key, "object_clouds")] =
                    read_dxf_cloud(dir / value.get<std::string>());
            if (node.contains("object_poses"))
                for (const auto& [key, value] : node.at("object_poses").items())
                    frame.object_poses[object_key(key, "object_poses")] =
                        io_detail::pose_from_json(value, where + ".object_poses." + key);
            frame.left_hand = io_detail::pose_from_json(node.at("hand_poses").at("left"),
                                                        where + ".hand_poses.left");
            frame.right_hand = io_detail::pose_from_json(node.at("hand_poses").at("right"),
                                                         where + ".hand_poses.right");
            if (node.contains("left_hand_cloud"))
                frame.left_hand_cloud =
                    read_dxf_cloud(dir / node.at("left_hand_cloud").get<std::string>());
            if (node.contains("right_hand_cloud"))
                frame.right_hand_cloud =
                    read_dxf_cloud(dir / node.at("right_hand_cloud").get<std::string>());
            bundle.frames.push_back(std::move(frame));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }

    // Every frame must reference exactly the declared object set.
    for (size_t f = 0; f < bundle.frames.size(); ++f) {
        const auto& frame = bundle.frames[f];
        for (const auto& entry : frame.object_clouds) bundle.mesh_for(entry.first);
        if (frame.object_clouds.size() != bundle.object_ids.size())
            throw InvariantViolation("frames[" + std::to_string(f) +
                                     "]: object cloud set differs from the declared objects");
        for (const auto& entry : frame.object_poses) bundle.mesh_for(entry.first);
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Task annotations
// ---------------------------------------------------------------------------

struct TaskAnnotation {
    int num_embodiments = 2;
    int horizon = 0;
    std::vector<Task> tasks;
    std::vector<int> finger_counts;  // per task; -1 = use every finger
};

inline TaskAnnotation load_annotation(const std::filesystem::path& path) {
    auto in = io_detail::open_in(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("annotation: ") + e.what());
    }
    TaskAnnotation ann;
    try {
        ann.num_embodiments = doc.at("embodiments").get<int>();
        ann.horizon = doc.at("horizon").get<int>();
        for (const auto& node : doc.at("tasks")) {
            Task task;
            task.embodiments = node.at("embodiments").get<std::vector<int>>();
            task.object_id = node.at("object").get<int>();
            int prev = 0;
            for (const auto& sub : node.at("subactions")) {
                Subaction s;
                s.type = action_from_name(sub.at("type").get<std::string>());
                s.start_frame = sub.at("start").get<int>();
                if (s.start_frame < prev)
                    throw InvariantViolation(
                        "annotation: subaction start frames must not decrease");
                prev = s.start_frame;
                task.subactions.push_back(s);
            }
            ann.finger_counts.push_back(node.value("finger_count", -1));
            ann.tasks.push_back(std::move(task));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("annotation: ") + e.what());
    }
    return ann;
}

inline void write_annotation(const TaskAnnotation& ann, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["embodiments"] = ann.num_embodiments;
    doc["horizon"] = ann.horizon;
    doc["tasks"] = nlohmann::json::array();
    for (size_t i = 0; i < ann.tasks.size(); ++i) {
        const Task& task = ann.tasks[i];
        nlohmann::json node;
        node["embodiments"] = task.embodiments;
        node["object"] = task.object_id;
        if (i < ann.finger_counts.size() && ann.finger_counts[i] >= 0)
            node["finger_count"] = ann.finger_counts[i];
        node["subactions"] = nlohmann::json::array();
        for (const Subaction& s : task.subactions)
            node["subactions"].push_back(
                {{"type", action_name(s.type)}, {"start", s.start_frame}});
        doc["tasks"].push_back(std::move(node));
    }
    auto out = io_detail::open_out(path);
    out << doc.dump(2) << "\n";
}

// Cross-checks an annotation against the bundle it drives.
inline void validate_annotation(const TaskAnnotation& ann, const ReconBundle& bundle) {
    for (const Task& task : ann.tasks) bundle.mesh_for(task.object_id);
    if (ann.horizon < 1) throw InvariantViolation("annotation: horizon must be positive");
}

// ---------------------------------------------------------------------------
// Hand model files
// ---------------------------------------------------------------------------

inline HandModelSpec load_hand_model(const std::filesystem::path& path) {
    auto in = io_detail::open_in(path);
    return hand_from_stream(in);
}

// ---------------------------------------------------------------------------
// Demonstration datasets: dataset.jsonl metadata + one "DXR1" float64 blob
// per record, named by zero-padded record index.
// ---------------------------------------------------------------------------

namespace io_detail {

inline void put_pose_f64(std::ostream& out, const Pose& pose) {
    const Quat q = canonical_quat(pose.rotation);
    const double data[7] = {q.w(), q.x(), q.y(), q.z(), pose.translation.x(),
                            pose.translation.y(), pose.translation.z()};
    put_bytes(out, data, sizeof(data));
}

inline Pose get_pose_f64(std::istream& in, const char* what) {
    double data[7];
    get_bytes(in, data, sizeof(data), what);
    Pose pose;
    pose.rotation = Quat(data[0], data[1], data[2], data[3]);
    if (std::abs(pose.rotation.norm() - 1.0) > 1e-9)
        throw FormatError(std::string(what) + ": non-unit quaternion in blob");
    pose.translation = Vec3(data[4], data[5], data[6]);
    return pose;
}

inline std::string record_blob_name(size_t index) {
    std::ostringstream name;
    name << "record_" << std::setw(6) << std::setfill('0') << index << ".dxr";
    return name.str();
}

inline void write_demo_blob(const std::filesystem::path& path, const DemoRecord& record) {
    auto out = open_out(path);
    out.write("DXR1", 4);
    const uint32_t embodiments = static_cast<uint32_t>(record.hands.size());
    const uint32_t steps = static_cast<uint32_t>(record.timesteps());
    const uint32_t objects = static_cast<uint32_t>(record.object_ids.size());
    put_pod<uint32_t>(out, embodiments);
    put_pod<uint32_t>(out, steps);
    put_pod<uint32_t>(out, objects);
    for (const auto& track : record.hands)
        put_pod<uint32_t>(out,
                          track.empty() ? 0u : static_cast<uint32_t>(track[0].q.size()));
    for (const auto& track : record.hands)
        for (const HandState& state : track) {
            put_pose_f64(out, state.wrist);
            put_bytes(out, state.q.data(), state.q.size() * sizeof(double));
        }
    for (const auto& frame : record.object_poses)
        for (const Pose& pose : frame) put_pose_f64(out, pose);
    put_pod<uint8_t>(out, record.observations.empty() ? 0 : 1);
    for (const PointCloud& cloud : record.observations) {
        put_pod<uint32_t>(out, static_cast<uint32_t>(cloud.points.size()));
        uint8_t flags = 0;
        if (!cloud.normals.empty()) flags |= kFlagNormals;
        if (!cloud.colors.empty()) flags |= kFlagColors;
        put_pod<uint8_t>(out, flags);
        for (const Vec3& p : cloud.points) put_vec3_f64(out, p);
        for (const Vec3& n : cloud.normals) put_vec3_f64(out, n);
        for (const Vec3& c : cloud.colors) put_vec3_f64(out, c);
    }
}

inline void read_demo_blob(const std::filesystem::path& path, DemoRecord& record,
                           const std::vector<uint32_t>& joint_counts_hint) {
    auto in = open_in(path);
    const std::string what = path.filename().string();
    char magic[4];
    get_bytes(in, magic, 4, what.c_str());
    if (std::memcmp(magic, "DXR1", 4) != 0)
        throw FormatError(what + ": bad magic bytes (expected DXR1)");
    const auto embodiments = get_pod<uint32_t>(in, what.c_str());
    const auto steps = get_pod<uint32_t>(in, what.c_str());
    const auto objects = get_pod<uint32_t>(in, what.c_str());
    if (objects != record.object_ids.size())
        throw FormatError(what + ": object count disagrees with metadata");
    std::vector<uint32_t> joint_counts(embodiments);
    for (auto& j : joint_counts) j = get_pod<uint32_t>(in, what.c_str());
    if (!joint_counts_hint.empty() && joint_counts != joint_counts_hint)
        throw FormatError(what + ": joint counts disagree with metadata");

    record.hands.assign(embodiments, {});
    for (uint32_t e = 0; e < embodiments; ++e) {
        record.hands[e].resize(steps);
        for (uint32_t t = 0; t < steps; ++t) {
            HandState& state = record.hands[e][t];
            state.wrist = get_pose_f64(in, what.c_str());
            state.q.resize(joint_counts[e]);
            get_bytes(in, state.q.data(), state.q.size() * sizeof(double), what.c_str());
        }
    }
    record.object_poses.assign(steps, std::vector<Pose>(objects));
    for (uint32_t t = 0; t < steps; ++t)
        for (uint32_t o = 0; o < objects; ++o)
            record.object_poses[t][o] = get_pose_f64(in, what.c_str());
    const auto has_obs = get_pod<uint8_t>(in, what.c_str());
    record.observations.clear();
    if (has_obs) {
        record.observations.resize(steps);
        for (uint32_t t = 0; t < steps; ++t) {
            const auto count = get_pod<uint32_t>(in, what.c_str());
            const auto flags = get_pod<uint8_t>(in, what.c_str());
            PointCloud& cloud = record.observations[t];
            cloud.points.reserve(count);
            for (uint32_t i = 0; i < count; ++i)
                cloud.points.push_back(get_vec3_f64(in, what.c_str()));
            if (flags & kFlagNormals)
                for (uint32_t i = 0; i < count; ++i)
                    cloud.normals.push_back(get_vec3_f64(in, what.c_str()));
            if (flags & kFlagColors)
                for (uint32_t i = 0; i < count; ++i)
                    cloud.colors.push_back(get_vec3_f64(in, what.c_str()));
        }
    }
}

inline nlohmann::json segment_to_json(const ScheduledSegment& seg) {
    return {{"task", seg.task},
            {"subaction", seg.subaction},
            {"type", action_name(seg.type)},
            {"embodiments", seg.embodiments},
            {"start", seg.start},
            {"duration", seg.duration},
            {"natural_duration", seg.natural_duration},
            {"time_scale", seg.time_scale}};
}

inline ScheduledSegment segment_from_json(const nlohmann::json& node) {
    ScheduledSegment seg;
    seg.task = node.at("task").get<int>();
    seg.subaction = node.at("subaction").get<int>();
    seg.type = action_from_name(node.at("type").get<std::string>());
    seg.embodiments = node.at("embodiments").get<std::vector<int>>();
    seg.start = node.at("start").get<int>();
    seg.duration = node.at("duration").get<int>();
    seg.natural_duration = node.at("natural_duration").get<int>();
    seg.time_scale = node.at("time_scale").get<double>();
    return seg;
}

inline nlohmann::json grasp_to_json(const GraspSummary& grasp) {
    nlohmann::json node = {{"task", grasp.task},
                           {"object", grasp.object},
                           {"embodiments", grasp.embodiments},
                           {"contact_ids", grasp.contact_ids},
                           {"wrench_residual", grasp.wrench_residual}};
    node["hands"] = nlohmann::json::array();
    for (const HandState& state : grasp.hands)
        node["hands"].push_back({{"wrist", pose_to_json(state.wrist)}, {"q", state.q}});
    return node;
}

inline GraspSummary grasp_from_json(const nlohmann::json& node) {
    GraspSummary grasp;
    grasp.task = node.at("task").get<int>();
    grasp.object = node.at("object").get<int>();
    grasp.embodiments = node.at("embodiments").get<std::vector<int>>();
    grasp.contact_ids = node.at("contact_ids").get<std::vector<std::vector<int>>>();
    grasp.wrench_residual = node.at("wrench_residual").get<double>();
    for (const auto& hand : node.at("hands")) {
        HandState state;
        state.wrist = pose_from_json(hand.at("wrist"), "grasp wrist");
        state.q = hand.at("q").get<std::vector<double>>();
        grasp.hands.push_back(std::move(state));
    }
    return grasp;
}

}  // namespace io_detail

inline void write_demo_dataset(const std::vector<DemoRecord>& records,
                               const std::filesystem::path& dir) {
    if (records.empty()) throw EmptyInput("demo dataset: no records");
    std::filesystem::create_directories(dir);
    auto meta = io_detail::open_out(dir / "dataset.jsonl");
    for (size_t i = 0; i < records.size(); ++i) {
        const DemoRecord& record = records[i];
        record.validate();
        const std::string blob = io_detail::record_blob_name(i);
        io_detail::write_demo_blob(dir / blob, record);

        nlohmann::json node;
        node["record"] = i;
        node["blob"] = blob;
        node["bundle_id"] = record.bundle_id;
        node["augment_seed"] = record.augment_seed;
        node["object_scale"] = record.object_scale;
        node["frame_rate"] = record.frame_rate;
        node["camera_pose"] = io_detail::pose_to_json(record.camera_pose);
        node["object_ids"] = record.object_ids;
        node["joint_counts"] = nlohmann::json::array();
        for (const auto& track : record.hands)
            node["joint_counts"].push_back(track.empty() ? 0 : track[0].q.size());
        node["target_final"] = nlohmann::json::array();
        for (const Pose& pose : record.target_final)
            node["target_final"].push_back(io_detail::pose_to_json(pose));
        node["segments"] = nlohmann::json::array();
        for (const auto& seg : record.segments)
            node["segments"].push_back(io_detail::segment_to_json(seg));
        node["attachments"] = nlohmann::json::array();
        for (const Attachment& a : record.attachments)
            node["attachments"].push_back({{"embodiment", a.embodiment},
                                           {"object", a.object},
                                           {"start", a.start},
                                           {"end", a.end},
                                           {"offset", io_detail::pose_to_json(a.offset)}});
        node["grasps"] = nlohmann::json::array();
        for (const GraspSummary& grasp : record.grasps)
            node["grasps"].push_back(io_detail::grasp_to_json(grasp));
        meta << node.dump() << "\n";
    }
}

inline std::vector<DemoRecord> load_demo_dataset(const std::filesystem::path& dir) {
    auto meta = io_detail::open_in(dir / "dataset.jsonl");
    std::vector<DemoRecord> records;
    std::string line;
    size_t expected = 0;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        nlohmann::json node;
        try {
            node = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("dataset.jsonl line " + std::to_string(expected) + ": " +
                              e.what());
        }
        DemoRecord record;
        std::vector<uint32_t> joint_counts;
        try {
            if (node.at("record").get<size_t>() != expected)
                throw FormatError("dataset.jsonl: records out of order at line " +
                                  std::to_string(expected));
            record.bundle_id = node.at("bundle_id").get<std::string>();
            record.augment_seed = node.at("augment_seed").get<uint64_t>();
            record.object_scale = node.at("object_scale").get<double>();
            record.frame_rate = node.at("frame_rate").get<double>();
            record.camera_pose =
                io_detail::pose_from_json(node.at("camera_pose"), "camera_pose");
            record.object_ids = node.at("object_ids").get<std::vector<int>>();
            joint_counts = node.at("joint_counts").get<std::vector<uint32_t>>();
            for (const auto& pose : node.at("target_final"))
                record.target_final.push_back(
                    io_detail::pose_from_json(pose, "target_final"));
            for (const auto& seg : node.at("segments"))
                record.segments.push_back(io_detail::segment_from_json(seg));
            for (const auto& a : node.at("attachments")) {
                Attachment att;
                att.embodiment = a.at("embodiment").get<int>();
                att.object = a.at("object").get<int>();
                att.start = a.at("start").get<int>();
                att.end = a.at("end").get<int>();
                att.offset = io_detail::pose_from_json(a.at("offset"), "attachment offset");
                record.attachments.push_back(att);
            }
            if (node.contains("grasps"))
                for (const auto& grasp : node.at("grasps"))
                    record.grasps.push_back(io_detail::grasp_from_json(grasp));
            io_detail::read_demo_blob(dir / node.at("blob").get<std::string>(), record,
                                      joint_counts);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("dataset.jsonl line " + std::to_string(expected) + ": " +
                              e.what());
        }
        record.validate();
        records.push_back(std::move(record));
        ++expected;
    }
    if (records.empty()) throw FormatError("dataset.jsonl contains no records");
    return records;
}

}  // namespace dexforge
