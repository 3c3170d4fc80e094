#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "keylabel/annotations.hpp"
#include "keylabel/dense.hpp"
#include "keylabel/labels.hpp"
#include "keylabel/scene.hpp"
#include "keylabel/sparse_optimizer.hpp"
#include "keylabel/synthetic.hpp"

namespace kpl::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Parse a JSON file; throws MissingFile, ValidationError (bad syntax) or
/// SchemaVersionUnsupported.
Json read_json(const fs::path& path);
/// Pretty-printed, stable key order, trailing newline.
void write_json(const fs::path& path, const Json& doc);
/// Fails unless doc carries a supported schema_version.
void check_schema(const Json& doc, const std::string& where);

struct SceneManifest {
    std::string scene_id;
    fs::path color_dir;
    fs::path depth_dir;
    fs::path trajectory;
    std::optional<fs::path> cloud;
    CameraIntrinsics intrinsics;
    std::size_t frame_count = 0;
    double fps = 30.0;

    bool operator==(const SceneManifest&) const = default;
};

/// Relative paths are kept as written; load_scene resolves them against the
/// manifest's directory.
SceneManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const SceneManifest& manifest);

/// Validate the manifest against the files on disk and return a scene whose
/// frames load lazily. Throws MissingFile, TrajectoryLengthMismatch,
/// MalformedRow or ValidationError.
Scene load_scene(const fs::path& manifest_path);
/// The manifest's scene cloud. Throws MissingFile when none is listed.
ScenePointCloud load_scene_cloud(const fs::path& manifest_path);

Json to_json(const AnnotationEntry& entry);
/// `where` prefixes the JSON path in ValidationError contexts.
AnnotationEntry entry_from_json(const Json& j, const std::string& where);
Json to_json(const AnnotationFile& file);
AnnotationFile annotations_from_json(const Json& doc, const std::string& where);
AnnotationFile read_annotations(const fs::path& path);
void write_annotations(const fs::path& path, const AnnotationFile& file);

/// Check entries against N_k and the scenes: known scene id, frame in range,
/// pixel inside the image. Throws ValidationError naming the first bad entry.
void validate_annotations(const AnnotationFile& file, std::span<const Scene> scenes, const std::string& where = {});
void validate_entry(const AnnotationEntry& entry, int num_keypoints, std::span<const Scene> scenes,
                    const std::string& where);

struct SparseModelFile {
    std::string object;
    std::vector<std::string> keypoint_names;
    std::vector<std::string> scene_ids;
    SparseSolution solution;
};

/// JSON plus a sibling PLY of the keypoints (same stem).
void write_sparse_model(const fs::path& path, const SparseModelFile& model);
SparseModelFile read_sparse_model(const fs::path& path);

/// labels/<scene>.jsonl plus masks/<scene>/<frame>.png under `dir`.
void write_labels(const fs::path& dir, const LabelDataset& labels);
LabelDataset read_labels(const fs::path& dir);

struct ProjectConfig {
    std::string object;
    int num_keypoints = 0;
    std::vector<std::string> keypoint_names;
    std::vector<fs::path> scenes;  ///< manifest paths
    fs::path annotations = "annotations.json";
    fs::path output_dir = "output";
    SolverOptions solver;
    GrowthParams growth;
    int normal_neighbours = 16;
    FuseOptions fuse;
    LabelOptions labels;
    /// Where the stored WorldSpec lives for synthetic projects (evaluate).
    std::optional<fs::path> ground_truth;

    /// Path relative to the project directory, resolved.
    fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }
    fs::path root;  ///< directory holding project.json; not serialised
};

ProjectConfig read_project(const fs::path& path);
void write_project(const fs::path& path, const ProjectConfig& config);
Json to_json(const ProjectConfig& config);
Json solver_json(const SolverOptions& options);

Json to_json(const synth::WorldSpec& spec);
synth::WorldSpec world_spec_from_json(const Json& j, const std::string& where);
synth::WorldSpec read_world_spec(const fs::path& path);

Json to_json(const RigidTransformd& t);
RigidTransformd transform_from_json(const Json& j, const std::string& where);

}  // namespace kpl::io
