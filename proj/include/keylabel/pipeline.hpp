#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "keylabel/dense.hpp"
#include "keylabel/formats.hpp"
#include "keylabel/labels.hpp"
#include "keylabel/metrics.hpp"
#include "keylabel/registration.hpp"
#include "keylabel/sparse_optimizer.hpp"
#include "keylabel/synthetic.hpp"

namespace kpl::pipeline {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kToolName = "keylabel";
inline constexpr const char* kToolVersion = "1.0.0";
/// Environment variable naming the project directory or project.json.
inline constexpr const char* kProjectEnv = "KEYLABEL_PROJECT";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const fs::path& path);
/// Hash of every regular file below `dir` (relative path + content hash, sorted).
std::string sha256_tree(const fs::path& dir);

/// Accepts a project directory or a path to its project.json.
fs::path project_file(const fs::path& path);

/// Artifact locations under the project's output directory.
struct Paths {
    fs::path output;
    fs::path sparse_model;
    fs::path dense_model;
    fs::path labels;
    fs::path registration;
    fs::path reports;
    fs::path evaluation_json;
    fs::path evaluation_table;

    explicit Paths(const io::ProjectConfig& config);
};

struct Project {
    io::ProjectConfig config;
    fs::path file;
    std::vector<fs::path> manifests;  ///< resolved
    std::vector<Scene> scenes;

    std::vector<std::string> sceneIds() const;
    fs::path annotationsPath() const { return config.resolve(config.annotations); }
    /// Append log written by the annotation server, next to the annotation file.
    fs::path annotationLogPath() const;
};

Project open_project(const fs::path& path);

/// The annotation file followed by every entry of the append log, in order.
/// assemble's last-click-wins rule resolves overwrites.
AnnotationFile current_annotations(const Project& project);
/// One entry per (scene, keypoint): the last one.
std::vector<AnnotationEntry> resolve_overwrites(std::span<const AnnotationEntry> entries);

struct StageResult {
    std::string stage;
    bool skipped = false;  ///< inputs and outputs unchanged since the last run
    Json report;
};

struct SimulateOptions {
    /// The last `holdout` scenes are written to disk but left out of the
    /// project; their clicks go to scenes/<id>/annotations.json.
    int holdout = 0;
};

/// Write a synthetic world as a project directory.
void write_dataset(const synth::SyntheticWorld& world, const fs::path& dir, const SimulateOptions& options = {});
StageResult simulate(const synth::WorldSpec& spec, const fs::path& dir, const SimulateOptions& options = {});

/// `solver` replaces the project's solver settings for this run.
StageResult optimize(const fs::path& project, bool force = false,
                     const std::optional<SolverOptions>& solver = std::nullopt);
StageResult densify(const fs::path& project, bool force = false);
StageResult label(const fs::path& project, bool force = false);
/// Register a scene outside the project from its manifest and clicks.
StageResult register_scene(const fs::path& project, const fs::path& manifest, const fs::path& annotations,
                           bool with_labels = false, bool force = false);
StageResult evaluate(const fs::path& project, bool force = false);

struct DensifyResult {
    DenseModel model;
    std::vector<std::size_t> region_sizes;  ///< per scene; 0 when no seed attached
};

/// Grow each scene's cloud from the projected keypoints and fuse the regions.
/// Scenes where no seed reaches the cloud contribute nothing.
DensifyResult densify_clouds(std::vector<ScenePointCloud> clouds, const SparseSolution& solution,
                             const io::ProjectConfig& config);

/// Scores a run against the generator's ground truth. `scene_ids` pairs with
/// the solution's transforms and names world scenes.
MetricReport evaluate_run(const synth::SyntheticWorld& world, std::span<const std::string> scene_ids,
                          const SparseSolution& solution, const LabelDataset& labels);

Json to_json(const MetricReport& report);
/// Plain-text results table, one row per run.
std::string format_table(const MetricReport& report);

Json to_json(const ConnectivityReport& report, std::span<const std::string> scene_ids);

/// Error payload written to stderr by the CLI and returned by the server.
Json error_json(const Error& e);

}  // namespace kpl::pipeline
