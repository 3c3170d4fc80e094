#include "keylabel/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>

#include "keylabel/io.hpp"

namespace kpl::pipeline {

namespace {

using Digest = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

Digest new_digest()
{
    Digest ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw Error(Errc::IoError, "sha256 unavailable");
    return ctx;
}

std::string finish(EVP_MD_CTX* ctx)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", md[i]);
        hex += byte;
    }
    return hex;
}

std::string relative_to(const fs::path& p, const fs::path& root)
{
    const fs::path rel = fs::weakly_canonical(p).lexically_relative(fs::weakly_canonical(root));
    return rel.empty() ? p.generic_string() : rel.generic_string();
}

std::string hash_path(const fs::path& p)
{
    if (fs::is_directory(p))
        return sha256_tree(p);
    if (fs::is_regular_file(p))
        return sha256_file(p);
    return "missing";
}

Json hash_list(const std::vector<fs::path>& paths, const fs::path& root)
{
    Json out = Json::array();
    for (const auto& p : paths)
        out.push_back({{"path", relative_to(p, root)}, {"sha256", hash_path(p)}});
    return out;
}

struct StageOutput {
    std::vector<fs::path> files;
    Json metrics = Json::object();
};

/// Shared stage driver: hashes inputs, skips when a previous report matches
/// and its outputs are intact, otherwise runs `body` and writes the report.
StageResult run_stage(const std::string& stage, const fs::path& root, const fs::path& report_path,
                      const std::vector<fs::path>& inputs, bool force, const std::function<StageOutput()>& body,
                      const Json& settings = Json::object())
{
    const Json input_hashes = hash_list(inputs, root);
    if (!force && fs::exists(report_path)) {
        try {
            const Json old = io::read_json(report_path);
            bool intact = old.at("inputs") == input_hashes && old.at("settings") == settings &&
                          old.at("tool").at("version") == kToolVersion;
            for (const auto& out : old.at("outputs")) {
                if (!intact)
                    break;
                intact = hash_path(root / out.at("path").get<std::string>()) == out.at("sha256").get<std::string>();
            }
            if (intact)
                return {stage, true, old};
        } catch (const std::exception&) {
            // unreadable report: just rerun
        }
    }
    StageOutput out = body();
    Json report = Json::object();
    report["schema_version"] = io::kSchemaVersion;
    report["stage"] = stage;
    report["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
    report["inputs"] = input_hashes;
    report["settings"] = settings;
    report["outputs"] = hash_list(out.files, root);
    report["metrics"] = std::move(out.metrics);
    io::write_json(report_path, report);
    return {stage, false, report};
}

struct ManifestFiles {
    io::SceneManifest manifest;
    fs::path base;
    fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base / p; }
};

ManifestFiles manifest_files(const fs::path& manifest_path)
{
    return {io::read_manifest(manifest_path), manifest_path.parent_path()};
}

/// Files a stage reads from one scene.
void scene_inputs(const fs::path& manifest_path, bool depth, bool color, bool cloud, std::vector<fs::path>& out)
{
    const ManifestFiles m = manifest_files(manifest_path);
    out.push_back(manifest_path);
    out.push_back(m.resolve(m.manifest.trajectory));
    if (depth)
        out.push_back(m.resolve(m.manifest.depth_dir));
    if (color)
        out.push_back(m.resolve(m.manifest.color_dir));
    if (cloud && m.manifest.cloud)
        out.push_back(m.resolve(*m.manifest.cloud));
}

void require(const fs::path& p, const std::string& what, const std::string& stage)
{
    if (!fs::exists(p))
        throw Error(Errc::PrerequisiteMissing, what + " not found; run `" + std::string(kToolName) + " " + stage + "` first",
                    p.string());
}

io::SparseModelFile load_model(const Project& project, const Paths& paths)
{
    require(paths.sparse_model, "sparse model", "optimize");
    io::SparseModelFile model = io::read_sparse_model(paths.sparse_model);
    if (model.scene_ids != project.sceneIds())
        throw Error(Errc::PrerequisiteMissing, "sparse model was solved for a different scene list; rerun optimize",
                    paths.sparse_model.string());
    if (model.solution.keypoints.size() != static_cast<std::size_t>(project.config.num_keypoints))
        throw Error(Errc::PrerequisiteMissing, "sparse model keypoint count differs from the project; rerun optimize",
                    paths.sparse_model.string());
    return model;
}

Json vec3(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

double mean_of(const std::vector<double>& v)
{
    if (v.empty())
        return 0.0;
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

std::string sha256_hex(std::string_view bytes)
{
    Digest ctx = new_digest();
    EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size());
    return finish(ctx.get());
}

std::string sha256_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::MissingFile, "cannot open file", path.string());
    Digest ctx = new_digest();
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return finish(ctx.get());
}

std::string sha256_tree(const fs::path& dir)
{
    std::vector<std::string> lines;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            lines.push_back(e.path().lexically_relative(dir).generic_string() + "\t" + sha256_file(e.path()) + "\n");
    std::sort(lines.begin(), lines.end());
    std::string all;
    for (const auto& l : lines)
        all += l;
    return sha256_hex(all);
}

fs::path project_file(const fs::path& path)
{
    const fs::path file = fs::is_directory(path) ? path / "project.json" : path;
    if (!fs::exists(file))
        throw Error(Errc::MissingFile, "project file not found", file.string());
    return file;
}

Paths::Paths(const io::ProjectConfig& config)
    : output(config.resolve(config.output_dir)),
      sparse_model(output / "sparse_model.json"),
      dense_model(output / "dense_model.ply"),
      labels(output / "labels"),
      registration(output / "registration"),
      reports(output / "reports"),
      evaluation_json(output / "evaluation.json"),
      evaluation_table(output / "evaluation.txt")
{
}

std::vector<std::string> Project::sceneIds() const
{
    std::vector<std::string> ids;
    for (const auto& s : scenes)
        ids.push_back(s.id);
    return ids;
}

fs::path Project::annotationLogPath() const
{
    fs::path p = annotationsPath();
    return p.replace_extension(".log.jsonl");
}

Project open_project(const fs::path& path)
{
    Project p;
    p.file = project_file(path);
    p.config = io::read_project(p.file);
    std::set<std::string> seen;
    for (const auto& m : p.config.scenes) {
        p.manifests.push_back(p.config.resolve(m));
        p.scenes.push_back(io::load_scene(p.manifests.back()));
        if (!seen.insert(p.scenes.back().id).second)
            throw Error(Errc::ValidationError, "duplicate scene id '" + p.scenes.back().id + "'", p.file.string());
    }
    if (p.scenes.empty())
        throw Error(Errc::ValidationError, "project lists no scenes", p.file.string());
    return p;
}

AnnotationFile current_annotations(const Project& project)
{
    AnnotationFile file;
    const fs::path base = project.annotationsPath();
    if (fs::exists(base)) {
        file = io::read_annotations(base);
    } else {
        file.object = project.config.object;
        file.num_keypoints = project.config.num_keypoints;
        file.keypoint_names = project.config.keypoint_names;
    }
    if (file.num_keypoints != project.config.num_keypoints)
        throw Error(Errc::ValidationError, "annotation file declares a different keypoint count than the project",
                    base.string());
    const fs::path log = project.annotationLogPath();
    if (!fs::exists(log))
        return file;
    std::ifstream in(log);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        const std::string where = log.string() + ":" + std::to_string(line_no);
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw Error(Errc::ValidationError, std::string("invalid JSON: ") + e.what(), where);
        }
        file.entries.push_back(io::entry_from_json(j, where));
    }
    return file;
}

std::vector<AnnotationEntry> resolve_overwrites(std::span<const AnnotationEntry> entries)
{
    std::map<std::pair<std::string, int>, std::size_t> last;
    for (std::size_t i = 0; i < entries.size(); ++i)
        last[{entries[i].scene, entries[i].keypoint}] = i;
    std::vector<std::size_t> keep;
    for (const auto& [key, i] : last)
        keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    std::vector<AnnotationEntry> out;
    for (auto i : keep)
        out.push_back(entries[i]);
    return out;
}

// --- simulate --------------------------------------------------------------

void write_dataset(const synth::SyntheticWorld& world, const fs::path& dir, const SimulateOptions& options)
{
    const std::size_t total = world.scenes.size();
    if (options.holdout < 0 || static_cast<std::size_t>(options.holdout) >= total)
        throw Error(Errc::InvalidArgument, "holdout must leave at least one project scene");
    const std::size_t in_project = total - static_cast<std::size_t>(options.holdout);

    io::ProjectConfig config;
    config.object = world.spec.object;
    config.num_keypoints = world.spec.num_keypoints;
    config.keypoint_names = world.annotations.keypoint_names;
    config.ground_truth = fs::path("ground_truth/world.json");

    AnnotationFile project_clicks = world.annotations;
    project_clicks.entries.clear();

    for (std::size_t s = 0; s < total; ++s) {
        const auto& scene = world.scenes[s];
        const fs::path scene_dir = dir / "scenes" / scene.id;
        for (std::size_t t = 0; t < scene.recorded_poses.size(); ++t) {
            const synth::Render r = world.render(s, t, true, true);
            io::write_png(scene_dir / "color" / io::frame_filename(t), r.color);
            io::write_png(scene_dir / "depth" / io::frame_filename(t), r.depth);
        }
        io::Trajectory traj;
        for (std::size_t t = 0; t < scene.recorded_poses.size(); ++t)
            traj.timestamps.push_back(static_cast<double>(t) / world.spec.fps);
        traj.poses = scene.recorded_poses;
        io::write_trajectory(scene_dir / "trajectory.txt", traj);

        io::SceneManifest m;
        m.scene_id = scene.id;
        m.color_dir = "color";
        m.depth_dir = "depth";
        m.trajectory = "trajectory.txt";
        if (!scene.cloud.points.empty()) {
            io::write_point_cloud_ply(scene_dir / "cloud.ply", scene.cloud);
            m.cloud = fs::path("cloud.ply");
        }
        m.intrinsics = world.spec.intrinsics;
        m.frame_count = scene.recorded_poses.size();
        m.fps = world.spec.fps;
        io::write_manifest(scene_dir / "manifest.json", m);

        AnnotationFile own = world.annotations;
        own.entries.clear();
        for (const auto& e : world.annotations.entries)
            if (e.scene == scene.id)
                own.entries.push_back(e);
        if (s < in_project) {
            config.scenes.push_back(fs::path("scenes") / scene.id / "manifest.json");
            project_clicks.entries.insert(project_clicks.entries.end(), own.entries.begin(), own.entries.end());
        } else {
            io::write_annotations(scene_dir / "annotations.json", own);
        }
    }
    io::write_annotations(dir / "annotations.json", project_clicks);

    Json kps = Json::array();
    for (const auto& q : world.keypoints_world)
        kps.push_back(vec3(q));
    Json transforms = Json::array();
    for (std::size_t s = 0; s < total; ++s) {
        Json t = io::to_json(world.scene_transforms[s]);
        t["scene"] = world.scenes[s].id;
        transforms.push_back(t);
    }
    Json gt = Json::object();
    gt["schema_version"] = io::kSchemaVersion;
    gt["source"] = "synthetic generator";
    gt["spec"] = io::to_json(world.spec);
    gt["keypoints_world"] = kps;
    gt["scene_transforms"] = transforms;
    io::write_json(dir / "ground_truth" / "world.json", gt);

    io::write_project(dir / "project.json", config);
}

StageResult simulate(const synth::WorldSpec& spec, const fs::path& dir, const SimulateOptions& options)
{
    spec.validate();
    fs::create_directories(dir);
    const fs::path spec_file = dir / "ground_truth" / "spec.json";
    Json spec_doc = io::to_json(spec);
    spec_doc["holdout"] = options.holdout;
    io::write_json(spec_file, spec_doc);
    io::ProjectConfig layout;
    layout.root = dir;
    const Paths paths(layout);
    return run_stage("simulate", dir, paths.reports / "simulate.json", {spec_file}, false, [&] {
        const synth::SyntheticWorld world = synth::generate(spec);
        if (fs::exists(dir / "scenes"))
            fs::remove_all(dir / "scenes");
        write_dataset(world, dir, options);
        StageOutput out;
        out.files = {dir / "project.json", dir / "annotations.json", dir / "scenes", dir / "ground_truth" / "world.json"};
        out.metrics = {{"scenes", world.scenes.size()},
                       {"holdout", options.holdout},
                       {"keypoints", world.keypoints_world.size()},
                       {"annotation_entries", world.annotations.entries.size()}};
        return out;
    });
}

// --- optimize --------------------------------------------------------------

StageResult optimize(const fs::path& project_path, bool force, const std::optional<SolverOptions>& solver_override)
{
    const Project project = open_project(project_path);
    const SolverOptions solver = solver_override.value_or(project.config.solver);
    const Paths paths(project.config);
    std::vector<fs::path> inputs{project.file};
    if (fs::exists(project.annotationsPath()))
        inputs.push_back(project.annotationsPath());
    if (fs::exists(project.annotationLogPath()))
        inputs.push_back(project.annotationLogPath());
    for (const auto& m : project.manifests)
        scene_inputs(m, true, false, false, inputs);

    return run_stage("optimize", project.config.root, paths.reports / "optimize.json", inputs, force, [&] {
        const AnnotationFile clicks = current_annotations(project);
        io::validate_annotations(clicks, project.scenes, project.annotationsPath().string());
        const ObservationSet obs = assemble(clicks, project.scenes);
        const SparseSolution solution = solve(obs, solver);

        io::SparseModelFile model;
        model.object = project.config.object;
        model.keypoint_names = project.config.keypoint_names;
        model.scene_ids = project.sceneIds();
        model.solution = solution;
        io::write_sparse_model(paths.sparse_model, model);

        StageOutput out;
        fs::path ply = paths.sparse_model;
        out.files = {paths.sparse_model, ply.replace_extension(".ply")};
        Json failures = Json::array();
        for (const auto& f : obs.failures)
            failures.push_back({{"entry", f.entry_index},
                                {"scene", f.scene},
                                {"keypoint", f.keypoint},
                                {"frame", f.frame},
                                {"reason", f.reason}});
        out.metrics = {{"annotation_entries", clicks.entries.size()},
                       {"observations", obs.numObservations()},
                       {"lift_failures", failures},
                       {"converged", solution.converged},
                       {"termination", solution.termination},
                       {"iterations", solution.iterations},
                       {"rms_residual_m", solution.rmsResidual()},
                       {"warm_start_fallbacks", solution.warm_start_fallbacks}};
        return out;
    }, io::solver_json(solver));
}

// --- densify ---------------------------------------------------------------

DensifyResult densify_clouds(std::vector<ScenePointCloud> clouds, const SparseSolution& solution,
                             const io::ProjectConfig& config)
{
    if (clouds.size() != solution.transforms.size())
        throw Error(Errc::LengthMismatch, "one cloud per solved scene is required");
    DensifyResult result;
    std::vector<SceneRegion> regions;
    for (std::size_t s = 0; s < clouds.size(); ++s) {
        estimate_normals(clouds[s], config.normal_neighbours, Point3::Zero());
        std::vector<Point3> seeds;
        for (const auto& q : solution.keypoints)
            seeds.push_back(solution.transforms[s] * q);
        std::vector<std::size_t> idx;
        try {
            idx = grow_region(clouds[s], seeds, config.growth);
        } catch (const Error& e) {
            if (e.code() != Errc::NoSeedAttached)
                throw;
        }
        result.region_sizes.push_back(idx.size());
        SceneRegion region{s, {}};
        for (auto i : idx)
            region.points.push_back(clouds[s].points[i]);
        regions.push_back(std::move(region));
    }
    FuseOptions fuse_options = config.fuse;
    if (!solution.keypoints.empty()) {
        Point3 centroid = Point3::Zero();
        for (const auto& q : solution.keypoints)
            centroid += q;
        fuse_options.sparse_centroid = centroid / static_cast<double>(solution.keypoints.size());
    }
    result.model = fuse(regions, solution.transforms, fuse_options);
    return result;
}

StageResult densify(const fs::path& project_path, bool force)
{
    const Project project = open_project(project_path);
    const Paths paths(project.config);
    require(paths.sparse_model, "sparse model", "optimize");
    std::vector<fs::path> inputs{project.file, paths.sparse_model};
    for (const auto& m : project.manifests)
        scene_inputs(m, false, false, true, inputs);

    return run_stage("densify", project.config.root, paths.reports / "densify.json", inputs, force, [&] {
        const io::SparseModelFile model = load_model(project, paths);
        std::vector<ScenePointCloud> clouds;
        for (const auto& m : project.manifests)
            clouds.push_back(io::load_scene_cloud(m));
        const DensifyResult dense = densify_clouds(std::move(clouds), model.solution, project.config);
        io::write_dense_ply(paths.dense_model, dense.model);
        StageOutput out;
        out.files = {paths.dense_model};
        out.metrics = {{"points", dense.model.size()}, {"region_sizes", dense.region_sizes}};
        return out;
    });
}

// --- label -----------------------------------------------------------------

StageResult label(const fs::path& project_path, bool force)
{
    const Project project = open_project(project_path);
    const Paths paths(project.config);
    require(paths.sparse_model, "sparse model", "optimize");
    const bool masks = project.config.labels.masks;
    if (masks)
        require(paths.dense_model, "dense model", "densify");
    std::vector<fs::path> inputs{project.file, paths.sparse_model};
    if (masks)
        inputs.push_back(paths.dense_model);
    for (const auto& m : project.manifests)
        scene_inputs(m, true, false, false, inputs);

    return run_stage("label", project.config.root, paths.reports / "label.json", inputs, force, [&] {
        const io::SparseModelFile model = load_model(project, paths);
        std::optional<DenseModel> dense;
        if (masks)
            dense = io::read_dense_ply(paths.dense_model);
        const LabelDataset labels = label_dataset(model.solution.keypoints, model.solution.transforms,
                                                  dense ? &*dense : nullptr, project.scenes, project.config.labels);
        if (fs::exists(paths.labels))
            fs::remove_all(paths.labels);
        io::write_labels(paths.labels, labels);
        std::size_t visible = 0;
        std::size_t total = 0;
        for (const auto& r : labels.records)
            for (const auto& k : r.keypoints) {
                visible += k.visible;
                ++total;
            }
        StageOutput out;
        out.files = {paths.labels};
        out.metrics = {{"records", labels.records.size()},
                       {"frame_failures", labels.failures.size()},
                       {"visible_keypoint_fraction", total ? static_cast<double>(visible) / total : 0.0}};
        return out;
    });
}

// --- register --------------------------------------------------------------

StageResult register_scene(const fs::path& project_path, const fs::path& manifest, const fs::path& annotations,
                           bool with_labels, bool force)
{
    const Project project = open_project(project_path);
    const Paths paths(project.config);
    require(paths.sparse_model, "sparse model", "optimize");
    const Scene scene = io::load_scene(manifest);
    const bool masks = with_labels && project.config.labels.masks;
    if (masks)
        require(paths.dense_model, "dense model", "densify");
    std::vector<fs::path> inputs{project.file, paths.sparse_model, annotations};
    if (masks)
        inputs.push_back(paths.dense_model);
    scene_inputs(manifest, true, false, false, inputs);

    const fs::path result_path = paths.registration / (scene.id + ".json");
    const fs::path label_dir = paths.registration / scene.id / "labels";
    return run_stage(
        "register", project.config.root, paths.reports / ("register_" + scene.id + ".json"), inputs, force, [&] {
            const io::SparseModelFile model = load_model(project, paths);
            AnnotationFile clicks = io::read_annotations(annotations);
            std::vector<AnnotationEntry> own;
            for (std::size_t i = 0; i < clicks.entries.size(); ++i) {
                if (clicks.entries[i].scene != scene.id)
                    continue;
                io::validate_entry(clicks.entries[i], project.config.num_keypoints, std::span(&scene, 1),
                                   annotations.string() + ":$.entries[" + std::to_string(i) + "]");
                own.push_back(clicks.entries[i]);
            }
            clicks.entries = own;
            const RegistrationResult reg = register_new_scene(model.solution.keypoints, clicks, scene,
                                                              project.config.solver.collinearity_tolerance);
            Json doc = Json::object();
            doc["schema_version"] = io::kSchemaVersion;
            doc["scene"] = scene.id;
            doc["transform"] = io::to_json(reg.transform);
            doc["keypoint_ids"] = reg.keypoint_ids;
            doc["residuals_m"] = reg.residuals;
            doc["rms_m"] = reg.rms;
            io::write_json(result_path, doc);

            StageOutput out;
            out.files = {result_path};
            out.metrics = {{"clicks", own.size()}, {"keypoints_used", reg.keypoint_ids.size()}, {"rms_m", reg.rms}};
            if (with_labels) {
                std::optional<DenseModel> dense;
                if (masks)
                    dense = io::read_dense_ply(paths.dense_model);
                LabelOptions options = project.config.labels;
                options.masks = masks;
                const LabelDataset labels = label_dataset(model.solution.keypoints, std::span(&reg.transform, 1),
                                                          dense ? &*dense : nullptr, std::span(&scene, 1), options);
                if (fs::exists(label_dir))
                    fs::remove_all(label_dir);
                io::write_labels(label_dir, labels);
                out.files.push_back(label_dir);
                out.metrics["records"] = labels.records.size();
            }
            return out;
        });
}

// --- evaluate --------------------------------------------------------------

MetricReport evaluate_run(const synth::SyntheticWorld& world, std::span<const std::string> scene_ids,
                          const SparseSolution& solution, const LabelDataset& labels)
{
    if (scene_ids.size() != solution.transforms.size())
        throw Error(Errc::LengthMismatch, "one scene id per solved transform is required");
    std::map<std::string, std::size_t> world_index;
    for (std::size_t s = 0; s < world.scenes.size(); ++s)
        world_index[world.scenes[s].id] = s;
    auto lookup = [&](const std::string& id) {
        const auto it = world_index.find(id);
        if (it == world_index.end())
            throw Error(Errc::ValidationError, "scene '" + id + "' is not part of the ground truth");
        return it->second;
    };

    MetricReport report;
    report.scenes = scene_ids.size();
    report.keypoints = solution.keypoints.size();
    report.labels = labels.records.size();

    const SparseModelError e3 = sparse_model_error(solution.keypoints, world.keypoints_world, true);
    report.keypoint_3d_mean_mm = e3.mean * 1000.0;
    report.keypoint_3d_median_mm = e3.median * 1000.0;
    report.keypoint_3d_rms_mm = e3.rms * 1000.0;
    report.keypoint_3d_gauge_aligned = e3.gauge_aligned;

    // Scene-to-scene motion relative to the first listed scene (gauge free).
    std::vector<double> rot;
    std::vector<double> trans;
    const RigidTransformd est0_inv = solution.transforms[0].inverse();
    const RigidTransformd gt0_inv = world.scene_transforms[lookup(scene_ids[0])].inverse();
    for (std::size_t i = 1; i < scene_ids.size(); ++i) {
        const RigidTransformd est = solution.transforms[i] * est0_inv;
        const RigidTransformd gt = world.scene_transforms[lookup(scene_ids[i])] * gt0_inv;
        rot.push_back(rotation_geodesic(est.rotationMatrix(), gt.rotationMatrix()));
        trans.push_back((est.translation() - gt.translation()).norm() * 1000.0);
    }
    report.rotation_error_rad = mean_of(rot);
    report.rotation_error_deg = radians_to_degrees(report.rotation_error_rad);
    report.translation_error_mm = mean_of(trans);

    std::vector<double> per_frame_2d;
    std::vector<double> ious;
    for (const auto& rec : labels.records) {
        const std::size_t s = lookup(rec.scene);
        const auto gt = world.keypointPixels(s, rec.frame);
        std::vector<std::optional<Pixel>> pred;
        for (const auto& k : rec.keypoints)
            pred.push_back(k.visible ? std::optional<Pixel>(k.pixel) : std::nullopt);
        try {
            per_frame_2d.push_back(keypoint_error_2d(pred, gt));
        } catch (const Error& e) {
            if (e.code() != Errc::EmptyComparison)
                throw;
        }
        if (rec.mask)
            ious.push_back(iou(*rec.mask, world.render(s, rec.frame, false).object_mask).value);
    }
    report.keypoint_2d_frames = per_frame_2d.size();
    report.keypoint_2d_mean_px = mean_of(per_frame_2d);
    report.keypoint_2d_median_px = per_frame_2d.empty() ? 0.0 : median(per_frame_2d);
    report.iou_frames = ious.size();
    report.mean_iou = mean_of(ious);
    return report;
}

Json to_json(const MetricReport& r)
{
    return {{"ground_truth_source", r.ground_truth_source},
            {"keypoint_3d_mean_mm", r.keypoint_3d_mean_mm},
            {"keypoint_3d_median_mm", r.keypoint_3d_median_mm},
            {"keypoint_3d_rms_mm", r.keypoint_3d_rms_mm},
            {"keypoint_3d_gauge_aligned", r.keypoint_3d_gauge_aligned},
            {"keypoint_2d_mean_px", r.keypoint_2d_mean_px},
            {"keypoint_2d_median_px", r.keypoint_2d_median_px},
            {"keypoint_2d_frames", r.keypoint_2d_frames},
            {"mean_iou", r.mean_iou},
            {"iou_frames", r.iou_frames},
            {"rotation_error_rad", r.rotation_error_rad},
            {"rotation_error_deg", r.rotation_error_deg},
            {"translation_error_mm", r.translation_error_mm},
            {"scenes", r.scenes},
            {"keypoints", r.keypoints},
            {"labels", r.labels}};
}

std::string format_table(const MetricReport& r)
{
    char buf[1024];
    std::string out = "# ground truth: " + r.ground_truth_source + "\n";
    std::snprintf(buf, sizeof buf, "%-6s %-9s %-22s %-22s %-9s %-9s\n", "# KPs", "# scenes", "Mean KP Error (3D) mm",
                  "Mean KP Error (2D) px", "Mean IoU", "# labels");
    out += buf;
    std::snprintf(buf, sizeof buf, "%-6zu %-9zu %-22.4f %-22.4f %-9.4f %-9zu\n", r.keypoints, r.scenes,
                  r.keypoint_3d_mean_mm, r.keypoint_2d_mean_px, r.mean_iou, r.labels);
    out += buf;
    std::snprintf(buf, sizeof buf, "scene rotation error %.6g rad (%.6g deg), translation error %.6g mm\n",
                  r.rotation_error_rad, r.rotation_error_deg, r.translation_error_mm);
    out += buf;
    return out;
}

StageResult evaluate(const fs::path& project_path, bool force)
{
    const Project project = open_project(project_path);
    const Paths paths(project.config);
    if (!project.config.ground_truth)
        throw Error(Errc::PrerequisiteMissing, "project has no ground_truth entry; evaluation needs a synthetic project",
                    project.file.string());
    const fs::path gt_path = project.config.resolve(*project.config.ground_truth);
    require(gt_path, "ground truth", "simulate");
    require(paths.sparse_model, "sparse model", "optimize");
    require(paths.labels, "labels", "label");

    return run_stage("evaluate", project.config.root, paths.reports / "evaluate.json",
                     {project.file, gt_path, paths.sparse_model, paths.labels}, force, [&] {
                         const Json gt = io::read_json(gt_path);
                         const synth::WorldSpec spec =
                             io::world_spec_from_json(gt.at("spec"), gt_path.string() + ":$.spec");
                         const synth::SyntheticWorld world = synth::generate(spec);
                         const Json& stored = gt.at("keypoints_world");
                         for (std::size_t k = 0; k < world.keypoints_world.size(); ++k) {
                             const Eigen::Vector3d q(stored.at(k).at(0).get<double>(), stored.at(k).at(1).get<double>(),
                                                     stored.at(k).at(2).get<double>());
                             if ((q - world.keypoints_world[k]).norm() > 1e-9)
                                 throw Error(Errc::ValidationError,
                                             "regenerated ground truth differs from the stored keypoints",
                                             gt_path.string());
                         }
                         const io::SparseModelFile model = load_model(project, paths);
                         const LabelDataset labels = io::read_labels(paths.labels);
                         const MetricReport report =
                             evaluate_run(world, model.scene_ids, model.solution, labels);
                         Json doc = {{"schema_version", io::kSchemaVersion}};
                         doc.update(to_json(report));
                         io::write_json(paths.evaluation_json, doc);
                         io::write_file_atomic(paths.evaluation_table, format_table(report));
                         StageOutput out;
                         out.files = {paths.evaluation_json, paths.evaluation_table};
                         out.metrics = to_json(report);
                         return out;
                     });
}

Json to_json(const ConnectivityReport& report, std::span<const std::string> ids)
{
    auto name = [&](std::size_t i) { return i < ids.size() ? ids[i] : std::to_string(i); };
    Json pairs = Json::array();
    for (const auto& p : report.pairs)
        pairs.push_back({{"a", name(p.a)},
                         {"b", name(p.b)},
                         {"shared_keypoints", p.shared},
                         {"rigid", p.rigid},
                         {"spread_m", p.spread}});
    Json components = Json::array();
    for (const auto& c : report.components) {
        Json comp = Json::array();
        for (auto i : c)
            comp.push_back(name(i));
        components.push_back(comp);
    }
    Json under = Json::array();
    for (const auto& [a, b] : report.under_constrained)
        under.push_back(Json::array({name(a), name(b)}));
    return {{"pairs", pairs}, {"components", components}, {"under_constrained", under}, {"solvable", report.solvable}};
}

Json error_json(const Error& e)
{
    Json j = {{"error", std::string(to_string(e.code()))}, {"message", e.what()}};
    if (!e.context().empty())
        j["context"] = e.context();
    return j;
}

}  // namespace kpl::pipeline
