#include "keylabel/formats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "keylabel/io.hpp"

namespace kpl::io {

namespace {

/// Read-only view of a JSON value that knows its JSON path for errors.
class Node {
public:
    Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

    [[noreturn]] void fail(const std::string& message) const
    {
        throw Error(Errc::ValidationError, path_ + ": " + message, path_);
    }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key) && !j_.at(key).is_null(); }

    Node operator[](const char* key) const
    {
        if (!j_.is_object())
            fail("expected an object");
        const auto it = j_.find(key);
        if (it == j_.end())
            throw Error(Errc::ValidationError, path_ + "." + key + ": required field missing", path_ + "." + key);
        return Node(*it, path_ + "." + key);
    }

    Node operator[](std::size_t i) const
    {
        return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]");
    }

    std::size_t size() const
    {
        if (!j_.is_array())
            fail("expected an array");
        return j_.size();
    }

    double number() const
    {
        if (!j_.is_number())
            fail("expected a number");
        return j_.get<double>();
    }

    double positive() const
    {
        const double v = number();
        if (!(v > 0.0))
            fail("must be positive");
        return v;
    }

    long long integer() const
    {
        if (!j_.is_number_integer())
            fail("expected an integer");
        return j_.get<long long>();
    }

    std::size_t index() const
    {
        const long long v = integer();
        if (v < 0)
            fail("must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::string string() const
    {
        if (!j_.is_string())
            fail("expected a string");
        return j_.get<std::string>();
    }

    bool boolean() const
    {
        if (!j_.is_boolean())
            fail("expected true or false");
        return j_.get<bool>();
    }

    template <int N>
    Eigen::Matrix<double, N, 1> vec() const
    {
        if (size() != N)
            fail("expected " + std::to_string(N) + " numbers");
        Eigen::Matrix<double, N, 1> v;
        for (int i = 0; i < N; ++i)
            v[i] = (*this)[static_cast<std::size_t>(i)].number();
        return v;
    }

    std::vector<std::string> strings() const
    {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < size(); ++i)
            out.push_back((*this)[i].string());
        return out;
    }

    const Json& raw() const { return j_; }
    const std::string& path() const { return path_; }

private:
    const Json& j_;
    std::string path_;
};

std::string root_path(const std::string& where) { return where.empty() ? "$" : where + ":$"; }

Json vec_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json with_schema(Json body)
{
    Json doc = Json::object();
    doc["schema_version"] = kSchemaVersion;
    for (auto& [key, value] : body.items())
        doc[key] = std::move(value);
    return doc;
}

Json intrinsics_json(const CameraIntrinsics& in)
{
    return {{"fx", in.fx},       {"fy", in.fy},         {"cx", in.cx},
            {"cy", in.cy},       {"width", in.width},   {"height", in.height},
            {"depth_scale", in.depth_scale}};
}

CameraIntrinsics intrinsics_from(const Node& n)
{
    CameraIntrinsics in;
    in.fx = n["fx"].positive();
    in.fy = n["fy"].positive();
    in.cx = n["cx"].number();
    in.cy = n["cy"].number();
    in.width = static_cast<int>(n["width"].index());
    in.height = static_cast<int>(n["height"].index());
    if (n.has("depth_scale"))
        in.depth_scale = n["depth_scale"].positive();
    try {
        in.validate();
    } catch (const Error& e) {
        n.fail(e.what());
    }
    return in;
}

fs::path under(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::size_t count_files(const fs::path& dir)
{
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        n += e.is_regular_file() && e.path().extension() == ".png";
    return n;
}

}  // namespace

void check_schema(const Json& doc, const std::string& where)
{
    const Node root(doc, root_path(where));
    if (!doc.is_object())
        root.fail("expected a JSON object");
    const long long version = root["schema_version"].integer();
    if (version < 1 || version > kSchemaVersion)
        throw Error(Errc::SchemaVersionUnsupported,
                    "schema_version " + std::to_string(version) + " is not supported (max " +
                        std::to_string(kSchemaVersion) + ")",
                    where);
}

Json read_json(const fs::path& path)
{
    const std::string text = read_file(path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(Errc::ValidationError, std::string("invalid JSON: ") + e.what(), path.string());
    }
    check_schema(doc, path.string());
    return doc;
}

void write_json(const fs::path& path, const Json& doc) { write_file_atomic(path, doc.dump(2) + "\n"); }

Json to_json(const RigidTransformd& t)
{
    const Eigen::Vector4d q = t.wxyz();
    return {{"q_wxyz", Json::array({q[0], q[1], q[2], q[3]})}, {"t", vec_json(t.translation())}};
}

RigidTransformd transform_from_json(const Json& j, const std::string& where)
{
    const Node n(j, where);
    const Eigen::Vector4d q = n["q_wxyz"].vec<4>();
    if (!(q.norm() > 1e-12))
        n["q_wxyz"].fail("zero quaternion");
    return RigidTransformd::fromWxyz(q / q.norm(), n["t"].vec<3>());
}

// --- scene manifests -------------------------------------------------------

SceneManifest read_manifest(const fs::path& path)
{
    const Json doc = read_json(path);
    const Node n(doc, root_path(path.string()));
    SceneManifest m;
    m.scene_id = n["scene_id"].string();
    m.color_dir = n["color_dir"].string();
    m.depth_dir = n["depth_dir"].string();
    m.trajectory = n["trajectory"].string();
    if (n.has("cloud"))
        m.cloud = n["cloud"].string();
    m.intrinsics = intrinsics_from(n["intrinsics"]);
    m.frame_count = n["frame_count"].index();
    m.fps = n["fps"].positive();
    return m;
}

void write_manifest(const fs::path& path, const SceneManifest& m)
{
    Json body = {{"scene_id", m.scene_id},
                 {"color_dir", m.color_dir.generic_string()},
                 {"depth_dir", m.depth_dir.generic_string()},
                 {"trajectory", m.trajectory.generic_string()},
                 {"cloud", m.cloud ? Json(m.cloud->generic_string()) : Json(nullptr)},
                 {"intrinsics", intrinsics_json(m.intrinsics)},
                 {"frame_count", m.frame_count},
                 {"fps", m.fps}};
    write_json(path, with_schema(std::move(body)));
}

Scene load_scene(const fs::path& manifest_path)
{
    const SceneManifest m = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    const fs::path color_dir = under(base, m.color_dir);
    const fs::path depth_dir = under(base, m.depth_dir);
    const fs::path trajectory = under(base, m.trajectory);
    for (const auto& dir : {color_dir, depth_dir})
        if (!fs::is_directory(dir))
            throw Error(Errc::MissingFile, "frame directory not found", dir.string());
    if (!fs::exists(trajectory))
        throw Error(Errc::MissingFile, "trajectory file not found", trajectory.string());
    const std::size_t colors = count_files(color_dir);
    const std::size_t depths = count_files(depth_dir);
    if (colors != m.frame_count || depths != m.frame_count)
        throw Error(Errc::ValidationError,
                    "frame_count " + std::to_string(m.frame_count) + " but found " + std::to_string(colors) +
                        " colour and " + std::to_string(depths) + " depth frames",
                    manifest_path.string());
    for (std::size_t t = 0; t < m.frame_count; ++t)
        for (const auto& dir : {color_dir, depth_dir})
            if (!fs::exists(dir / frame_filename(t)))
                throw Error(Errc::MissingFile, "frame file missing", (dir / frame_filename(t)).string());
    Trajectory traj = read_trajectory(trajectory);
    if (traj.poses.size() != m.frame_count)
        throw Error(Errc::TrajectoryLengthMismatch,
                    "trajectory has " + std::to_string(traj.poses.size()) + " rows for " +
                        std::to_string(m.frame_count) + " frames",
                    trajectory.string());

    Scene scene;
    scene.id = m.scene_id;
    scene.intrinsics = m.intrinsics;
    scene.poses = std::move(traj.poses);
    scene.fps = m.fps;
    const CameraIntrinsics intr = m.intrinsics;
    scene.depth_source = [depth_dir, intr](std::size_t t) {
        DepthImage d = read_depth_png(depth_dir / frame_filename(t));
        if (d.width != intr.width || d.height != intr.height)
            throw Error(Errc::DimensionMismatch, "depth frame size differs from intrinsics",
                        (depth_dir / frame_filename(t)).string());
        return d;
    };
    scene.color_source = [color_dir](std::size_t t) { return read_color_png(color_dir / frame_filename(t)); };
    scene.color_path = [color_dir](std::size_t t) { return color_dir / frame_filename(t); };
    return scene;
}

ScenePointCloud load_scene_cloud(const fs::path& manifest_path)
{
    const SceneManifest m = read_manifest(manifest_path);
    if (!m.cloud)
        throw Error(Errc::MissingFile, "manifest lists no scene cloud", manifest_path.string());
    const fs::path path = under(manifest_path.parent_path(), *m.cloud);
    if (!fs::exists(path))
        throw Error(Errc::MissingFile, "scene cloud not found", path.string());
    return read_point_cloud_ply(path);
}

// --- annotations -----------------------------------------------------------

Json to_json(const AnnotationEntry& e)
{
    return {{"scene", e.scene},         {"frame", e.frame}, {"keypoint", e.keypoint}, {"u", e.pixel.x()},
            {"v", e.pixel.y()},         {"timestamp", e.timestamp}, {"author", e.author}};
}

AnnotationEntry entry_from_json(const Json& j, const std::string& where)
{
    const Node n(j, where.empty() ? "$" : where);
    if (!j.is_object())
        n.fail("expected an object");
    AnnotationEntry e;
    e.scene = n["scene"].string();
    e.frame = n["frame"].index();
    const long long k = n["keypoint"].integer();
    if (k < 0)
        n["keypoint"].fail("keypoint id must be >= 0");
    e.keypoint = static_cast<int>(k);
    e.pixel = Pixel(n["u"].number(), n["v"].number());
    if (n.has("timestamp"))
        e.timestamp = n["timestamp"].string();
    if (n.has("author"))
        e.author = n["author"].string();
    return e;
}

Json to_json(const AnnotationFile& f)
{
    Json entries = Json::array();
    for (const auto& e : f.entries)
        entries.push_back(to_json(e));
    return with_schema({{"object", f.object},
                        {"num_keypoints", f.num_keypoints},
                        {"keypoint_names", f.keypoint_names},
                        {"entries", entries}});
}

AnnotationFile annotations_from_json(const Json& doc, const std::string& where)
{
    check_schema(doc, where);
    const Node n(doc, root_path(where));
    AnnotationFile f;
    f.object = n["object"].string();
    const long long nk = n["num_keypoints"].integer();
    if (nk < 1)
        n["num_keypoints"].fail("must be >= 1");
    f.num_keypoints = static_cast<int>(nk);
    if (n.has("keypoint_names")) {
        f.keypoint_names = n["keypoint_names"].strings();
        if (f.keypoint_names.size() != static_cast<std::size_t>(f.num_keypoints))
            n["keypoint_names"].fail("expected num_keypoints names");
    }
    const Node entries = n["entries"];
    for (std::size_t i = 0; i < entries.size(); ++i) {
        AnnotationEntry e = entry_from_json(entries[i].raw(), entries[i].path());
        if (e.keypoint >= f.num_keypoints)
            entries[i]["keypoint"].fail("keypoint id " + std::to_string(e.keypoint) + " is not below num_keypoints " +
                                        std::to_string(f.num_keypoints));
        f.entries.push_back(std::move(e));
    }
    return f;
}

AnnotationFile read_annotations(const fs::path& path)
{
    return annotations_from_json(read_json(path), path.string());
}

void write_annotations(const fs::path& path, const AnnotationFile& file) { write_json(path, to_json(file)); }

void validate_entry(const AnnotationEntry& e, int num_keypoints, std::span<const Scene> scenes,
                    const std::string& where)
{
    auto fail = [&](const std::string& field, const std::string& message) {
        throw Error(Errc::ValidationError, where + "." + field + ": " + message, where + "." + field);
    };
    if (e.keypoint < 0 || e.keypoint >= num_keypoints)
        fail("keypoint", "keypoint id " + std::to_string(e.keypoint) + " outside [0, " +
                             std::to_string(num_keypoints) + ")");
    const auto it = std::find_if(scenes.begin(), scenes.end(), [&](const Scene& s) { return s.id == e.scene; });
    if (it == scenes.end())
        fail("scene", "unknown scene '" + e.scene + "'");
    if (e.frame >= it->frameCount())
        fail("frame", "frame " + std::to_string(e.frame) + " outside scene of " + std::to_string(it->frameCount()) +
                          " frames");
    if (!std::isfinite(e.pixel.x()) || !std::isfinite(e.pixel.y()) || !it->intrinsics.contains(e.pixel))
        fail("u", "pixel outside the image");
}

void validate_annotations(const AnnotationFile& file, std::span<const Scene> scenes, const std::string& where)
{
    for (std::size_t i = 0; i < file.entries.size(); ++i)
        validate_entry(file.entries[i], file.num_keypoints, scenes,
                       root_path(where) + ".entries[" + std::to_string(i) + "]");
}

// --- sparse model ----------------------------------------------------------

void write_sparse_model(const fs::path& path, const SparseModelFile& model)
{
    const SparseSolution& s = model.solution;
    Json keypoints = Json::array();
    for (std::size_t k = 0; k < s.keypoints.size(); ++k)
        keypoints.push_back({{"id", k},
                             {"name", k < model.keypoint_names.size() ? model.keypoint_names[k] : std::string()},
                             {"position", vec_json(s.keypoints[k])}});
    Json scenes = Json::array();
    for (std::size_t i = 0; i < s.transforms.size(); ++i) {
        Json t = to_json(s.transforms[i]);
        t["scene"] = i < model.scene_ids.size() ? model.scene_ids[i] : std::string();
        scenes.push_back(t);
    }
    Json residuals = Json::array();
    for (const auto& r : s.residuals)
        residuals.push_back({{"scene", r.scene}, {"keypoint", r.keypoint}, {"error", vec_json(r.error)}});
    fs::path ply = path;
    ply.replace_extension(".ply");
    Json body = {{"object", model.object},
                 {"frame_convention", "transforms map world coordinates into each scene's first-camera frame"},
                 {"keypoints", keypoints},
                 {"scene_transforms", scenes},
                 {"solver",
                  {{"converged", s.converged},
                   {"iterations", s.iterations},
                   {"objective", s.objective},
                   {"termination", s.termination},
                   {"objective_history", s.objective_history},
                   {"warm_start_fallbacks", s.warm_start_fallbacks},
                   {"rms_residual_m", s.rmsResidual()}}},
                 {"residuals", residuals},
                 {"points_ply", ply.filename().string()}};
    write_json(path, with_schema(std::move(body)));
    write_points_ply(ply, s.keypoints, PlyFormat::Ascii);
}

SparseModelFile read_sparse_model(const fs::path& path)
{
    const Json doc = read_json(path);
    const Node n(doc, root_path(path.string()));
    SparseModelFile m;
    m.object = n["object"].string();
    const Node kps = n["keypoints"];
    for (std::size_t k = 0; k < kps.size(); ++k) {
        if (kps[k]["id"].index() != k)
            kps[k]["id"].fail("keypoints must be listed in id order");
        m.keypoint_names.push_back(kps[k].has("name") ? kps[k]["name"].string() : std::string());
        m.solution.keypoints.push_back(kps[k]["position"].vec<3>());
    }
    const Node scenes = n["scene_transforms"];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        m.scene_ids.push_back(scenes[i]["scene"].string());
        m.solution.transforms.push_back(transform_from_json(scenes[i].raw(), scenes[i].path()));
    }
    const Node solver = n["solver"];
    m.solution.converged = solver["converged"].boolean();
    m.solution.iterations = static_cast<int>(solver["iterations"].integer());
    m.solution.objective = solver["objective"].number();
    m.solution.termination = solver["termination"].string();
    if (solver.has("objective_history")) {
        const Node h = solver["objective_history"];
        for (std::size_t i = 0; i < h.size(); ++i)
            m.solution.objective_history.push_back(h[i].number());
    }
    if (solver.has("warm_start_fallbacks")) {
        const Node w = solver["warm_start_fallbacks"];
        for (std::size_t i = 0; i < w.size(); ++i)
            m.solution.warm_start_fallbacks.push_back(w[i].index());
    }
    if (n.has("residuals")) {
        const Node r = n["residuals"];
        for (std::size_t i = 0; i < r.size(); ++i)
            m.solution.residuals.push_back(
                {r[i]["scene"].index(), static_cast<int>(r[i]["keypoint"].integer()), r[i]["error"].vec<3>()});
    }
    return m;
}

// --- labels ----------------------------------------------------------------

void write_labels(const fs::path& dir, const LabelDataset& labels)
{
    std::map<std::string, std::string> files;
    std::vector<std::string> order;
    for (const auto& rec : labels.records) {
        if (!files.count(rec.scene))
            order.push_back(rec.scene);
        Json kps = Json::array();
        for (std::size_t k = 0; k < rec.keypoints.size(); ++k) {
            const auto& kp = rec.keypoints[k];
            const bool projected = kp.depth > 0.0;
            kps.push_back({{"id", k},
                           {"u", projected ? Json(kp.pixel.x()) : Json(nullptr)},
                           {"v", projected ? Json(kp.pixel.y()) : Json(nullptr)},
                           {"depth", kp.depth},
                           {"visible", kp.visible}});
        }
        Json line = {{"schema_version", kSchemaVersion}, {"scene", rec.scene}, {"frame", rec.frame}, {"keypoints", kps}};
        if (rec.bbox)
            line["bbox"] = {{"center", Json::array({rec.bbox->center.x(), rec.bbox->center.y()})},
                            {"side", rec.bbox->side}};
        else
            line["bbox"] = nullptr;
        if (rec.mask) {
            const fs::path rel = fs::path("masks") / rec.scene / frame_filename(rec.frame);
            write_mask_png(dir / rel, *rec.mask);
            line["mask"] = rel.generic_string();
        } else {
            line["mask"] = nullptr;
        }
        files[rec.scene] += line.dump() + "\n";
    }
    for (const auto& scene : order)
        write_file_atomic(dir / (scene + ".jsonl"), files[scene]);
    Json failures = Json::array();
    for (const auto& f : labels.failures)
        failures.push_back({{"scene", f.scene}, {"frame", f.frame}, {"reason", f.reason}});
    write_json(dir / "index.json", with_schema({{"scenes", order}, {"records", labels.records.size()},
                                                {"failures", failures}}));
}

LabelDataset read_labels(const fs::path& dir)
{
    const fs::path index_path = dir / "index.json";
    const Json index = read_json(index_path);
    const Node idx(index, root_path(index_path.string()));
    LabelDataset out;
    for (const auto& scene : idx["scenes"].strings()) {
        const fs::path file = dir / (scene + ".jsonl");
        std::ifstream in(file);
        if (!in)
            throw Error(Errc::MissingFile, "label file missing", file.string());
        std::string text;
        std::size_t line_no = 0;
        while (std::getline(in, text)) {
            ++line_no;
            if (text.empty())
                continue;
            const std::string where = file.string() + ":" + std::to_string(line_no);
            Json j;
            try {
                j = Json::parse(text);
            } catch (const Json::parse_error& e) {
                throw Error(Errc::ValidationError, std::string("invalid JSON: ") + e.what(), where);
            }
            check_schema(j, where);
            const Node n(j, root_path(where));
            LabelRecord rec;
            rec.scene = n["scene"].string();
            rec.frame = n["frame"].index();
            const Node kps = n["keypoints"];
            for (std::size_t k = 0; k < kps.size(); ++k) {
                KeypointLabel kp;
                if (kps[k].has("u"))
                    kp.pixel = Pixel(kps[k]["u"].number(), kps[k]["v"].number());
                kp.depth = kps[k]["depth"].number();
                kp.visible = kps[k]["visible"].boolean();
                rec.keypoints.push_back(kp);
            }
            if (n.has("bbox"))
                rec.bbox = BoundingBox{n["bbox"]["center"].vec<2>(), n["bbox"]["side"].number()};
            if (n.has("mask"))
                rec.mask = read_mask_png(dir / n["mask"].string());
            out.records.push_back(std::move(rec));
        }
    }
    if (idx.has("failures")) {
        const Node f = idx["failures"];
        for (std::size_t i = 0; i < f.size(); ++i)
            out.failures.push_back({f[i]["scene"].string(), f[i]["frame"].index(), f[i]["reason"].string()});
    }
    return out;
}

// --- project config --------------------------------------------------------

Json solver_json(const SolverOptions& o)
{
    return {{"max_iterations", o.max_iterations},
            {"step_tolerance", o.step_tolerance},
            {"relative_decrease_tolerance", o.relative_decrease_tolerance},
            {"initial_damping", o.initial_damping},
            {"warm_start", o.warm_start},
            {"collinearity_tolerance", o.collinearity_tolerance}};
}

Json to_json(const ProjectConfig& c)
{
    Json scenes = Json::array();
    for (const auto& s : c.scenes)
        scenes.push_back(s.generic_string());
    Json fuse = {{"voxel_size", c.fuse.voxel_size}, {"object_size_cap", c.fuse.object_size_cap}};
    return with_schema(
        {{"object", c.object},
         {"num_keypoints", c.num_keypoints},
         {"keypoint_names", c.keypoint_names},
         {"scenes", scenes},
         {"annotations", c.annotations.generic_string()},
         {"output_dir", c.output_dir.generic_string()},
         {"ground_truth", c.ground_truth ? Json(c.ground_truth->generic_string()) : Json(nullptr)},
         {"solver", solver_json(c.solver)},
         {"growth",
          {{"neighbor_radius", c.growth.neighbor_radius},
           {"smoothness_angle_deg", c.growth.smoothness_angle * 180.0 / std::numbers::pi},
           {"max_seed_distance", c.growth.max_seed_distance},
           {"min_region_size", c.growth.min_region_size},
           {"curvature_threshold", c.growth.curvature_threshold},
           {"normal_neighbours", c.normal_neighbours}}},
         {"fuse", fuse},
         {"labels",
          {{"occlusion_tolerance", c.labels.occlusion_tolerance},
           {"occlusion_test", c.labels.occlusion_test},
           {"splat_radius", c.labels.splat_radius},
           {"closing_kernel", c.labels.closing_kernel},
           {"bbox_scale", c.labels.bbox_scale},
           {"min_bbox_side", c.labels.min_bbox_side},
           {"bbox_source", c.labels.bbox_source == BoxSource::Mask ? "mask" : "keypoints"},
           {"sampling_hz", c.labels.sampling_hz},
           {"masks", c.labels.masks}}}});
}

ProjectConfig read_project(const fs::path& path)
{
    const Json doc = read_json(path);
    const Node n(doc, root_path(path.string()));
    ProjectConfig c;
    c.root = path.parent_path();
    c.object = n["object"].string();
    const long long nk = n["num_keypoints"].integer();
    if (nk < 1)
        n["num_keypoints"].fail("must be >= 1");
    c.num_keypoints = static_cast<int>(nk);
    if (n.has("keypoint_names")) {
        c.keypoint_names = n["keypoint_names"].strings();
        if (c.keypoint_names.size() != static_cast<std::size_t>(c.num_keypoints))
            n["keypoint_names"].fail("expected num_keypoints names");
    }
    for (const auto& s : n["scenes"].strings())
        c.scenes.emplace_back(s);
    if (n.has("annotations"))
        c.annotations = n["annotations"].string();
    if (n.has("output_dir"))
        c.output_dir = n["output_dir"].string();
    if (n.has("ground_truth"))
        c.ground_truth = fs::path(n["ground_truth"].string());
    if (n.has("solver")) {
        const Node s = n["solver"];
        if (s.has("max_iterations"))
            c.solver.max_iterations = static_cast<int>(s["max_iterations"].integer());
        if (s.has("step_tolerance"))
            c.solver.step_tolerance = s["step_tolerance"].positive();
        if (s.has("relative_decrease_tolerance"))
            c.solver.relative_decrease_tolerance = s["relative_decrease_tolerance"].positive();
        if (s.has("initial_damping"))
            c.solver.initial_damping = s["initial_damping"].positive();
        if (s.has("warm_start"))
            c.solver.warm_start = s["warm_start"].boolean();
        if (s.has("collinearity_tolerance"))
            c.solver.collinearity_tolerance = s["collinearity_tolerance"].positive();
    }
    if (n.has("growth")) {
        const Node g = n["growth"];
        if (g.has("neighbor_radius"))
            c.growth.neighbor_radius = g["neighbor_radius"].positive();
        if (g.has("smoothness_angle_deg"))
            c.growth.smoothness_angle = g["smoothness_angle_deg"].positive() * std::numbers::pi / 180.0;
        if (g.has("max_seed_distance"))
            c.growth.max_seed_distance = g["max_seed_distance"].positive();
        if (g.has("min_region_size"))
            c.growth.min_region_size = g["min_region_size"].index();
        if (g.has("curvature_threshold"))
            c.growth.curvature_threshold = g["curvature_threshold"].positive();
        if (g.has("normal_neighbours"))
            c.normal_neighbours = static_cast<int>(g["normal_neighbours"].index());
    }
    if (n.has("fuse")) {
        const Node f = n["fuse"];
        if (f.has("voxel_size"))
            c.fuse.voxel_size = f["voxel_size"].positive();
        if (f.has("object_size_cap"))
            c.fuse.object_size_cap = f["object_size_cap"].positive();
    }
    if (n.has("labels")) {
        const Node l = n["labels"];
        if (l.has("occlusion_tolerance"))
            c.labels.occlusion_tolerance = l["occlusion_tolerance"].number();
        if (l.has("occlusion_test"))
            c.labels.occlusion_test = l["occlusion_test"].boolean();
        if (l.has("splat_radius"))
            c.labels.splat_radius = l["splat_radius"].number();
        if (l.has("closing_kernel"))
            c.labels.closing_kernel = static_cast<int>(l["closing_kernel"].index());
        if (l.has("bbox_scale"))
            c.labels.bbox_scale = l["bbox_scale"].positive();
        if (l.has("min_bbox_side"))
            c.labels.min_bbox_side = l["min_bbox_side"].positive();
        if (l.has("bbox_source")) {
            const std::string src = l["bbox_source"].string();
            if (src != "mask" && src != "keypoints")
                l["bbox_source"].fail("expected \"mask\" or \"keypoints\"");
            c.labels.bbox_source = src == "mask" ? BoxSource::Mask : BoxSource::Keypoints;
        }
        if (l.has("sampling_hz"))
            c.labels.sampling_hz = l["sampling_hz"].number();
        if (l.has("masks"))
            c.labels.masks = l["masks"].boolean();
    }
    try {
        c.growth.validate();
    } catch (const Error& e) {
        n["growth"].fail(e.what());
    }
    return c;
}

void write_project(const fs::path& path, const ProjectConfig& config) { write_json(path, to_json(config)); }

// --- synthetic world spec --------------------------------------------------

Json to_json(const synth::WorldSpec& s)
{
    return with_schema({{"seed", s.seed},
                        {"object", s.object},
                        {"box_size", vec_json(s.box_size)},
                        {"cylinder_radius", s.cylinder_radius},
                        {"cylinder_height", s.cylinder_height},
                        {"num_scenes", s.num_scenes},
                        {"num_keypoints", s.num_keypoints},
                        {"frames_per_scene", s.frames_per_scene},
                        {"fps", s.fps},
                        {"intrinsics", intrinsics_json(s.intrinsics)},
                        {"camera_distance_min", s.camera_distance_min},
                        {"camera_distance_max", s.camera_distance_max},
                        {"elevation_min_deg", s.elevation_min_deg},
                        {"elevation_max_deg", s.elevation_max_deg},
                        {"sweep_deg", s.sweep_deg},
                        {"annotation_frames", s.annotation_frames},
                        {"table_size", s.table_size},
                        {"cloud_spacing", s.cloud_spacing},
                        {"snap_clicks", s.snap_clicks},
                        {"scene_clouds", s.scene_clouds},
                        {"noise",
                         {{"depth_sigma", s.noise.depth_sigma},
                          {"click_sigma", s.noise.click_sigma},
                          {"trajectory_drift", s.noise.trajectory_drift}}}});
}

synth::WorldSpec world_spec_from_json(const Json& j, const std::string& where)
{
    check_schema(j, where);
    const Node n(j, root_path(where));
    synth::WorldSpec s;
    if (!n.has("seed"))
        n["seed"].fail("an explicit seed is required");
    const long long seed = n["seed"].integer();
    if (seed < 0)
        n["seed"].fail("must be non-negative");
    s.seed = static_cast<std::uint64_t>(seed);
    auto num = [&](const char* key, double& out) {
        if (n.has(key))
            out = n[key].number();
    };
    auto integer = [&](const char* key, int& out) {
        if (n.has(key))
            out = static_cast<int>(n[key].integer());
    };
    auto flag = [&](const char* key, bool& out) {
        if (n.has(key))
            out = n[key].boolean();
    };
    if (n.has("object"))
        s.object = n["object"].string();
    if (n.has("box_size"))
        s.box_size = n["box_size"].vec<3>();
    num("cylinder_radius", s.cylinder_radius);
    num("cylinder_height", s.cylinder_height);
    integer("num_scenes", s.num_scenes);
    integer("num_keypoints", s.num_keypoints);
    integer("frames_per_scene", s.frames_per_scene);
    num("fps", s.fps);
    if (n.has("intrinsics"))
        s.intrinsics = intrinsics_from(n["intrinsics"]);
    num("camera_distance_min", s.camera_distance_min);
    num("camera_distance_max", s.camera_distance_max);
    num("elevation_min_deg", s.elevation_min_deg);
    num("elevation_max_deg", s.elevation_max_deg);
    num("sweep_deg", s.sweep_deg);
    integer("annotation_frames", s.annotation_frames);
    num("table_size", s.table_size);
    num("cloud_spacing", s.cloud_spacing);
    flag("snap_clicks", s.snap_clicks);
    flag("scene_clouds", s.scene_clouds);
    if (n.has("noise")) {
        const Node z = n["noise"];
        if (z.has("depth_sigma"))
            s.noise.depth_sigma = z["depth_sigma"].number();
        if (z.has("click_sigma"))
            s.noise.click_sigma = z["click_sigma"].number();
        if (z.has("trajectory_drift"))
            s.noise.trajectory_drift = z["trajectory_drift"].number();
    }
    try {
        s.validate();
    } catch (const Error& e) {
        throw Error(Errc::SpecInvalid, e.what(), where);
    }
    return s;
}

synth::WorldSpec read_world_spec(const fs::path& path)
{
    const Json doc = read_json(path);
    const Json& spec = doc.contains("spec") ? doc.at("spec") : doc;
    return world_spec_from_json(spec, path.string());
}

}  // namespace kpl::io
