#include "keylabel/server.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include "keylabel/io.hpp"
#include "keylabel/pipeline.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen headers.
#include <httplib.h>

namespace kpl::server {

namespace fs = std::filesystem;
using io::Json;

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

int status_for(Errc code)
{
    switch (code) {
    case Errc::ValidationError:
    case Errc::SchemaVersionUnsupported:
    case Errc::InvalidArgument:
        return 400;
    case Errc::PrerequisiteMissing:
        return 409;
    default:
        return 500;
    }
}

void send_error(httplib::Response& res, int status, const std::string& error, const std::string& message,
                const std::string& context = {})
{
    Json body = {{"error", error}, {"message", message}};
    if (!context.empty())
        body["context"] = context;
    send_json(res, body, status);
}

}  // namespace

struct AnnotationServer::Impl {
    pipeline::Project project;
    ServerOptions options;
    std::map<std::string, std::size_t> scene_index;
    httplib::Server http;
    std::thread listener;

    // Readers of the annotation log share; appends and solves that read the
    // log take turns through this lock.
    std::shared_mutex log_mutex;

    std::mutex solve_mutex;
    std::thread solver;
    std::string solve_state = "idle";
    Json solve_result = nullptr;

    Impl(const fs::path& path, ServerOptions opts) : project(pipeline::open_project(path)), options(opts)
    {
        for (std::size_t s = 0; s < project.scenes.size(); ++s)
            scene_index[project.scenes[s].id] = s;
        routes();
    }

    ~Impl()
    {
        http.stop();
        if (listener.joinable())
            listener.join();
        if (solver.joinable())
            solver.join();
    }

    AnnotationFile annotations()
    {
        std::shared_lock lock(log_mutex);
        return pipeline::current_annotations(project);
    }

    void routes()
    {
        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            try {
                std::rethrow_exception(ep);
            } catch (const Error& e) {
                send_json(res, pipeline::error_json(e), status_for(e.code()));
            } catch (const std::exception& e) {
                send_error(res, 500, "InternalError", e.what());
            }
        });
        http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
            if (res.body.empty())
                send_error(res, res.status, res.status == 404 ? "NotFound" : "HttpError",
                           "no resource at " + req.path, req.path);
        });

        http.Get("/api/project", [this](const httplib::Request&, httplib::Response& res) {
            const auto& c = project.config;
            send_json(res, {{"schema_version", io::kSchemaVersion},
                            {"object", c.object},
                            {"num_keypoints", c.num_keypoints},
                            {"keypoint_names", c.keypoint_names},
                            {"scenes", project.sceneIds()},
                            {"solve_enabled", options.allow_solve}});
        });

        http.Get("/api/scenes", [this](const httplib::Request&, httplib::Response& res) {
            Json scenes = Json::array();
            for (const auto& s : project.scenes)
                scenes.push_back({{"id", s.id},
                                  {"frame_count", s.frameCount()},
                                  {"fps", s.fps},
                                  {"width", s.intrinsics.width},
                                  {"height", s.intrinsics.height},
                                  {"intrinsics",
                                   {{"fx", s.intrinsics.fx},
                                    {"fy", s.intrinsics.fy},
                                    {"cx", s.intrinsics.cx},
                                    {"cy", s.intrinsics.cy}}}});
            send_json(res, {{"scenes", scenes}});
        });

        http.Get(R"(/api/scenes/([^/]+)/frames/(\d+)/color)", [this](const httplib::Request& req,
                                                                     httplib::Response& res) {
            const auto it = scene_index.find(req.matches[1].str());
            if (it == scene_index.end())
                return send_error(res, 404, "NotFound", "unknown scene '" + req.matches[1].str() + "'");
            const Scene& scene = project.scenes[it->second];
            std::size_t frame = 0;
            try {
                frame = std::stoull(req.matches[2].str());
            } catch (const std::exception&) {
                return send_error(res, 404, "NotFound", "frame index out of range");
            }
            if (frame >= scene.frameCount() || !scene.color_path)
                return send_error(res, 404, "NotFound",
                                  "scene '" + scene.id + "' has no frame " + req.matches[2].str());
            res.set_content(io::read_file(scene.color_path(frame)), "image/png");
        });

        http.Get("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
            AnnotationFile file = annotations();
            const bool raw = req.has_param("raw") && req.get_param_value("raw") != "0";
            if (!raw)
                file.entries = pipeline::resolve_overwrites(file.entries);
            if (req.has_param("scene")) {
                const std::string scene = req.get_param_value("scene");
                std::erase_if(file.entries, [&](const AnnotationEntry& e) { return e.scene != scene; });
            }
            send_json(res, io::to_json(file));
        });

        http.Post("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
            Json body;
            try {
                body = Json::parse(req.body);
            } catch (const Json::parse_error& e) {
                return send_error(res, 400, "ValidationError", std::string("invalid JSON: ") + e.what(), "$");
            }
            std::vector<AnnotationEntry> entries;
            const int nk = project.config.num_keypoints;
            if (body.is_object() && body.contains("entries")) {
                if (!body.at("entries").is_array())
                    return send_error(res, 400, "ValidationError", "$.entries: expected an array", "$.entries");
                for (std::size_t i = 0; i < body.at("entries").size(); ++i) {
                    const std::string where = "$.entries[" + std::to_string(i) + "]";
                    entries.push_back(io::entry_from_json(body.at("entries").at(i), where));
                    io::validate_entry(entries.back(), nk, project.scenes, where);
                }
            } else {
                entries.push_back(io::entry_from_json(body, "$"));
                io::validate_entry(entries.back(), nk, project.scenes, "$");
            }
            std::string lines;
            for (const auto& e : entries)
                lines += io::to_json(e).dump() + "\n";
            {
                std::unique_lock lock(log_mutex);
                const fs::path log = project.annotationLogPath();
                std::ofstream out(log, std::ios::app | std::ios::binary);
                out << lines;
                out.flush();
                if (!out)
                    throw Error(Errc::IoError, "cannot append to the annotation log", log.string());
            }
            send_json(res, {{"accepted", entries.size()}}, 201);
        });

        http.Get("/api/connectivity", [this](const httplib::Request&, httplib::Response& res) {
            const AnnotationFile file = annotations();
            const ObservationSet obs = assemble(file, project.scenes);
            const ConnectivityReport report =
                check_connectivity(obs, project.config.solver.collinearity_tolerance);
            Json body = pipeline::to_json(report, project.sceneIds());
            Json observed = Json::object();
            for (std::size_t s = 0; s < obs.numScenes(); ++s) {
                Json ids = Json::array();
                for (const auto& [k, o] : obs.scenes[s])
                    ids.push_back(k);
                observed[obs.scene_ids[s]] = ids;
            }
            body["observed_keypoints"] = observed;
            Json failures = Json::array();
            for (const auto& f : obs.failures)
                failures.push_back({{"scene", f.scene}, {"keypoint", f.keypoint}, {"frame", f.frame}, {"reason", f.reason}});
            body["lift_failures"] = failures;
            send_json(res, body);
        });

        http.Post("/api/solve", [this](const httplib::Request&, httplib::Response& res) {
            if (!options.allow_solve)
                return send_error(res, 403, "Forbidden", "full solve is disabled; start the server with --allow-solve");
            std::lock_guard lock(solve_mutex);
            if (solve_state == "running")
                return send_error(res, 409, "Busy", "a solve is already running");
            if (solver.joinable())
                solver.join();
            solve_state = "running";
            solve_result = nullptr;
            solver = std::thread([this] { run_solve(); });
            send_json(res, {{"state", "running"}}, 202);
        });

        http.Get("/api/solve/status", [this](const httplib::Request&, httplib::Response& res) {
            std::lock_guard lock(solve_mutex);
            send_json(res, {{"state", solve_state}, {"enabled", options.allow_solve}, {"result", solve_result}});
        });
    }

    void run_solve()
    {
        Json result;
        std::string state;
        try {
            std::shared_lock lock(log_mutex);
            const pipeline::StageResult r = pipeline::optimize(project.file);
            result = r.report.at("metrics");
            state = "succeeded";
        } catch (const Error& e) {
            result = pipeline::error_json(e);
            state = "failed";
        } catch (const std::exception& e) {
            result = {{"error", "InternalError"}, {"message", e.what()}};
            state = "failed";
        }
        std::lock_guard lock(solve_mutex);
        solve_state = state;
        solve_result = std::move(result);
    }
};

AnnotationServer::AnnotationServer(const fs::path& project, ServerOptions options)
    : impl_(std::make_unique<Impl>(project, options))
{
}

AnnotationServer::~AnnotationServer() = default;

int AnnotationServer::start(const std::string& host, int port)
{
    int bound = port;
    if (port == 0) {
        bound = impl_->http.bind_to_any_port(host);
    } else if (!impl_->http.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0)
        throw Error(Errc::IoError, "cannot bind " + host + ":" + std::to_string(port));
    impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return bound;
}

void AnnotationServer::listen(const std::string& host, int port)
{
    if (!impl_->http.listen(host, port))
        throw Error(Errc::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

void AnnotationServer::stop()
{
    impl_->http.stop();
    if (impl_->listener.joinable())
        impl_->listener.join();
}

}  // namespace kpl::server
