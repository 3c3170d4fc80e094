#pragma once

#include <filesystem>
#include <memory>
#include <string>

namespace kpl::server {

struct ServerOptions {
    /// Enables POST /api/solve (a full optimize run in the background).
    bool allow_solve = false;
};

/// HTTP API for the annotation frontend, bound to one project.
///
///   GET  /api/project                       keypoint schema and scene ids
///   GET  /api/scenes                        per-scene frame count, fps, intrinsics
///   GET  /api/scenes/{s}/frames/{t}/color   stored PNG bytes
///   GET  /api/annotations                   ?raw=1 for the unresolved log
///   POST /api/annotations                   one entry or {"entries": [...]}
///   GET  /api/connectivity                  connectivity of the current clicks
///   POST /api/solve                         403 unless allow_solve
///   GET  /api/solve/status
class AnnotationServer {
public:
    AnnotationServer(const std::filesystem::path& project, ServerOptions options = {});
    ~AnnotationServer();
    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Bind and serve on a background thread. Port 0 picks a free port; the
    /// bound port is returned.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Bind and serve on the calling thread until stop().
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace kpl::server
