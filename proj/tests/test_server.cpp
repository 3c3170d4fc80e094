#include <doctest.h>

#include <chrono>
#include <thread>

#include "keylabel/io.hpp"
#include "keylabel/pipeline.hpp"
#include "keylabel/server.hpp"
#include "support.hpp"

// After Eigen, see server.cpp.
#include <httplib.h>

using namespace kpl;
using io::Json;

namespace {

synth::WorldSpec spec_for(std::uint64_t seed)
{
    synth::WorldSpec spec;
    spec.seed = seed;
    spec.num_scenes = 3;
    spec.frames_per_scene = 6;
    spec.scene_clouds = false;
    return spec;
}

Json body_of(const httplib::Result& r)
{
    REQUIRE(r);
    return Json::parse(r->body);
}

}  // namespace

TEST_CASE("read endpoints describe the project")
{
    test::TempDir dir("srv_read");
    pipeline::simulate(spec_for(1), dir.path());
    server::AnnotationServer srv(dir.path());
    const int port = srv.start();
    httplib::Client cli("127.0.0.1", port);

    auto r = cli.Get("/api/project");
    REQUIRE(r);
    CHECK(r->status == 200);
    const Json project = body_of(r);
    CHECK(project.at("num_keypoints") == 9);
    CHECK(project.at("scenes").size() == 3);
    CHECK(project.at("solve_enabled") == false);

    const Json scenes = body_of(cli.Get("/api/scenes"));
    REQUIRE(scenes.at("scenes").size() == 3);
    CHECK(scenes.at("scenes")[0].at("id") == "scene_00");
    CHECK(scenes.at("scenes")[0].at("frame_count") == 6);
    CHECK(scenes.at("scenes")[0].at("intrinsics").contains("fx"));

    r = cli.Get("/api/scenes/scene_01/frames/4/color");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    CHECK(r->body == io::read_file(dir.path() / "scenes" / "scene_01" / "color" / io::frame_filename(4)));

    r = cli.Get("/api/scenes/scene_01/frames/6/color");
    REQUIRE(r);
    CHECK(r->status == 404);
    r = cli.Get("/api/scenes/nope/frames/0/color");
    REQUIRE(r);
    CHECK(r->status == 404);
    CHECK(body_of(r).at("error") == "NotFound");
    r = cli.Get("/api/unknown");
    REQUIRE(r);
    CHECK(r->status == 404);

    const Json ann = body_of(cli.Get("/api/annotations"));
    const auto on_disk = io::read_annotations(dir.path() / "annotations.json");
    CHECK(ann.at("entries").size() == on_disk.entries.size());
    const Json only = body_of(cli.Get("/api/annotations?scene=scene_02"));
    for (const auto& e : only.at("entries"))
        CHECK(e.at("scene") == "scene_02");

    const Json conn = body_of(cli.Get("/api/connectivity"));
    CHECK(conn.at("solvable") == true);
    CHECK(conn.at("components").size() == 1);
    srv.stop();
}

TEST_CASE("posting annotations validates, appends and resolves overwrites")
{
    test::TempDir dir("srv_post");
    pipeline::simulate(spec_for(2), dir.path());
    server::AnnotationServer srv(dir.path());
    httplib::Client cli("127.0.0.1", srv.start());
    const std::size_t base = body_of(cli.Get("/api/annotations?raw=1")).at("entries").size();

    const Json entry = {{"scene", "scene_00"}, {"frame", 2}, {"keypoint", 4}, {"u", 100.5}, {"v", 200.25},
                        {"timestamp", "2024-05-01T10:00:00Z"}, {"author", "test"}};
    auto r = cli.Post("/api/annotations", entry.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 201);
    CHECK(body_of(r).at("accepted") == 1);
    Json moved = entry;
    moved["u"] = 110.0;
    r = cli.Post("/api/annotations", Json{{"entries", Json::array({moved})}}.dump(), "application/json");
    CHECK(r->status == 201);

    CHECK(body_of(cli.Get("/api/annotations?raw=1")).at("entries").size() == base + 2);
    const Json resolved = body_of(cli.Get("/api/annotations?scene=scene_00"));
    std::size_t hits = 0;
    for (const auto& e : resolved.at("entries"))
        if (e.at("keypoint") == 4) {
            CHECK(e.at("u") == 110.0);
            ++hits;
        }
    CHECK(hits == 1);

    // One bad entry rejects the whole batch.
    Json bad = entry;
    bad["keypoint"] = 9;
    r = cli.Post("/api/annotations", Json{{"entries", Json::array({entry, bad})}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    const Json err = body_of(r);
    CHECK(err.at("error") == "ValidationError");
    CHECK(err.at("message").get<std::string>().find("entries[1]") != std::string::npos);
    CHECK(body_of(cli.Get("/api/annotations?raw=1")).at("entries").size() == base + 2);

    bad = entry;
    bad["frame"] = 6;
    CHECK(cli.Post("/api/annotations", bad.dump(), "application/json")->status == 400);
    bad = entry;
    bad["scene"] = "scene_09";
    CHECK(cli.Post("/api/annotations", bad.dump(), "application/json")->status == 400);
    bad = entry;
    bad.erase("u");
    CHECK(cli.Post("/api/annotations", bad.dump(), "application/json")->status == 400);
    CHECK(cli.Post("/api/annotations", "{not json", "application/json")->status == 400);

    // The log persists and feeds the pipeline.
    const auto project = pipeline::open_project(dir.path());
    CHECK(pipeline::current_annotations(project).entries.size() == base + 2);
    srv.stop();
}

TEST_CASE("connectivity follows the posted clicks")
{
    const auto spec = spec_for(3);
    test::TempDir dir("srv_conn");
    pipeline::simulate(spec, dir.path());
    // Start from an empty click set.
    auto file = io::read_annotations(dir.path() / "annotations.json");
    const auto all = file.entries;
    file.entries.clear();
    io::write_annotations(dir.path() / "annotations.json", file);

    server::AnnotationServer srv(dir.path());
    httplib::Client cli("127.0.0.1", srv.start());
    Json conn = body_of(cli.Get("/api/connectivity"));
    CHECK(conn.at("solvable") == false);
    for (const auto& pair : conn.at("pairs")) {
        CHECK(pair.at("shared_keypoints").empty());
        CHECK(pair.at("rigid") == false);
    }

    // Keypoints clicked in both scene_00 and scene_01, first three non-collinear ones.
    const auto world = synth::generate(spec);
    const auto in0 = synth::clicked_keypoints(world, 0);
    const auto in1 = synth::clicked_keypoints(world, 1);
    std::vector<int> shared;
    for (int k : in0)
        if (std::find(in1.begin(), in1.end(), k) != in1.end())
            shared.push_back(k);
    REQUIRE(shared.size() >= 3);
    std::vector<int> pick;
    for (int k : shared) {
        std::vector<Point3> pts;
        for (int j : pick)
            pts.push_back(world.keypoints_world[static_cast<std::size_t>(j)]);
        pts.push_back(world.keypoints_world[static_cast<std::size_t>(k)]);
        if (pts.size() < 3 || non_collinear(pts, 1e-3))
            pick.push_back(k);
        if (pick.size() == 3)
            break;
    }
    REQUIRE(pick.size() == 3);

    Json entries = Json::array();
    for (const auto& e : all)
        if ((e.scene == "scene_00" || e.scene == "scene_01") &&
            std::find(pick.begin(), pick.end(), e.keypoint) != pick.end())
            entries.push_back(io::to_json(e));
    CHECK(cli.Post("/api/annotations", Json{{"entries", entries}}.dump(), "application/json")->status == 201);

    conn = body_of(cli.Get("/api/connectivity"));
    Json linked = Json::array();
    for (const auto& p : conn.at("pairs"))
        if (!p.at("shared_keypoints").empty())
            linked.push_back(p);
    REQUIRE(linked.size() == 1);
    const Json& pair = linked[0];
    CHECK(pair.at("a") == "scene_00");
    CHECK(pair.at("b") == "scene_01");
    CHECK(pair.at("rigid") == true);
    CHECK(pair.at("shared_keypoints").size() == 3);
    CHECK(conn.at("observed_keypoints").at("scene_02").empty());
    // scene_02 has nothing, so not everything is connected yet.
    CHECK(conn.at("solvable") == false);
    srv.stop();
}

TEST_CASE("solve endpoint is gated and reports its result")
{
    test::TempDir dir("srv_solve");
    pipeline::simulate(spec_for(4), dir.path());
    {
        server::AnnotationServer srv(dir.path());
        httplib::Client cli("127.0.0.1", srv.start());
        auto r = cli.Post("/api/solve", "", "application/json");
        REQUIRE(r);
        CHECK(r->status == 403);
        CHECK(body_of(cli.Get("/api/solve/status")).at("enabled") == false);
        srv.stop();
    }
    server::AnnotationServer srv(dir.path(), {.allow_solve = true});
    httplib::Client cli("127.0.0.1", srv.start());
    CHECK(body_of(cli.Get("/api/solve/status")).at("state") == "idle");
    auto r = cli.Post("/api/solve", "", "application/json");
    REQUIRE(r);
    CHECK(r->status == 202);
    Json status;
    for (int i = 0; i < 600; ++i) {
        status = body_of(cli.Get("/api/solve/status"));
        if (status.at("state") != "running")
            break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    CHECK(status.at("state") == "succeeded");
    CHECK(status.at("result").at("converged") == true);
    CHECK(std::filesystem::exists(dir.path() / "output" / "sparse_model.json"));
    srv.stop();
}
