#include <doctest.h>

#include <fstream>

#include "keylabel/io.hpp"
#include "keylabel/pipeline.hpp"
#include "support.hpp"

using namespace kpl;
namespace fs = std::filesystem;

namespace {

synth::WorldSpec spec_for(std::uint64_t seed)
{
    synth::WorldSpec spec;
    spec.seed = seed;
    spec.num_scenes = 3;
    spec.frames_per_scene = 12;
    return spec;
}

template <typename F>
void expect_code(F&& fn, Errc code)
{
    try {
        fn();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == code);
    }
}

}  // namespace

TEST_CASE("hashing helpers")
{
    // Standard SHA-256 test vector.
    CHECK(pipeline::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(pipeline::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    test::TempDir dir("hash");
    io::write_file_atomic(dir / "x.txt", "abc");
    CHECK(pipeline::sha256_file(dir / "x.txt") == pipeline::sha256_hex("abc"));
    const std::string before = pipeline::sha256_tree(dir.path());
    io::write_file_atomic(dir / "x.txt", "abd");
    CHECK(pipeline::sha256_tree(dir.path()) != before);
}

TEST_CASE("annotation log overwrites resolve to the last click")
{
    const std::vector<AnnotationEntry> entries{{"a", 0, 1, Pixel(1, 1), "", ""},
                                               {"b", 0, 1, Pixel(2, 2), "", ""},
                                               {"a", 3, 1, Pixel(3, 3), "", ""},
                                               {"a", 0, 2, Pixel(4, 4), "", ""}};
    const auto resolved = pipeline::resolve_overwrites(entries);
    REQUIRE(resolved.size() == 3);
    std::size_t matches = 0;
    for (const auto& e : resolved)
        if (e.scene == "a" && e.keypoint == 1) {
            CHECK(e.frame == 3);
            ++matches;
        }
    CHECK(matches == 1);
}

TEST_CASE("stages need their prerequisites")
{
    test::TempDir dir("prereq");
    pipeline::simulate(spec_for(2), dir.path());
    expect_code([&] { pipeline::label(dir.path()); }, Errc::PrerequisiteMissing);
    expect_code([&] { pipeline::densify(dir.path()); }, Errc::PrerequisiteMissing);
    expect_code([&] { pipeline::evaluate(dir.path()); }, Errc::PrerequisiteMissing);
    expect_code([&] { pipeline::optimize(dir / "nowhere"); }, Errc::MissingFile);
}

TEST_CASE("full run, skip on unchanged inputs, identical forced reruns")
{
    test::TempDir dir("run");
    auto spec = spec_for(3);
    spec.num_scenes = 4;
    pipeline::simulate(spec, dir.path(), {.holdout = 1});
    const auto project = pipeline::open_project(dir.path());
    CHECK(project.scenes.size() == 3);

    const auto opt = pipeline::optimize(dir.path());
    CHECK_FALSE(opt.skipped);
    CHECK(opt.report.at("stage") == "optimize");
    CHECK(opt.report.at("metrics").at("converged") == true);
    const auto den = pipeline::densify(dir.path());
    CHECK(den.report.at("metrics").at("points").get<std::size_t>() > 1000);
    const auto lab = pipeline::label(dir.path());
    CHECK(lab.report.at("metrics").at("records").get<std::size_t>() > 0);
    const auto eva = pipeline::evaluate(dir.path());
    const auto& m = eva.report.at("metrics");
    CHECK(m.at("keypoint_3d_mean_mm").get<double>() < 1e-3);
    CHECK(m.at("keypoint_2d_mean_px").get<double>() < 0.5);
    CHECK(m.at("mean_iou").get<double>() > 0.9);
    CHECK(m.at("rotation_error_rad").get<double>() < 1e-6);

    const pipeline::Paths paths(project.config);
    const std::string sparse_hash = pipeline::sha256_file(paths.sparse_model);
    const std::string labels_hash = pipeline::sha256_tree(paths.labels);
    const std::string reports_hash = pipeline::sha256_tree(paths.reports);

    CHECK(pipeline::optimize(dir.path()).skipped);
    CHECK(pipeline::densify(dir.path()).skipped);
    CHECK(pipeline::label(dir.path()).skipped);
    CHECK(pipeline::evaluate(dir.path()).skipped);

    CHECK_FALSE(pipeline::optimize(dir.path(), true).skipped);
    pipeline::densify(dir.path(), true);
    pipeline::label(dir.path(), true);
    pipeline::evaluate(dir.path(), true);
    CHECK(pipeline::sha256_file(paths.sparse_model) == sparse_hash);
    CHECK(pipeline::sha256_tree(paths.labels) == labels_hash);
    CHECK(pipeline::sha256_tree(paths.reports) == reports_hash);

    // A changed setting invalidates the stage.
    SolverOptions solver = project.config.solver;
    solver.warm_start = !solver.warm_start;
    CHECK_FALSE(pipeline::optimize(dir.path(), false, solver).skipped);

    // Tampering with an output forces a rerun.
    pipeline::optimize(dir.path(), true);
    io::write_file_atomic(paths.sparse_model, "{}");
    CHECK_FALSE(pipeline::optimize(dir.path()).skipped);
    CHECK(pipeline::sha256_file(paths.sparse_model) == sparse_hash);

    // New clicks in the server log invalidate optimize.
    {
        std::ofstream log(project.annotationLogPath(), std::ios::app);
        const AnnotationEntry e = project.scenes.empty() ? AnnotationEntry{}
                                                         : pipeline::current_annotations(project).entries.front();
        log << io::to_json(e).dump() << "\n";
    }
    CHECK(pipeline::current_annotations(project).entries.size() ==
          io::read_annotations(project.annotationsPath()).entries.size() + 1);
    CHECK_FALSE(pipeline::optimize(dir.path()).skipped);

    // The held-out scene registers against the solved model.
    const fs::path held = dir.path() / "scenes" / "scene_03";
    const auto reg = pipeline::register_scene(dir.path(), held / "manifest.json", held / "annotations.json", true);
    CHECK(reg.report.at("metrics").at("rms_m").get<double>() < 1e-6);
    CHECK(reg.report.at("metrics").at("records").get<std::size_t>() > 0);
    CHECK(fs::exists(paths.registration / "scene_03.json"));
}

TEST_CASE("evaluate refuses a project without ground truth")
{
    test::TempDir dir("nogt");
    pipeline::simulate(spec_for(4), dir.path());
    io::ProjectConfig c = io::read_project(dir / "project.json");
    c.ground_truth.reset();
    io::write_project(dir / "project.json", c);
    pipeline::optimize(dir.path());
    pipeline::densify(dir.path());
    pipeline::label(dir.path());
    CHECK_THROWS_AS(pipeline::evaluate(dir.path()), Error);
}
