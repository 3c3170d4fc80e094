#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "keylabel/formats.hpp"
#include "keylabel/io.hpp"
#include "keylabel/pipeline.hpp"
#include "keylabel/server.hpp"

namespace fs = std::filesystem;
using namespace kpl;
using pipeline::Json;

namespace {

fs::path project_root(const std::string& flag)
{
    if (!flag.empty())
        return flag;
    if (const char* env = std::getenv(pipeline::kProjectEnv))
        return env;
    return fs::current_path();
}

void print(const pipeline::StageResult& r)
{
    Json out = {{"stage", r.stage}, {"skipped", r.skipped}, {"metrics", r.report.value("metrics", Json::object())}};
    std::cout << out.dump(2) << "\n";
}

void print_error(const std::string& error, const std::string& message, const std::string& context = {})
{
    Json j = {{"error", error}, {"message", message}};
    if (!context.empty())
        j["context"] = context;
    std::cerr << j.dump() << "\n";
}

server::AnnotationServer* g_server = nullptr;

void on_signal(int)
{
    if (g_server)
        g_server->stop();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Keypoint-based pose label generation for RGB-D recordings"};
    app.require_subcommand(1);
    std::string project;
    app.add_option("-p,--project", project,
                   std::string("project directory or project.json (default: $") + pipeline::kProjectEnv +
                       ", then the working directory)");
    bool force = false;

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic project with full ground truth");
    std::string spec_file;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> scenes;
    std::optional<int> keypoints;
    std::optional<std::string> object;
    std::optional<double> click_sigma;
    std::optional<double> depth_sigma;
    int holdout = 0;
    sim->add_option("--spec", spec_file, "world spec JSON")->check(CLI::ExistingFile);
    sim->add_option("-o,--out", out_dir, "output project directory")->required();
    sim->add_option("--seed", seed, "random seed (overrides --spec)");
    sim->add_option("--scenes", scenes, "number of scenes");
    sim->add_option("--keypoints", keypoints, "number of keypoints");
    sim->add_option("--object", object, "box | cylinder | composite");
    sim->add_option("--click-sigma", click_sigma, "click noise, pixels");
    sim->add_option("--depth-sigma", depth_sigma, "depth noise, meters");
    sim->add_option("--holdout", holdout, "trailing scenes kept out of the project for `register`");

    // optimize
    auto* opt = app.add_subcommand("optimize", "solve the sparse model and scene transforms");
    std::optional<int> max_iterations;
    std::optional<double> step_tolerance;
    std::optional<double> decrease_tolerance;
    std::optional<double> damping;
    bool warm_start = false;
    opt->add_option("--max-iterations", max_iterations);
    opt->add_option("--step-tolerance", step_tolerance);
    opt->add_option("--decrease-tolerance", decrease_tolerance, "relative objective decrease tolerance");
    opt->add_option("--damping", damping, "initial damping relative to max diag(J^T J)");
    opt->add_flag("--warm-start", warm_start, "initialize scene transforms from pairwise alignment");
    opt->add_flag("-f,--force", force, "rerun even if inputs are unchanged");

    auto* den = app.add_subcommand("densify", "grow and fuse the dense object model");
    den->add_flag("-f,--force", force);
    auto* lab = app.add_subcommand("label", "write keypoint, mask and box labels for every sampled frame");
    lab->add_flag("-f,--force", force);
    auto* eva = app.add_subcommand("evaluate", "score a synthetic project against its ground truth");
    eva->add_flag("-f,--force", force);

    auto* reg = app.add_subcommand("register", "register a new scene against the solved model");
    std::string manifest;
    std::string clicks;
    bool with_labels = false;
    reg->add_option("--scene", manifest, "scene manifest")->required()->check(CLI::ExistingFile);
    reg->add_option("--annotations", clicks, "annotation file with clicks in that scene")
        ->required()
        ->check(CLI::ExistingFile);
    reg->add_flag("--labels", with_labels, "also label the registered scene");
    reg->add_flag("-f,--force", force);

    auto* run = app.add_subcommand("run", "run several stages in order");
    std::vector<std::string> stages{"optimize", "densify", "label", "evaluate"};
    run->add_option("--stages", stages, "stages to run")
        ->delimiter(',')
        ->check(CLI::IsMember({"optimize", "densify", "label", "evaluate"}));
    run->add_flag("-f,--force", force);

    auto* serve = app.add_subcommand("annotate-serve", "serve the annotation API");
    std::string host = "127.0.0.1";
    int port = 8080;
    bool allow_solve = false;
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_flag("--allow-solve", allow_solve, "enable POST /api/solve");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what());
        return 2;
    }

    try {
        const fs::path root = project_root(project);
        if (*sim) {
            synth::WorldSpec spec;
            if (!spec_file.empty())
                spec = io::read_world_spec(spec_file);
            if (seed)
                spec.seed = *seed;
            if (scenes)
                spec.num_scenes = *scenes;
            if (keypoints)
                spec.num_keypoints = *keypoints;
            if (object)
                spec.object = *object;
            if (click_sigma)
                spec.noise.click_sigma = *click_sigma;
            if (depth_sigma)
                spec.noise.depth_sigma = *depth_sigma;
            if (spec_file.empty() && !seed)
                throw Error(Errc::SpecInvalid, "an explicit seed is required (--seed or --spec)");
            try {
                spec.validate();
            } catch (const Error& e) {
                throw Error(Errc::SpecInvalid, e.what(), spec_file);
            }
            print(pipeline::simulate(spec, out_dir, {.holdout = holdout}));
        } else if (*opt) {
            std::optional<SolverOptions> solver;
            if (max_iterations || step_tolerance || decrease_tolerance || damping || warm_start) {
                solver = io::read_project(pipeline::project_file(root)).solver;
                if (max_iterations)
                    solver->max_iterations = *max_iterations;
                if (step_tolerance)
                    solver->step_tolerance = *step_tolerance;
                if (decrease_tolerance)
                    solver->relative_decrease_tolerance = *decrease_tolerance;
                if (damping)
                    solver->initial_damping = *damping;
                if (warm_start)
                    solver->warm_start = true;
            }
            print(pipeline::optimize(root, force, solver));
        } else if (*den) {
            print(pipeline::densify(root, force));
        } else if (*lab) {
            print(pipeline::label(root, force));
        } else if (*eva) {
            const auto r = pipeline::evaluate(root, force);
            print(r);
            const io::ProjectConfig config = io::read_project(pipeline::project_file(root));
            std::cout << io::read_file(pipeline::Paths(config).evaluation_table);
        } else if (*reg) {
            print(pipeline::register_scene(root, manifest, clicks, with_labels, force));
        } else if (*run) {
            for (const auto& stage : stages) {
                if (stage == "optimize")
                    print(pipeline::optimize(root, force));
                else if (stage == "densify")
                    print(pipeline::densify(root, force));
                else if (stage == "label")
                    print(pipeline::label(root, force));
                else
                    print(pipeline::evaluate(root, force));
            }
        } else if (*serve) {
            server::AnnotationServer srv(root, {.allow_solve = allow_solve});
            g_server = &srv;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "serving " << pipeline::project_file(root).string() << " on http://" << host << ":" << port
                      << "\n";
            srv.listen(host, port);
            g_server = nullptr;
        }
    } catch (const Error& e) {
        std::cerr << pipeline::error_json(e).dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        print_error("InternalError", e.what());
        return 1;
    }
    return 0;
}
