#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmtouch/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmtouch;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,  // bad flags or invalid configuration
    kMissingDependency = 3,
    kRuntime = 4,
    kBadArtifact = 5,
};

struct Options {
    std::string config_path;
    std::string run_dir = "run";
    std::optional<std::uint64_t> seed;
    bool paper_scale = false;
    std::string method = "both";
    bool verbose = false;
};

RunConfig resolve_config(const Options& o, bool fresh) {
    RunConfig c;
    const fs::path snapshot = RunPaths{o.run_dir}.config();
    if (!o.config_path.empty())
        c = RunConfig::load(o.config_path);
    else if (!fresh && fs::exists(snapshot))
        c = RunConfig::load(snapshot.string());
    if (o.seed) c.seed = *o.seed;
    if (o.paper_scale) c.apply_paper_scale();
    if (o.verbose) c.training.verbose = true;
    c.validate();
    return c;
}

std::vector<Method> methods_of(const std::string& m) {
    if (m == "both") return {Method::csp, Method::cnn};
    return {parse_method(m)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Radar touch localization: simulation, CSP and CNN positioning, evaluation"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON configuration (overrides defaults)")->check(CLI::ExistingFile);
        sub->add_option("--run-dir", o.run_dir, "Run directory for all artifacts")->capture_default_str();
        sub->add_option("--seed", o.seed, "Master seed");
        sub->add_flag("--paper-scale", o.paper_scale, "50 train / 15 val-test sessions");
        sub->add_option("--method", o.method, "Positioning method")
            ->check(CLI::IsMember({"csp", "cnn", "both"}))
            ->capture_default_str();
        sub->add_flag("-v,--verbose", o.verbose, "Per-epoch training log");
    };
    struct Stage {
        const char* name;
        const char* help;
    };
    const std::vector<Stage> stages = {
        {"simulate", "Record synthetic sessions and write the dataset container"},
        {"calibrate", "Estimate per-sensor range offsets from the train split"},
        {"csp-eval", "Evaluate CSP positioning on the test split"},
        {"train", "Train the CNN locator"},
        {"cnn-eval", "Evaluate the CNN locator on the test split"},
        {"bench-latency", "Single-threaded per-event latency benchmark"},
        {"report", "Summary table, RMSE heatmaps and error CDF"},
    };
    for (const auto& s : stages) common(app.add_subcommand(s.name, s.help));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        const RunConfig c = resolve_config(o, stage == "simulate");
        const fs::path dir = o.run_dir;
        if (stage == "simulate") {
            run_simulate(c, dir, std::cout);
        } else if (stage == "calibrate") {
            run_calibrate(c, dir, std::cout);
        } else if (stage == "csp-eval") {
            run_csp_eval(c, dir, std::cout);
        } else if (stage == "train") {
            run_train(c, dir, std::cout);
        } else if (stage == "cnn-eval") {
            run_cnn_eval(c, dir, std::cout);
        } else if (stage == "bench-latency") {
            run_bench_latency(c, dir, methods_of(o.method), std::cout);
        } else if (stage == "report") {
            run_report(c, dir, methods_of(o.method), std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const DependencyError& e) {
        std::cerr << "missing dependency: " << e.what() << '\n';
        return kMissingDependency;
    } catch (const FormatError& e) {
        std::cerr << "bad artifact: " << e.what() << '\n';
        return kBadArtifact;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}
