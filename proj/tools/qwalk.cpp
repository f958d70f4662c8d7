// qwalk: command-line front end for the alternate quantum walk billiards.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qwalk/pipeline.hpp"

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

struct RunOptions {
    std::vector<std::string> configs;
    std::string out;
    std::string cache;
    int workers = 1;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("-c,--config", o.configs, "run configuration (JSON); repeat for a sweep")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", o.out, "output directory (one subdirectory per config in a sweep)");
    cmd->add_option("--cache", o.cache, "eigendecomposition cache directory");
    cmd->add_option("-j,--workers", o.workers, "independent configs run in parallel")
        ->check(CLI::Range(1, 64));
}

int run_configs(const RunOptions& o, const std::vector<std::string>& stages) {
    std::vector<qwalk::RunConfig> cfgs;
    for (const auto& path : o.configs) {
        auto c = qwalk::load_config(path);
        if (!stages.empty()) c.stages = stages;
        if (!o.out.empty()) {
            c.output_dir = o.configs.size() == 1 ? qwalk::fs::path(o.out) : qwalk::fs::path(o.out) / c.name;
        }
        if (!o.cache.empty()) c.cache_dir = o.cache;
        cfgs.push_back(std::move(c));
    }
    const auto manifests = qwalk::run_many(cfgs, o.workers, std::cerr);
    int code = 0;
    for (const auto& m : manifests) {
        std::cout << m.name << ": " << (m.complete ? "complete" : "incomplete") << " -> "
                  << (m.output_dir / "manifest.json").string() << (m.cache_hit ? " (cache hit)" : "") << "\n";
        code = std::max(code, m.exit_code);
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Alternate quantum walks on rectangle and quarter-stadium billiards"};
    app.set_version_flag("--version", qwalk::version);
    app.require_subcommand(1);

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "run the stages listed in each config");
    add_run_options(run, run_opts);

    struct StageCommand {
        const char* name;
        const char* help;
        std::vector<std::string> stages;
    };
    const std::vector<StageCommand> stage_commands{
        {"evolve", "time evolution snapshots (CSV + PPM)", {"evolve"}},
        {"spectrum", "diagonalize the one-step operator (cached)", {"spectrum"}},
        {"stats", "unfolded spacing statistics and Brody fit", {"spectrum", "stats"}},
        {"pr", "participation ratios of all eigenstates", {"spectrum", "pr"}},
        {"scars", "scar-function search over the periodic-orbit library", {"spectrum", "pr", "scars"}},
    };
    std::vector<RunOptions> stage_opts(stage_commands.size());
    std::vector<CLI::App*> stage_apps;
    for (std::size_t i = 0; i < stage_commands.size(); ++i) {
        auto* cmd = app.add_subcommand(stage_commands[i].name, stage_commands[i].help);
        add_run_options(cmd, stage_opts[i]);
        stage_apps.push_back(cmd);
    }

    std::string run_a, run_b, compare_out;
    auto* cmp = app.add_subcommand("compare", "side-by-side report of two finished runs");
    cmp->add_option("run_a", run_a, "output directory of the first run")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("run_b", run_b, "output directory of the second run")->required()->check(CLI::ExistingDirectory);
    cmp->add_option("-o,--out", compare_out, "where to write compare.csv/.json")->required();

    std::uint64_t seed = 12345;
    std::string self_dir = "qwalk-selftest";
    auto* self = app.add_subcommand("selftest", "quick internal consistency checks");
    self->add_option("--seed", seed, "seed for the random-phase check");
    self->add_option("-o,--out", self_dir, "scratch directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*run) return run_configs(run_opts, {});
        for (std::size_t i = 0; i < stage_apps.size(); ++i) {
            if (*stage_apps[i]) return run_configs(stage_opts[i], stage_commands[i].stages);
        }
        if (*cmp) {
            const auto report = qwalk::compare(run_a, run_b, compare_out);
            std::cout << qwalk::format_comparison(report);
            return 0;
        }
        if (*self) {
            const auto checks = qwalk::selftest(seed, self_dir);
            bool ok = true;
            for (const auto& c : checks) {
                std::cout << (c.pass ? "PASS " : "FAIL ") << c.name;
                if (!c.detail.empty()) std::cout << ": " << c.detail;
                std::cout << "\n";
                ok = ok && c.pass;
            }
            return ok ? 0 : exit_numerical;
        }
    } catch (const qwalk::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const qwalk::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_numerical;
    }
    return 0;
}
