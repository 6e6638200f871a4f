// Command line front end: run experiments, compare them, export weights.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <robust_bandit/robust_bandit.hpp>

namespace rb = robust_bandit;

namespace {

int fail(const std::string& code, const std::string& message) {
    std::cerr << rb::json{{"error", code}, {"message", message}}.dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Thompson-sampling bandit experiments on simulated promotional catalogs"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run (or resume) one experiment");
    std::string config_path, output_override;
    int max_runs = -1;
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_option("--output", output_override, "output directory, overrides the config");
    run->add_option("--max-runs", max_runs, "stop after this many runs (resume later)");

    auto* cmp = app.add_subcommand("compare", "relative gains of experiments over a baseline");
    std::string baseline, out_dir;
    std::vector<std::string> dirs, titles;
    cmp->add_option("--baseline", baseline, "baseline experiment directory")->required();
    cmp->add_option("dirs", dirs, "experiment directories to compare")->required();
    cmp->add_option("--out", out_dir, "where to write gain tables (default: current directory)");
    cmp->add_option("--titles", titles, "titles for the case-study table (default: scenario focus titles)")->delimiter(',');

    auto* exp = app.add_subcommand("export-weights", "write the weight trajectory of an experiment as CSV");
    std::string exp_dir, exp_out;
    exp->add_option("dir", exp_dir, "experiment directory")->required();
    exp->add_option("--out", exp_out, "output CSV (default: <dir>/weights.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run) {
            auto cfg = rb::load_config(config_path);
            if (!output_override.empty()) cfg.output_dir = output_override;
            if (cfg.output_dir.empty()) return fail("invalid_config", "an output directory is required");
            auto result = rb::run_experiment(cfg, rb::RunControl{max_runs});
            std::cout << rb::json{{"output_dir", cfg.output_dir},
                                  {"completed_runs", result.reports.size()},
                                  {"complete", result.complete},
                                  {"resumed_at", result.resumed_at}}
                             .dump()
                      << "\n";
        } else if (*cmp) {
            std::vector<rb::fs::path> paths(dirs.begin(), dirs.end());
            auto res = rb::compare(baseline, paths, out_dir.empty() ? rb::fs::path(".") : rb::fs::path(out_dir), titles);
            rb::json files = rb::json::array();
            for (const auto& f : res.files) files.push_back(f.string());
            std::cout << rb::json{{"files", files}}.dump() << "\n";
        } else if (*exp) {
            auto path = rb::export_weights(exp_dir, exp_out);
            std::cout << rb::json{{"file", path.string()}}.dump() << "\n";
        }
    } catch (const rb::bandit_error& e) {
        return fail(e.code(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
