#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stilt/experiment.hpp"
#include "stilt/oracle_suite.hpp"

namespace {

int run_gen(const std::string& spec_path, const std::string& out_dir) {
    stilt::cmd_gen_synthetic(spec_path, out_dir);
    std::cout << "wrote synthetic datasets to " << out_dir << "\n";
    return 0;
}

int run_run(const std::string& config_path) {
    const auto config = stilt::load_experiment_config(config_path);
    const auto summary = stilt::cmd_run(config);
    std::cout << summary.records.size() << " run(s) finished; reports in " << config.output_dir
              << "\n";
    for (const auto& c : summary.comparisons) {
        std::cout << c.name << " [" << c.scope << "]: n=" << c.pairs;
        if (c.test)
            std::cout << " W=" << stilt::format_double(c.test->w_statistic)
                      << " p=" << stilt::format_double(c.test->p_two_sided) << " ("
                      << c.test->method << ")";
        else
            std::cout << " (degenerate)";
        std::cout << "\n";
    }
    return 0;
}

int run_report(const std::string& dir) {
    stilt::cmd_report(dir);
    std::cout << "reports regenerated in " << dir << "\n";
    return 0;
}

int run_gradcheck(std::size_t models, std::uint64_t seed, std::size_t coords) {
    const auto suite = stilt::run_gradient_oracle_suite(models, seed, coords);
    for (const auto& line : suite.lines) std::cout << line << "\n";
    std::cout << "gradcheck: max_rel_err " << stilt::format_double(suite.max_rel_err) << " over "
              << suite.coords_checked << " coordinates, tolerance "
              << stilt::format_double(suite.tolerance) << ": "
              << (suite.pass ? "PASS" : "FAIL") << "\n";
    return suite.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stilt-bench: unimodal-STILT training and evaluation harness"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, report_dir;
    std::size_t gc_models = 20, gc_coords = 8;
    std::uint64_t gc_seed = 20240;

    auto* gen = app.add_subcommand("gen", "generate synthetic datasets from a spec file");
    gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* run = app.add_subcommand("run", "run an experiment described by a config file");
    run->add_option("--config", config_path, "experiment config JSON")->required();

    auto* report = app.add_subcommand("report", "rebuild reports from a finished run directory");
    report->add_option("--dir", report_dir, "run directory with metrics.csv")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient oracle suite");
    gradcheck->add_option("--models", gc_models, "number of random models");
    gradcheck->add_option("--seed", gc_seed, "suite seed");
    gradcheck->add_option("--coords", gc_coords, "coordinates checked per tensor");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(spec_path, out_dir);
        if (run->parsed()) return run_run(config_path);
        if (report->parsed()) return run_report(report_dir);
        if (gradcheck->parsed()) return run_gradcheck(gc_models, gc_seed, gc_coords);
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
