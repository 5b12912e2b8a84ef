#include "comac/config.hpp"
#include "comac/error.hpp"
#include "comac/harness.hpp"
#include "comac/selftest.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

namespace fs = std::filesystem;
using comac::config::ExperimentConfig;

struct Common {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> variants;
    std::optional<std::string> out;
    std::optional<int> workers;
};

void add_common(CLI::App* cmd, Common& c, bool with_variant) {
    cmd->add_option("--config", c.config, "YAML experiment config");
    cmd->add_option("--seed", c.seed, "Run a single seed instead of the config's list");
    if (with_variant)
        cmd->add_option("--variant", c.variants, "Variant(s) to run instead of the config's list");
    cmd->add_option("--out", c.out, "Output directory (default: $COMAC_OUT_DIR, then output_dir)");
    cmd->add_option("--workers", c.workers, "Parallel runs")->check(CLI::PositiveNumber);
}

ExperimentConfig load(const Common& c) {
    auto cfg = c.config ? comac::config::load_config(*c.config) : comac::config::default_config();
    if (c.seed)
        cfg.seeds = {*c.seed};
    if (!c.variants.empty()) {
        cfg.variants.clear();
        for (const auto& name : c.variants) {
            const auto v = comac::adapter::parse_variant(name);
            if (!v)
                throw comac::ConfigError("--variant: unknown variant '" + name + "'");
            cfg.variants.push_back(*v);
        }
    }
    if (c.workers)
        cfg.workers = *c.workers;
    cfg.validate();
    return cfg;
}

void log_line(const std::string& s) {
    std::cerr << s << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual multi-modal test-time adaptation on a synthetic stream"};
    app.require_subcommand(1);

    Common pre_opts, adapt_opts, ablate_opts, report_opts;
    auto* pre = app.add_subcommand("pretrain", "Pretrain source models per seed and report holdout accuracy");
    add_common(pre, pre_opts, false);
    auto* adapt = app.add_subcommand("adapt", "Run every (variant, seed) pair and write summary.csv/json");
    add_common(adapt, adapt_opts, true);
    auto* ablate = app.add_subcommand("ablate", "Augmentation grid and sensitivity sweeps");
    add_common(ablate, ablate_opts, false);
    auto* report = app.add_subcommand("report", "Render report.md and an SVG chart from an output directory");
    report->add_option("--out", report_opts.out, "Directory holding summary.csv");
    report->add_option("--config", report_opts.config, "Config whose output_dir is used when --out is absent");
    auto* self = app.add_subcommand("selftest", "Run the invariant suite");
    auto* cfgcmd = app.add_subcommand("config", "Inspect configuration");
    bool defaults = false;
    std::optional<std::string> check_path;
    cfgcmd->add_flag("--defaults", defaults, "Print every setting with its default value");
    cfgcmd->add_option("--check", check_path, "Validate a config file and print it fully resolved");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            const auto cfg = load(pre_opts);
            const auto out = comac::harness::resolve_out_dir(pre_opts.out, cfg);
            const auto seeds = comac::harness::prepare_seeds(cfg, log_line);
            nlohmann::json j = nlohmann::json::array();
            for (const auto& s : seeds)
                j.push_back({{"seed", s.seed},
                             {"holdout_accuracy_2d", s.pretrained.holdout_accuracy_2d},
                             {"holdout_accuracy_3d", s.pretrained.holdout_accuracy_3d}});
            fs::create_directories(out);
            std::ofstream(out / "pretrain.json") << j.dump(2) << '\n';
            std::cout << "wrote " << (out / "pretrain.json").string() << '\n';
            return 0;
        }
        if (*adapt) {
            const auto cfg = load(adapt_opts);
            const auto out = comac::harness::resolve_out_dir(adapt_opts.out, cfg);
            fs::create_directories(out);
            const auto result = comac::harness::run_experiment(cfg, out, log_line);
            comac::harness::write_summaries(cfg, result, out);
            std::ofstream(out / "config.yaml") << comac::config::dump_config(cfg);
            std::size_t failed = 0;
            for (const auto& r : result.runs)
                failed += r.result ? 0 : 1;
            std::cout << "wrote " << (out / "summary.csv").string() << " (" << result.runs.size() - failed << " runs ok, "
                      << failed << " failed)\n";
            return failed == 0 ? 0 : 3;
        }
        if (*ablate) {
            const auto cfg = load(ablate_opts);
            const auto out = comac::harness::resolve_out_dir(ablate_opts.out, cfg);
            const auto result = comac::harness::run_ablation(cfg, log_line);
            comac::harness::write_ablation(result, out);
            std::cout << comac::harness::grid_csv(result) << comac::harness::sensitivity_csv(result);
            return 0;
        }
        if (*report) {
            const auto cfg = report_opts.config ? comac::config::load_config(*report_opts.config)
                                                : comac::config::default_config();
            const auto out = comac::harness::resolve_out_dir(report_opts.out, cfg);
            comac::harness::write_report(out);
            std::cout << "wrote " << (out / "report.md").string() << '\n';
            return 0;
        }
        if (*self)
            return comac::selftest::run_all(std::cout) ? 0 : 1;
        if (*cfgcmd) {
            if (check_path) {
                std::cout << comac::config::dump_config(comac::config::load_config(*check_path));
                return 0;
            }
            if (!defaults) {
                std::cerr << "config: pass --defaults or --check <file>\n";
                return 2;
            }
            std::cout << comac::config::dump_config(comac::config::default_config());
            return 0;
        }
    } catch (const comac::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
