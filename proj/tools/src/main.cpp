#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include "unlearn/config.hpp"
#include "unlearn/runner.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 1, kIoError = 2, kNumericalFailure = 3 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> method;
    std::optional<std::size_t> jobs;
    std::optional<std::size_t> repeats;
    std::string checkpoint;
};

unlearn::RunConfig resolve(const Overrides& o) {
    unlearn::RunConfig cfg = o.config.empty() ? unlearn::RunConfig{} : unlearn::load_config(o.config);
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.out) cfg.run.out = *o.out;
    if (o.jobs) cfg.run.jobs = *o.jobs;
    if (o.repeats) cfg.run.repeats = *o.repeats;
    if (o.method) {
        try {
            cfg.unlearn.methods = {unlearn::method_from_string(*o.method)};
        } catch (const unlearn::InvalidInput& e) {
            throw unlearn::ConfigError("--method", e.what());
        }
    }
    cfg.validate();
    return cfg;
}

int dispatch(const std::string& command, const Overrides& o) {
    const unlearn::RunConfig cfg = resolve(o);
    if (command == "generate") {
        unlearn::cmd_generate(cfg, std::cout);
    } else if (command == "train") {
        unlearn::cmd_train(cfg, std::cout);
    } else if (command == "unlearn") {
        const auto summary = unlearn::cmd_unlearn(cfg, std::cout);
        std::cout << summary.cells.size() - summary.failed() << "/" << summary.cells.size() << " cells ok\n";
        if (summary.all_failed()) return kNumericalFailure;
    } else if (command == "eval") {
        const std::filesystem::path ckpt =
            o.checkpoint.empty() ? unlearn::layout::poisoned_checkpoint(cfg.run.out) : std::filesystem::path(o.checkpoint);
        std::cout << unlearn::cmd_eval(cfg, ckpt).dump(2) << "\n";
    } else if (command == "report") {
        std::cout << unlearn::cmd_report(cfg);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trojan removal experiments on a synthetic text classifier"};
    app.require_subcommand(1);

    Overrides o;
    app.add_option("--config", o.config, "Experiment config file (INI)");
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--method", o.method, "retrain | finetune | finetune-relabel | ga | lya (replaces unlearn.methods)");
    app.add_option("--jobs", o.jobs, "Sweep cells run concurrently")->check(CLI::PositiveNumber);
    app.add_option("--repeats", o.repeats, "Seeds per sweep cell")->check(CLI::PositiveNumber);

    app.add_subcommand("generate", "Write synthetic, poisoned and evaluation datasets")->fallthrough();
    app.add_subcommand("train", "Train the poisoned model")->fallthrough();
    app.add_subcommand("unlearn", "Run the configured methods over the sweep grid")->fallthrough();
    auto* eval = app.add_subcommand("eval", "Score a checkpoint")->fallthrough();
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to score (default: the poisoned model)");
    app.add_subcommand("report", "Summarize sweep manifests into a table")->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        return dispatch(app.get_subcommands().front()->get_name(), o);
    } catch (const unlearn::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kIoError;
    } catch (const unlearn::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumericalFailure;
    } catch (const unlearn::InvalidInput& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    }
}
