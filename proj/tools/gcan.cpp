// gcan <command> --config PATH [--seed INT] [--out DIR]

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "gcan/csv.hpp"
#include "gcan/error.hpp"
#include "gcan/kernels.hpp"
#include "gcan/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kDiverged = 4 };

void apply_thread_cap() {
    const char* env = std::getenv("GCAN_THREADS");
    if (!env) return;
    const auto n = gcan::csv::parse_int(env);
    if (!n || *n < 1) throw gcan::ConfigError("GCAN_THREADS must be a positive integer");
    gcan::kernels::set_num_threads(static_cast<int>(*n));
}

}  // namespace

int main(int argc, char** argv) {
    using namespace gcan;
    CLI::App app{"Counterfactual attention for FC-based cognitive decline diagnosis"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;

    const char* names[] = {"synth", "pretrain", "train-gcan", "attention", "train-final", "evaluate", "ablate"};
    const char* help[] = {"write a synthetic cohort",
                          "train the classifier on raw FC",
                          "train GCAN in both task directions",
                          "build the counterfactual attention map",
                          "train the classifier on attention-masked FC",
                          "score a classifier checkpoint on the test split",
                          "compare masked and unmasked classifiers"};
    for (int i = 0; i < 7; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], help[i]);
        sub->add_option("--config", config_path, "experiment config (INI)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override experiment.seed");
        sub->add_option("--out", out, "override experiment.out");
        if (std::string(names[i]) == "evaluate") sub->add_option("--checkpoint", checkpoint, "classifier checkpoint");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    auto log = [](const std::string& msg) { std::cerr << msg << std::endl; };
    try {
        apply_thread_cap();
        pipeline::ExperimentConfig config = pipeline::load_config(config_path);
        if (seed) config.seed = *seed;
        if (out) config.out = *out;
        if (cmd == "synth") pipeline::cmd_synth(config, log);
        else if (cmd == "pretrain") pipeline::cmd_pretrain(config, log);
        else if (cmd == "train-gcan") pipeline::cmd_train_gcan(config, log);
        else if (cmd == "attention") pipeline::cmd_attention(config, log);
        else if (cmd == "train-final") pipeline::cmd_train_final(config, log);
        else if (cmd == "evaluate")
            pipeline::cmd_evaluate(config, checkpoint ? std::optional<std::filesystem::path>(*checkpoint) : std::nullopt, log);
        else pipeline::cmd_ablate(config, log);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const MissingPrerequisiteError& e) {
        std::cerr << "missing prerequisite: " << e.what() << '\n';
        return kMissing;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
