#pragma once

// Experiment configuration and the seven workflow commands. Every command
// reads its prerequisites from a fixed layout under the output directory:
//   cohort/       manifest.csv, fc/<id>.csv (synth only)
//   checkpoints/  cls_pretrain.ckpt, gcan_<SRC>-<TGT>.ckpt, cls_final.ckpt
//   attention/    attention_map.csv, map_<SRC>-<TGT>.csv, nodes.node, ranking.csv
//   reports/      metrics and loss-history CSVs (see docs/formats.md)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcan/counterfactual.hpp"
#include "gcan/diagnoser.hpp"
#include "gcan/engine.hpp"
#include "gcan/synth.hpp"

namespace gcan::pipeline {

namespace fs = std::filesystem;

struct SynthSettings {
    std::map<Label, int> counts{{Label::HC, 60}, {Label::MCI, 60}};
    double noise_std = 0.1;
    std::vector<int> planted_regions;  // default 40..49
    double planted_delta = 0.3;
    Label planted_reference = Label::HC;
    Label planted_affected = Label::MCI;
};

struct GcanSettings {
    int steps = 200;
    int embed_dim = 64;
    int num_heads = 8;
    int patch_width = 16;
    double mlp_ratio = 4.0;
    int generator_depth = 3;
    int discriminator_depth = 8;
    int batch_size = 1;
    double generator_lr = 1e-3;
    double discriminator_lr = 1e-4;
    double noise_sigma = 0.05;
    engine::CombinerInput combiner = engine::CombinerInput::Offset;
};

struct AttentionSettings {
    int k = 10;
    double floor = 0.2;
    std::optional<fs::path> coords;  // `x,y,z` per region; Fibonacci sphere when unset
};

struct ExperimentConfig {
    std::optional<fs::path> atlas_path;     // default partition when unset
    std::optional<fs::path> manifest_path;  // the synthetic cohort when unset
    SynthSettings synth;
    diag::Task task;
    diag::ClassifierConfig classifier;
    diag::TrainConfig pretrain;
    diag::TrainConfig final;
    GcanSettings gcan;
    AttentionSettings attention;
    std::uint64_t seed = 0;
    fs::path out = "run";

    ExperimentConfig();
    // Throws ConfigError on inconsistent values and MissingPrerequisiteError
    // when a referenced input file does not exist.
    void validate() const;
    AtlasPtr atlas() const;
    SynthSpec synth_spec() const;
};

// INI-style `key = value` file with [sections]; every key is optional and
// unknown keys are rejected. Throws ConfigError or ParseError.
ExperimentConfig load_config(const fs::path& path);

// Per-component seed derived from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component);

struct Layout {
    fs::path root;
    fs::path cohort_dir() const { return root / "cohort"; }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path attention() const { return root / "attention"; }
    fs::path reports() const { return root / "reports"; }
    fs::path pretrain_checkpoint() const { return checkpoints() / "cls_pretrain.ckpt"; }
    fs::path final_checkpoint() const { return checkpoints() / "cls_final.ckpt"; }
    fs::path gcan_checkpoint(const cf::Direction& d) const;
    fs::path attention_map() const { return attention() / "attention_map.csv"; }
};

using Logger = std::function<void(const std::string&)>;

struct MetricsRow {
    std::string task;
    std::string model;
    diag::Metrics metrics;
};

struct AblationReport {
    MetricsRow unmasked;
    MetricsRow masked;
    std::uint64_t seed = 0;
};

Cohort cmd_synth(const ExperimentConfig& config, const Logger& log = {});
MetricsRow cmd_pretrain(const ExperimentConfig& config, const Logger& log = {});
std::vector<engine::TrainHistory> cmd_train_gcan(const ExperimentConfig& config, const Logger& log = {});
cf::AttentionMap cmd_attention(const ExperimentConfig& config, const Logger& log = {});
MetricsRow cmd_train_final(const ExperimentConfig& config, const Logger& log = {});
// Defaults to the final classifier; inputs are masked when the checkpoint was
// trained on masked FC.
MetricsRow cmd_evaluate(const ExperimentConfig& config, const std::optional<fs::path>& checkpoint = {},
                        const Logger& log = {});
AblationReport cmd_ablate(const ExperimentConfig& config, const Logger& log = {});

// The task's two directions, source first: (negative, positive) then (positive, negative).
std::vector<cf::Direction> directions(const diag::Task& task);
std::string direction_tag(const cf::Direction& d);  // e.g. "HC-MCI"

// The cohort named by the config: the manifest when given, otherwise
// <out>/cohort/manifest.csv written by cmd_synth.
Cohort load_experiment_cohort(const ExperimentConfig& config);

// Fraction of planted regions expected in the top k of a uniformly random
// ranking, estimated from `draws` seeded permutations.
double random_recovery_baseline(int regions, std::span<const int> planted, int k, int draws, std::uint64_t seed);

}  // namespace gcan::pipeline
