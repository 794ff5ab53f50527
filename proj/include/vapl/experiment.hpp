#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vapl/config.hpp"
#include "vapl/cotrain.hpp"
#include "vapl/data.hpp"

namespace vapl {

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    // Set when the corresponding ratio had a zero denominator and was reported as 0.
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

// Binary metrics with `positive_class` as the positive label; every other
// class counts as negative.
Metrics compute_metrics(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                        std::size_t positive_class = 1);

struct PathMetrics {
    Metrics prompted;      // f_m on I * A
    Metrics non_prompted;  // f_o on I
    bool has_prompted = true;
};

// Predictions of both paths over a split. Sample i refines with the masks of
// derive_seed(seed, i).
PathMetrics evaluate_split(const CoTrainState& state, const std::vector<Sample>& split, std::uint64_t seed,
                           std::size_t workers);

enum class Mode { Train, Eval, Ablate, Sweep };
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct Variant {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;
};

// VAPL, VAPL-1..4 and the plain baseline as config overrides.
const std::vector<Variant>& ablation_variants();

// Keys whose values differ, as "key: old -> new" lines.
std::vector<std::string> config_diff(const Config& base, const Config& changed);

struct Trial {
    std::string variant;  // "VAPL", "VAPL-1", ..., or "<param>=<value>" in a sweep
    std::uint64_t seed = 0;
    Config config;
    std::map<std::string, PathMetrics> splits;  // "val", "test"
    std::vector<LossRecord> history;
};

struct ExperimentReport {
    Mode mode = Mode::Train;
    Config config;
    std::vector<Trial> trials;
    double wall_clock_seconds = 0.0;

    // Stable text report; only the wall_clock line varies between identical runs.
    std::string text() const;
    // variant,seed,split,path,accuracy,precision,recall,f1,tp,fp,tn,fn
    std::string csv() const;
    // Sweep mode: one row per grid value with mean and stddev across seeds.
    std::string sweep_csv() const;
};

struct ExperimentOptions {
    Mode mode = Mode::Train;
    // Where checkpoints, reports and loss curves go; empty writes nothing.
    std::filesystem::path out_dir;
    // Eval mode input.
    std::filesystem::path checkpoint;
    std::function<void(const std::string&)> log;
};

// Seed k of a multi-seed run offsets both the training seed and the synthetic data seed by k.
Config trial_config(const Config& base, std::size_t k);

// Training split, validation split and test split for a config (generated or loaded).
Dataset dataset_for(const Config& config);

ExperimentReport run_experiment(const Config& config, const ExperimentOptions& options);
ExperimentReport run_experiment(const std::filesystem::path& config_path, Mode mode,
                                const std::vector<std::string>& overrides = {},
                                const std::filesystem::path& out_dir = {});

// mean and sample standard deviation (0 for a single value)
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace vapl
