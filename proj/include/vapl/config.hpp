#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vapl/data.hpp"
#include "vapl/model.hpp"
#include "vapl/refine.hpp"

namespace vapl {

// How the prompted model's input mask is obtained.
enum class RefineMode {
    Learned,      // perturbation scoring weighted through g
    PassThrough,  // perturbation scoring, raw confidences as weights
    Binarize,     // no refinement: +1/-1 pixels kept, precluded pixels dropped
};

std::string to_string(RefineMode m);
RefineMode parse_refine_mode(const std::string& s);

struct RefineConfig {
    std::size_t n_masks = 200;
    double p = 0.1;
    std::uint64_t seed = 0;
    Positivity phi = Positivity::Exp;
    HiddenActivation activation = HiddenActivation::Mixed;
    std::vector<std::size_t> hidden = {8, 8};
    RefineMode mode = RefineMode::Learned;
    Normalization normalization = Normalization::Expected;
    std::size_t cell = 1;

    MonotoneSpec weight_net() const;
    // Options for refining one sample; `sample_seed` selects its masks.
    RefineOptions options(std::uint64_t sample_seed, std::size_t workers) const;
    friend bool operator==(const RefineConfig&, const RefineConfig&) = default;
};

struct TrainingConfig {
    double lambda1 = 1.0;
    double lambda2 = 3e-4;
    double lambda3 = 10.0;
    double learning_rate = 2e-3;
    std::size_t outer_iterations = 10;  // T
    std::size_t f_iterations = 3;       // F, passes over the training set
    std::size_t g_iterations = 1;       // G, passes over the training set
    std::size_t batch_size = 16;
    std::size_t warmup_epochs = 1;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    // false trains the non-prompted model alone (plain baseline)
    bool cotrain = true;
    std::size_t seeds = 3;
    std::string sweep_param = "lambda1";
    std::vector<double> sweep_values = {0.01, 0.1, 1.0, 10.0};

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct ServeConfig {
    std::string addr = "127.0.0.1";
    int port = 8080;
    std::size_t default_masks = 200;
    std::size_t max_masks = 5000;
    bool expose_dataset = false;

    friend bool operator==(const ServeConfig&, const ServeConfig&) = default;
};

struct DataConfig {
    SyntheticSpec synthetic;
    // Empty: generate in memory from `synthetic`.
    std::string dir;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct Config {
    ModelSpec model;
    TrainingConfig train;
    RefineConfig refine;
    DataConfig data;
    ServeConfig serve;

    // Throws ConfigError on an unknown key or unparsable value.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();

    // Cross-field checks (loop counts, probabilities, matching image sizes).
    void validate() const;

    // Canonical "key=value" lines in key order; parse(to_text()) == *this.
    std::string to_text() const;
    static Config parse(const std::string& text, const std::string& source = "config");
    static Config load(const std::filesystem::path& path);

    // Applies "--section.key=value" style overrides.
    void apply_overrides(const std::vector<std::string>& args);

    friend bool operator==(const Config&, const Config&) = default;
};

// 64-bit FNV-1a, hex encoded; used for content ids and config hashes.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace vapl
