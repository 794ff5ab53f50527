#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vapl/autograd.hpp"
#include "vapl/config.hpp"
#include "vapl/data.hpp"
#include "vapl/model.hpp"
#include "vapl/params.hpp"
#include "vapl/refine.hpp"

namespace vapl {

// Log-clamp inside the cross-entropy.
inline constexpr double kLogClamp = 1e-12;

// ---- losses, value form ----

// One-hot [B,K] rows from class indices.
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

// -sum_i sum_a y_ia (log p_m^ia + log p_o^ia), summed over the batch.
double cross_entropy(const Tensor& logits_m, const Tensor& logits_o, const Tensor& onehot);

// Sum over convolution weights of ||W_o - W_m||_F^2. Throws on architecture mismatch.
double loss_param(const ClassifierModel& f_m, const ClassifierModel& f_o);

// ||features(f_o, I) - features(f_m, I * A)||_F^2 summed over the batch.
// images [B,C,H,W], maps [B,H,W].
double loss_activ(const ClassifierModel& f_m, const ClassifierModel& f_o, const Tensor& images, const Tensor& maps);

// Batch mean of the paired cross-entropy, p_m from f_m(I * A), p_o from f_o(I).
double loss_pred(const ClassifierModel& f_m, const ClassifierModel& f_o, const Tensor& images, const Tensor& maps,
                 const std::vector<std::size_t>& labels);

// ---- losses, taped form ----
Var loss_param(const BoundModel& f_m, const BoundModel& f_o);

struct LossBreakdown {
    double pred = 0.0;
    double param = 0.0;
    double activ = 0.0;
    double agg = 0.0;
    double total = 0.0;
};

struct Lambdas {
    double param = 0.0;
    double activ = 0.0;
    double agg = 0.0;
};

// pred + l1 param + l2 activ + l3 agg, computed as that dot product.
double combine(const LossBreakdown& parts, const Lambdas& lambdas);

struct CoTrainState;

struct Batch {
    Tensor images;                    // [B,C,H,W]
    Tensor maps;                      // [B,H,W] refined prompts A
    std::vector<std::size_t> labels;  // class indices
};

// Full objective on one batch with every term reported.
LossBreakdown total_objective(const CoTrainState& state, const Batch& batch, const Lambdas& lambdas);

// ---- training ----

enum class Phase { F, G, Val };
std::string to_string(Phase p);

struct LossRecord {
    std::size_t iteration = 0;  // outer iteration t
    Phase phase = Phase::F;
    std::size_t pass = 0;       // inner pass q
    double pred = 0.0;
    double param = 0.0;
    double activ = 0.0;
    double agg = 0.0;
    double val_accuracy = -1.0;  // set on Val rows only

    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct CoTrainState {
    Config config;
    ClassifierModel f_m;
    ClassifierModel f_o;
    MonotoneWeightNet g;
    Adam adam_m;
    Adam adam_o;
    Adam adam_g;
    std::vector<LossRecord> history;
    std::size_t iteration = 0;  // completed outer iterations
    double best_val = -1.0;
    // Serialized state of the batch-order generator.
    std::string rng_state;

    // Fresh models: f_o starts as an exact copy of f_m.
    static CoTrainState initial(const Config& config);

    friend bool operator==(const CoTrainState&, const CoTrainState&) = default;
};

struct TrainHooks {
    // Called before and after every F/G phase of every outer iteration.
    std::function<void(const CoTrainState&, Phase, std::size_t iteration, bool begin)> phase;
    // Called after each outer iteration (after validation).
    std::function<void(const CoTrainState&)> iteration;
};

// Alternating optimization: per outer iteration, F passes updating f_m and f_o
// with g frozen, then G passes updating g with both models frozen. Returns the
// full history with f_o at its best validation accuracy and f_m, g at the best
// prompted validation accuracy.
CoTrainState train_alternating(const Dataset& data, const Config& config, const TrainHooks& hooks = {});

// Refined prompts for a batch during training (label as class index). Warm-up
// and binarize mode use the binarized prompt.
Tensor training_maps(const CoTrainState& state, const std::vector<const Sample*>& samples,
                     const std::vector<std::size_t>& sample_ids, bool warmup, std::size_t workers);

// ---- inference ----

struct Prediction {
    std::size_t class_index = 0;
    std::vector<double> probabilities;
    bool prompted = false;
    std::optional<SaliencyMap> saliency;
};

struct PredictOptions {
    std::optional<std::size_t> n_masks;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

// With a prompt: refine (class = argmax of f_m on the binarized prompt) and
// classify I * A with f_m. Without: classify I with f_o.
Prediction predict(const CoTrainState& state, const Tensor& image, const AttentionPrompt* prompt,
                   const PredictOptions& options = {});

// Refined map only, for an explicit or inferred class index.
SaliencyMap refine_for(const CoTrainState& state, const Tensor& image, const AttentionPrompt& prompt,
                       const PredictOptions& options, std::optional<std::size_t> class_index = std::nullopt);

// ---- checkpoints ----

void save_checkpoint(const std::filesystem::path& path, const CoTrainState& state);
CoTrainState load_checkpoint(const std::filesystem::path& path);
// Rejects a checkpoint whose model architecture differs from `expected`.
CoTrainState load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

std::string history_csv(const std::vector<LossRecord>& history);

}  // namespace vapl
