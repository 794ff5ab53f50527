#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vapl/autograd.hpp"
#include "vapl/model.hpp"
#include "vapl/params.hpp"
#include "vapl/prompt.hpp"

namespace vapl {

// Positive reparameterization of the raw weights.
enum class Positivity { Exp, OnePlusTanh };
// Hidden-layer activation; all satisfy sigma(0) = 0 and are non-decreasing.
// Mixed alternates tanh and softplus(x) - ln 2 across the units of a layer.
enum class HiddenActivation { Relu, Tanh, Mixed };

std::string to_string(Positivity p);
std::string to_string(HiddenActivation a);
Positivity parse_positivity(const std::string& s);
HiddenActivation parse_activation(const std::string& s);

struct MonotoneSpec {
    std::vector<std::size_t> sizes = {1, 8, 8, 1};
    Positivity phi = Positivity::Exp;
    HiddenActivation activation = HiddenActivation::Mixed;

    void validate() const;
    friend bool operator==(const MonotoneSpec&, const MonotoneSpec&) = default;
};

class MonotoneWeightNet;

class BoundWeightNet {
public:
    // x[M,1] -> g(x)[M,1]
    Var forward(Var x) const;

private:
    friend class MonotoneWeightNet;
    const MonotoneWeightNet* net_ = nullptr;
    std::vector<Var> raw_;
};

// Scalar-to-scalar MLP without bias terms whose effective weights phi(W) are
// strictly positive; hence g is non-decreasing and g(0) = 0 exactly.
class MonotoneWeightNet {
public:
    MonotoneWeightNet() = default;
    // Raw weights start near phi^-1(1/fan_in); the output layer is then scaled so g(1) = 1.
    MonotoneWeightNet(const MonotoneSpec& spec, std::uint64_t seed);
    // Single 1x1 layer with explicit raw weight.
    static MonotoneWeightNet single(double raw_weight, Positivity phi = Positivity::Exp);

    const MonotoneSpec& spec() const { return spec_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }
    std::size_t layers() const { return spec_.sizes.size() - 1; }
    static std::string layer_name(std::size_t k);

    double operator()(double x) const;
    // x[M,1] -> [M,1]
    Tensor evaluate(const Tensor& x) const;

    BoundWeightNet bind(Tape& tape, const std::string& prefix, bool trainable) const;

    friend bool operator==(const MonotoneWeightNet&, const MonotoneWeightNet&) = default;

private:
    MonotoneSpec spec_;
    ParamMap params_;
};

// |g(1) - 1|
double l_agg(const MonotoneWeightNet& g);
Var l_agg(const BoundWeightNet& g, Tape& tape);

// softmax(f_m(image * mask))[k]
double confidence(const ClassifierModel& f_m, const Tensor& image, const BinaryMask& mask, std::size_t class_index);

// Confidence of every mask, batched and fanned out across workers. Results
// are stored by mask index.
std::vector<double> score_masks(const ClassifierModel& f_m, const Tensor& image, std::span<const BinaryMask> masks,
                                std::size_t class_index, std::size_t workers = 1);

// Non-negative weight of a confidence score.
double weight_of(const MonotoneWeightNet& g, double confidence);

enum class Weighting { Learned, PassThrough };
enum class Normalization { Expected, PerPixel };

struct RefineOptions {
    std::size_t n_masks = 200;
    double p = 0.1;
    std::uint64_t seed = 0;
    Weighting weighting = Weighting::Learned;
    // Expected: divide by N*p. PerPixel: divide each pixel by its own mask count.
    Normalization normalization = Normalization::Expected;
    PerturbationOptions perturbation;
    std::size_t workers = 1;
};

struct Refinement {
    SaliencyMap map;               // normalized, values in [0,1]
    std::vector<double> pre_clip;  // raw aggregate before max normalization
    std::vector<double> confidences;
    std::vector<double> weights;
};

// Weighted mask sum with the N*p (or per-pixel) normalization, in mask order.
std::vector<double> aggregate_masks(std::span<const BinaryMask> masks, std::span<const double> weights,
                                    const RefineOptions& options);
// Divides by the maximum when it exceeds 1; otherwise returns the input.
std::vector<double> normalize_unit(std::vector<double> values);

// Confidence-weighted aggregation without g (pass-through weights).
Refinement refine_unweighted(const ClassifierModel& f_m, const Tensor& image, const AttentionPrompt& prompt,
                             std::size_t class_index, const RefineOptions& options);

Refinement refine_prompt(const ClassifierModel& f_m, const MonotoneWeightNet& g, const Tensor& image,
                         const AttentionPrompt& prompt, std::size_t class_index, const RefineOptions& options);

// Differentiable aggregation for the g update. weights[B*N,1] (row b*N+i) with
// masks[b][i] -> normalized maps [B,H,W].
Var aggregate_masks(Var weights, std::shared_ptr<const std::vector<std::vector<BinaryMask>>> masks,
                    const RefineOptions& options);
Var normalize_unit(Var maps);

}  // namespace vapl
