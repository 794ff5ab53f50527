#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "vapl/autograd.hpp"
#include "vapl/params.hpp"
#include "vapl/tensor.hpp"

namespace vapl {

// Desk-scale backbone: conv3x3(pad 1)+ReLU+maxpool2, twice, then one FC head.
struct ModelSpec {
    std::size_t channels = 1;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t conv1 = 4;
    std::size_t conv2 = 8;
    std::size_t classes = 2;

    std::size_t feature_dim() const { return conv2 * (height / 4) * (width / 4); }
    void validate() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

class ClassifierModel;

// A model's parameters registered on a tape, trainable or frozen.
class BoundModel {
public:
    // Pre-FC activations, flattened to [B, feature_dim].
    Var features(Var batch) const;
    Var head(Var features) const;
    Var forward(Var batch) const { return head(features(batch)); }
    Var param(const std::string& name) const { return vars_.at(name); }

private:
    friend class ClassifierModel;
    const ClassifierModel* model_ = nullptr;
    std::map<std::string, Var> vars_;
};

class ClassifierModel {
public:
    ClassifierModel() = default;
    // He-style uniform fan-in init of weights, zero biases.
    ClassifierModel(const ModelSpec& spec, std::uint64_t seed);
    // Every parameter zero.
    static ClassifierModel zeros(const ModelSpec& spec);

    const ModelSpec& spec() const { return spec_; }
    ParamMap& params() { return params_; }
    const ParamMap& params() const { return params_; }

    // Names of the convolution weight tensors (biases and the FC head excluded).
    static const std::vector<std::string>& conv_weight_names();

    // Registers parameters as "<prefix><name>"; frozen models become constants.
    BoundModel bind(Tape& tape, const std::string& prefix, bool trainable) const;

    // Tape-free path; bitwise equal to the taped one.
    Tensor features(const Tensor& batch) const;
    Tensor head(const Tensor& features) const;
    Tensor forward(const Tensor& batch) const { return head(features(batch)); }

    void check_input(const Shape& batch_shape) const;

    friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;

private:
    ModelSpec spec_;
    ParamMap params_;
};

}  // namespace vapl
