#include "vapl/model.hpp"

#include <cmath>

#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"
#include "vapl/random.hpp"

namespace vapl {

void ModelSpec::validate() const {
    if (channels == 0 || conv1 == 0 || conv2 == 0) throw ConfigError("model channel counts must be >= 1");
    if (classes < 2) throw ConfigError("model.classes must be >= 2");
    if (height < 4 || width < 4 || height % 4 || width % 4)
        throw ConfigError("model input height/width must be positive multiples of 4");
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.vec()) v = (2.0 * uniform01(rng) - 1.0) * bound;
    return t;
}

ParamMap zero_params(const ModelSpec& s) {
    return {
        {"conv1.weight", Tensor({s.conv1, s.channels, 3, 3})},
        {"conv1.bias", Tensor({s.conv1})},
        {"conv2.weight", Tensor({s.conv2, s.conv1, 3, 3})},
        {"conv2.bias", Tensor({s.conv2})},
        {"fc.weight", Tensor({s.classes, s.feature_dim()})},
        {"fc.bias", Tensor({s.classes})},
    };
}

}  // namespace

ClassifierModel::ClassifierModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    params_ = zero_params(spec_);
    Rng rng(seed);
    params_["conv1.weight"] = he_uniform({spec_.conv1, spec_.channels, 3, 3}, spec_.channels * 9, rng);
    params_["conv2.weight"] = he_uniform({spec_.conv2, spec_.conv1, 3, 3}, spec_.conv1 * 9, rng);
    params_["fc.weight"] = he_uniform({spec_.classes, spec_.feature_dim()}, spec_.feature_dim(), rng);
}

ClassifierModel ClassifierModel::zeros(const ModelSpec& spec) {
    spec.validate();
    ClassifierModel m;
    m.spec_ = spec;
    m.params_ = zero_params(spec);
    return m;
}

const std::vector<std::string>& ClassifierModel::conv_weight_names() {
    static const std::vector<std::string> names = {"conv1.weight", "conv2.weight"};
    return names;
}

void ClassifierModel::check_input(const Shape& s) const {
    if (s.size() != 4 || s[1] != spec_.channels || s[2] != spec_.height || s[3] != spec_.width)
        throw ShapeError("layer conv1: expected input [B," + std::to_string(spec_.channels) + "," +
                         std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "], got " + shape_str(s));
}

BoundModel ClassifierModel::bind(Tape& tape, const std::string& prefix, bool trainable) const {
    BoundModel b;
    b.model_ = this;
    for (const auto& [name, t] : params_)
        b.vars_.emplace(name, trainable ? tape.param(prefix + name, t) : tape.constant(t));
    return b;
}

Var BoundModel::features(Var batch) const {
    model_->check_input(batch.shape());
    Var h = ag::conv2d(batch, vars_.at("conv1.weight"), vars_.at("conv1.bias"), 1);
    h = ag::maxpool2(ag::relu(h));
    h = ag::conv2d(h, vars_.at("conv2.weight"), vars_.at("conv2.bias"), 1);
    h = ag::maxpool2(ag::relu(h));
    return ag::flatten(h);
}

Var BoundModel::head(Var features) const {
    if (features.shape().size() != 2 || features.shape()[1] != model_->spec().feature_dim())
        throw ShapeError("layer fc: expected [B," + std::to_string(model_->spec().feature_dim()) + "], got " +
                         shape_str(features.shape()));
    return ag::linear(features, vars_.at("fc.weight"), vars_.at("fc.bias"));
}

Tensor ClassifierModel::features(const Tensor& batch) const {
    check_input(batch.shape());
    Tensor h = kernels::conv2d(batch, params_.at("conv1.weight"), params_.at("conv1.bias"), 1);
    h = kernels::maxpool2(kernels::relu(h));
    h = kernels::conv2d(h, params_.at("conv2.weight"), params_.at("conv2.bias"), 1);
    h = kernels::maxpool2(kernels::relu(h));
    const std::size_t rows = h.dim(0);
    return h.reshaped({rows, h.size() / rows});
}

Tensor ClassifierModel::head(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(1) != spec_.feature_dim())
        throw ShapeError("layer fc: expected [B," + std::to_string(spec_.feature_dim()) + "], got " +
                         shape_str(features.shape()));
    return kernels::linear(features, params_.at("fc.weight"), params_.at("fc.bias"));
}

}  // namespace vapl
