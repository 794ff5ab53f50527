#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "vapl/autograd.hpp"
#include "vapl/tensor.hpp"

namespace vapl {

// Named parameter tensors; std::map keeps iteration order stable.
using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Adam with bias correction. State is keyed by parameter name.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig config) : config_(config) {}

    // Updates every parameter that has a gradient. Refuses the whole step
    // (NumericError, params untouched) if any gradient is non-finite.
    void step(ParamMap& params, const Gradients& grads);

    const AdamConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    std::size_t steps() const { return t_; }

    const ParamMap& first_moments() const { return m_; }
    const ParamMap& second_moments() const { return v_; }
    void restore(std::size_t t, ParamMap m, ParamMap v);

    friend bool operator==(const Adam&, const Adam&) = default;

private:
    AdamConfig config_;
    std::size_t t_ = 0;
    ParamMap m_;
    ParamMap v_;
};

}  // namespace vapl
