#include "vapl/params.hpp"

#include <cmath>

#include "vapl/errors.hpp"

namespace vapl {

void Adam::step(ParamMap& params, const Gradients& grads) {
    for (const auto& [name, g] : grads.all()) {
        auto it = params.find(name);
        if (it == params.end()) throw Error("gradient for unknown parameter '" + name + "'");
        require_shape(g, it->second.shape(), "gradient of " + name);
        if (!g.all_finite()) throw NumericError("non-finite gradient for '" + name + "', step refused");
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (const auto& [name, g] : grads.all()) {
        Tensor& p = params.at(name);
        auto [mit, m_new] = m_.try_emplace(name, Tensor::like(p));
        auto [vit, v_new] = v_.try_emplace(name, Tensor::like(p));
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
    }
}

void Adam::restore(std::size_t t, ParamMap m, ParamMap v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace vapl
