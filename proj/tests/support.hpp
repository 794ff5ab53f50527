#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "vapl/autograd.hpp"
#include "vapl/random.hpp"
#include "vapl/tensor.hpp"

namespace vapl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.vec()) v = lo + (hi - lo) * uniform01(rng);
    return t;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Compares the taped gradient of `f` w.r.t. each entry of `inputs` (by index)
// against central differences. `f` rebuilds the graph from scratch.
inline GradCheck check_gradient(const std::function<Var(Tape&, std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                                double h = 1e-6, double floor = 1e-6) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
        Var loss = f(tape, vars);
        tape.backward(loss);
        for (const Var& v : vars) {
            const Tensor& g = tape.grad(v);
            analytic.push_back(g.empty() ? Tensor::like(v.value()) : g);
        }
    }
    auto eval = [&](const std::vector<Tensor>& in) {
        Tape tape;
        std::vector<Var> vars;
        for (const Tensor& t : in) vars.push_back(tape.constant(t));
        return f(tape, vars).value().item();
    };
    GradCheck out;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k][i] += h;
            minus[k][i] -= h;
            const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            const double a = analytic[k][i];
            const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
            out.max_rel = std::max(out.max_rel, rel);
            ++out.checked;
        }
    return out;
}

}  // namespace vapl::testing
