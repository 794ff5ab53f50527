#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vapl/errors.hpp"
#include "vapl/model.hpp"
#include "vapl/params.hpp"

using namespace vapl;
using vapl::testing::check_gradient;
using vapl::testing::random_tensor;

TEST_CASE("model has the documented parameter set") {
    const ClassifierModel m(ModelSpec{}, 1);
    std::vector<std::string> names;
    for (const auto& [n, t] : m.params()) names.push_back(n);
    CHECK(names == std::vector<std::string>{"conv1.bias", "conv1.weight", "conv2.bias", "conv2.weight", "fc.bias",
                                            "fc.weight"});
    CHECK(m.params().at("conv1.weight").shape() == Shape{4, 1, 3, 3});
    CHECK(m.params().at("conv2.weight").shape() == Shape{8, 4, 3, 3});
    CHECK(m.params().at("fc.weight").shape() == Shape{2, 512});
    CHECK(m.params().at("fc.bias").vec() == std::vector<double>{0, 0});
    CHECK(ClassifierModel::conv_weight_names() == std::vector<std::string>{"conv1.weight", "conv2.weight"});
}

TEST_CASE("initialization is deterministic per seed and bounded by the fan-in rule") {
    const ClassifierModel a(ModelSpec{}, 5), b(ModelSpec{}, 5), c(ModelSpec{}, 6);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    const double bound = std::sqrt(6.0 / 9.0);
    for (double v : a.params().at("conv1.weight").vec()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("plain and taped forward passes are bitwise equal") {
    ModelSpec spec;
    spec.height = spec.width = 16;
    const ClassifierModel m(spec, 3);
    Rng rng(9);
    const Tensor x = random_tensor({3, 1, 16, 16}, rng, 0, 1);
    Tape tape;
    const BoundModel bm = m.bind(tape, "m.", true);
    const Var feats = bm.features(tape.constant(x));
    CHECK(feats.value() == m.features(x));
    CHECK(bm.head(feats).value() == m.forward(x));
    CHECK(feats.shape() == Shape{3, spec.feature_dim()});
}

TEST_CASE("model input shape errors name the layer") {
    const ClassifierModel m(ModelSpec{}, 1);
    CHECK_THROWS_WITH_AS(m.forward(Tensor({1, 1, 28, 28})), "layer conv1: expected input [B,1,32,32], got [1x1x28x28]",
                         ShapeError);
}

TEST_CASE("model gradients pass finite differences end to end") {
    ModelSpec spec;
    spec.height = spec.width = 8;
    spec.conv1 = 2;
    spec.conv2 = 3;
    const ClassifierModel m(spec, 2);
    Rng rng(10);
    const Tensor x = random_tensor({2, 1, 8, 8}, rng, 0, 1);
    Tensor y({2, 2});
    y[0] = 1;
    y[3] = 1;
    std::vector<std::string> names;
    std::vector<Tensor> values;
    for (const auto& [n, t] : m.params()) {
        names.push_back(n);
        values.push_back(t);
    }
    const auto r = check_gradient(
        [&](Tape& tape, std::vector<Var>& v) {
            Var h = ag::conv2d(tape.constant(x), v[1], v[0], 1);
            h = ag::maxpool2(ag::relu(h));
            h = ag::maxpool2(ag::relu(ag::conv2d(h, v[3], v[2], 1)));
            return ag::cross_entropy_sum(ag::linear(ag::flatten(h), v[5], v[4]), y, 1e-12);
        },
        values);
    CHECK(r.max_rel < 1e-3);
}

TEST_CASE("Adam matches the bias-corrected update rule") {
    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    Adam adam(cfg);
    ParamMap params{{"w", Tensor({2}, std::vector<double>{1.0, -2.0})}};
    const std::vector<std::vector<double>> gs = {{0.5, -1.0}, {0.25, 2.0}};
    std::vector<double> m(2, 0), v(2, 0), p = {1.0, -2.0};
    for (std::size_t t = 1; t <= gs.size(); ++t) {
        Tape tape;
        Var w = tape.param("w", params.at("w"));
        adam.step(params, tape.backward(ag::sum(ag::mul(w, tape.constant(Tensor({2}, gs[t - 1]))))));
        for (std::size_t i = 0; i < 2; ++i) {
            const double g = gs[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, double(t))), vh = v[i] / (1 - std::pow(0.999, double(t)));
            p[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(params.at("w")[i] == doctest::Approx(p[i]).epsilon(1e-14));
        }
    }
    CHECK(adam.steps() == 2);
}

TEST_CASE("Adam refuses a step with a non-finite gradient") {
    Adam adam;
    ParamMap params{{"a", Tensor::scalar(1.0)}, {"b", Tensor::scalar(2.0)}};
    const ParamMap before = params;
    Tape tape;
    Var a = tape.param("a", params.at("a"));
    Var b = tape.param("b", params.at("b"));
    Var loss = ag::add(ag::mul(a, tape.constant(Tensor::scalar(NAN))), b);
    CHECK_THROWS_AS(adam.step(params, tape.backward(loss)), NumericError);
    CHECK(params == before);
    CHECK(adam.steps() == 0);
}
