#include <cmath>
#include <memory>

#include "doctest.h"
#include "support.hpp"
#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"
#include "vapl/refine.hpp"

using namespace vapl;
using vapl::testing::check_gradient;
using vapl::testing::random_tensor;

namespace {

// Scalar evaluation written out from the definition: positive weights exp(W),
// hidden units alternate tanh and softplus - ln 2, linear output.
double g_reference(const MonotoneWeightNet& g, double x) {
    std::vector<double> h{x};
    for (std::size_t k = 0; k < g.layers(); ++k) {
        const Tensor& raw = g.params().at(MonotoneWeightNet::layer_name(k));
        std::vector<double> next(raw.dim(0), 0.0);
        for (std::size_t o = 0; o < raw.dim(0); ++o) {
            for (std::size_t i = 0; i < raw.dim(1); ++i) next[o] += std::exp(raw[o * raw.dim(1) + i]) * h[i];
            if (k + 1 < g.layers()) next[o] = o % 2 == 0 ? std::tanh(next[o]) : std::log(1.0 + std::exp(next[o])) - std::log(2.0);
        }
        h = next;
    }
    return h[0];
}

AttentionPrompt random_prompt(std::size_t h, std::size_t w, Rng& rng) {
    std::vector<int> v(h * w);
    for (int& x : v) {
        const double u = uniform01(rng);
        x = u < 0.15 ? 1 : u < 0.3 ? 0 : -1;
    }
    return AttentionPrompt(h, w, v);
}

ModelSpec small_spec() {
    ModelSpec s;
    s.height = s.width = 12;
    return s;
}

}  // namespace

TEST_CASE("monotone net: g(0) = 0 exactly, monotone, and g(1) = 1 at initialization") {
    for (auto phi : {Positivity::Exp, Positivity::OnePlusTanh})
        for (auto act : {HiddenActivation::Relu, HiddenActivation::Tanh, HiddenActivation::Mixed})
            for (std::uint64_t seed = 0; seed < 5; ++seed) {
                MonotoneSpec spec;
                spec.phi = phi;
                spec.activation = act;
                const MonotoneWeightNet g(spec, seed);
                CHECK(g(0.0) == 0.0);
                CHECK(g(1.0) == doctest::Approx(1.0).epsilon(1e-9));
                Rng rng(seed);
                for (int i = 0; i < 1000; ++i) {
                    double a = uniform01(rng), b = uniform01(rng);
                    if (a > b) std::swap(a, b);
                    CHECK(g(a) <= g(b));
                }
            }
}

TEST_CASE("monotone net matches its definition and the batch evaluation") {
    const MonotoneWeightNet g(MonotoneSpec{}, 3);
    Tensor xs({5, 1}, std::vector<double>{0.0, 0.1, 0.4, 0.8, 1.0});
    const Tensor ys = g.evaluate(xs);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(ys[i] == g(xs[i]));
        CHECK(ys[i] == doctest::Approx(g_reference(g, xs[i])).epsilon(1e-12));
    }
    CHECK_THROWS_AS(g.evaluate(Tensor({2, 2})), ShapeError);
}

TEST_CASE("single-layer net and L_Agg") {
    const MonotoneWeightNet g = MonotoneWeightNet::single(std::log(1.5));
    CHECK(g(1.0) == doctest::Approx(1.5));
    CHECK(l_agg(g) == doctest::Approx(0.5));
    CHECK(l_agg(MonotoneWeightNet::single(0.0)) == 0.0);
    CHECK_THROWS_AS(MonotoneWeightNet(MonotoneSpec{{2, 1}}, 0), ConfigError);
}

TEST_CASE("weight net and L_Agg gradients pass finite differences") {
    for (auto act : {HiddenActivation::Tanh, HiddenActivation::Mixed})
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            MonotoneSpec spec;
            spec.activation = act;
            MonotoneWeightNet g(spec, seed);
            for (double& v : g.params()[MonotoneWeightNet::layer_name(g.layers() - 1)].vec()) v += 0.3;
            Rng rng(seed);
            const Tensor x = random_tensor({6, 1}, rng, 0, 1);
            Tape tape;
            const BoundWeightNet bg = g.bind(tape, "g.", true);
            Var loss = ag::add(ag::sum(bg.forward(tape.constant(x))), l_agg(bg, tape));
            const Gradients grads = tape.backward(loss);
            for (std::size_t k = 0; k < g.layers(); ++k) {
                const std::string name = MonotoneWeightNet::layer_name(k);
                const Tensor& analytic = grads.at("g." + name);
                for (std::size_t i = 0; i < analytic.size(); ++i) {
                    auto value = [&](double delta) {
                        MonotoneWeightNet h = g;
                        h.params()[name][i] += delta;
                        double s = l_agg(h);
                        for (std::size_t j = 0; j < x.size(); ++j) s += h(x[j]);
                        return s;
                    };
                    const double numeric = (value(1e-6) - value(-1e-6)) / 2e-6;
                    const double rel = std::fabs(numeric - analytic[i]) /
                                       std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-6});
                    CHECK(rel < 1e-3);
                }
            }
        }
}

TEST_CASE("refine_prompt matches a brute-force loop over all masks") {
    const ClassifierModel f(small_spec(), 4);
    const MonotoneWeightNet g(MonotoneSpec{}, 8);
    Rng rng(5);
    const Tensor img = random_tensor({1, 12, 12}, rng, 0, 1);
    const AttentionPrompt d = random_prompt(12, 12, rng);
    RefineOptions opts;
    opts.n_masks = 200;
    opts.seed = 77;
    const Refinement r = refine_prompt(f, g, img, d, 1, opts);

    const auto masks = sample_perturbations(d, 200, 0.1, 77);
    std::vector<double> acc(144, 0.0);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        Tensor masked({1, 1, 12, 12});
        for (std::size_t j = 0; j < 144; ++j) masked[j] = img[j] * masks[i][j];
        const Tensor p = kernels::softmax_rows(f.forward(masked));
        const double w = g_reference(g, p[1]);
        for (std::size_t j = 0; j < 144; ++j) acc[j] += w * masks[i][j];
    }
    double mx = 0.0;
    for (double& v : acc) {
        v /= 200 * 0.1;
        mx = std::max(mx, v);
    }
    for (std::size_t j = 0; j < 144; ++j) {
        const double want = mx > 1.0 ? acc[j] / mx : acc[j];
        CHECK(std::fabs(r.map[j] - want) <= 1e-6);
    }
    CHECK(r.map.max() <= 1.0);
}

TEST_CASE("pass-through weighting equals the unweighted path bitwise") {
    const ClassifierModel f(small_spec(), 2);
    const MonotoneWeightNet g(MonotoneSpec{}, 1);
    Rng rng(6);
    const Tensor img = random_tensor({1, 12, 12}, rng, 0, 1);
    const AttentionPrompt d = random_prompt(12, 12, rng);
    RefineOptions opts;
    opts.weighting = Weighting::PassThrough;
    const Refinement a = refine_prompt(f, g, img, d, 0, opts);
    const Refinement b = refine_unweighted(f, img, d, 0, opts);
    CHECK(a.map == b.map);
    CHECK(a.weights == a.confidences);
}

TEST_CASE("scoring is independent of the worker count") {
    const ClassifierModel f(small_spec(), 2);
    Rng rng(7);
    const Tensor img = random_tensor({1, 12, 12}, rng, 0, 1);
    const auto masks = sample_perturbations(AttentionPrompt(12, 12), 100, 0.5, 3);
    CHECK(score_masks(f, img, masks, 1, 1) == score_masks(f, img, masks, 1, 4));
    CHECK(score_masks(f, img, masks, 1, 1)[5] == confidence(f, img, masks[5], 1));
}

TEST_CASE("per-pixel normalization divides by each pixel's mask count") {
    BinaryMask a(1, 2), b(1, 2);
    a[0] = 1;
    a[1] = 1;
    b[0] = 1;
    const std::vector<BinaryMask> masks{a, b};
    const std::vector<double> w{0.2, 0.6};
    RefineOptions opts;
    opts.normalization = Normalization::PerPixel;
    const auto pp = aggregate_masks(masks, w, opts);
    CHECK(pp[0] == doctest::Approx(0.4));
    CHECK(pp[1] == doctest::Approx(0.2));
    opts.normalization = Normalization::Expected;
    opts.p = 0.5;
    const auto ex = aggregate_masks(masks, w, opts);
    CHECK(ex[0] == doctest::Approx(0.8));
    CHECK(ex[1] == doctest::Approx(0.2));
    CHECK(normalize_unit({0.5, 2.0}) == std::vector<double>{0.25, 1.0});
    CHECK(normalize_unit({0.5, 1.0}) == std::vector<double>{0.5, 1.0});
}

TEST_CASE("taped aggregation and max normalization pass finite differences") {
    Rng rng(8);
    const AttentionPrompt d = random_prompt(4, 4, rng);
    auto masks = std::make_shared<std::vector<std::vector<BinaryMask>>>();
    masks->push_back(sample_perturbations(d, 6, 0.5, 1));
    masks->push_back(sample_perturbations(d, 6, 0.5, 2));
    for (auto norm : {Normalization::Expected, Normalization::PerPixel}) {
        RefineOptions opts;
        opts.p = 0.5;
        opts.normalization = norm;
        const Tensor w = random_tensor({12, 1}, rng, 0.5, 3.0);
        const Tensor weights = random_tensor({2, 4, 4}, rng);
        const auto r = check_gradient(
            [&](Tape& tape, std::vector<Var>& v) {
                return ag::sum(ag::mul(normalize_unit(aggregate_masks(v[0], masks, opts)), tape.constant(weights)));
            },
            {w});
        CHECK(r.max_rel < 1e-3);
        Tape tape;
        const Tensor a = aggregate_masks(tape.constant(w), masks, opts).value();
        const auto plain = aggregate_masks((*masks)[1], std::span<const double>(w.data().data() + 6, 6), opts);
        for (std::size_t j = 0; j < 16; ++j) CHECK(a[16 + j] == plain[j]);
    }
}

TEST_CASE("refinement input errors") {
    const ClassifierModel f(small_spec(), 2);
    const MonotoneWeightNet g(MonotoneSpec{}, 1);
    CHECK_THROWS_AS(refine_prompt(f, g, Tensor({1, 12, 12}), AttentionPrompt(10, 12), 0, RefineOptions{}), ShapeError);
    RefineOptions bad;
    bad.p = 1.5;
    CHECK_THROWS_AS(refine_prompt(f, g, Tensor({1, 12, 12}), AttentionPrompt(12, 12), 0, bad), ConfigError);
}
