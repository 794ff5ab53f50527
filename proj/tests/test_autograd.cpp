#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"

using namespace vapl;
using vapl::testing::check_gradient;
using vapl::testing::random_tensor;

namespace {

// Random weighting turns any tensor output into a scalar with a non-trivial gradient.
Var weighted_sum(Tape& tape, Var v, std::uint64_t seed) {
    Rng rng(seed);
    return ag::sum(ag::mul(v, tape.constant(random_tensor(v.shape(), rng))));
}

constexpr double kTol = 1e-3;

}  // namespace

TEST_CASE("elementwise ops pass finite differences") {
    Rng rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
        auto check = [&](auto op) {
            const auto r = check_gradient(
                [&](Tape& t, std::vector<Var>& v) { return weighted_sum(t, op(v[0], v[1]), 11); }, {a, b});
            CHECK(r.max_rel < kTol);
        };
        check([](Var x, Var y) { return ag::add(x, y); });
        check([](Var x, Var y) { return ag::sub(x, y); });
        check([](Var x, Var y) { return ag::mul(x, y); });
        check([](Var x, Var) { return ag::scale(x, -2.5); });
        check([](Var x, Var) { return ag::abs(x); });
        check([](Var x, Var) { return ag::relu(x); });
        check([](Var x, Var) { return ag::exp(x); });
        check([](Var x, Var) { return ag::one_plus_tanh(x); });
        check([](Var x, Var) { return ag::reshape(x, {4, 3}); });
        check([](Var x, Var) { return ag::flatten(x); });
    }
}

TEST_CASE("reductions pass finite differences") {
    Rng rng(2);
    const Tensor a = random_tensor({2, 5}, rng);
    CHECK(check_gradient([](Tape&, std::vector<Var>& v) { return ag::sum(v[0]); }, {a}).max_rel < kTol);
    CHECK(check_gradient([](Tape&, std::vector<Var>& v) { return ag::square_sum(v[0]); }, {a}).max_rel < kTol);
    CHECK(check_gradient(
              [](Tape&, std::vector<Var>& v) {
                  return ag::add_n({ag::square_sum(v[0]), ag::scale(ag::sum(v[0]), 3.0), ag::sum(ag::exp(v[0]))});
              },
              {a})
              .max_rel < kTol);
}

TEST_CASE("layer ops pass finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor x = random_tensor({2, 2, 6, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng),
                     b = random_tensor({3}, rng);
        CHECK(check_gradient([](Tape& t, std::vector<Var>& v) { return weighted_sum(t, ag::conv2d(v[0], v[1], v[2], 1), 5); },
                             {x, w, b})
                  .max_rel < kTol);
        CHECK(check_gradient([](Tape& t, std::vector<Var>& v) { return weighted_sum(t, ag::maxpool2(v[0]), 6); }, {x})
                  .max_rel < kTol);
        const Tensor f = random_tensor({4, 5}, rng), fw = random_tensor({3, 5}, rng), fb = random_tensor({3}, rng);
        CHECK(check_gradient([](Tape& t, std::vector<Var>& v) { return weighted_sum(t, ag::linear(v[0], v[1], v[2]), 7); },
                             {f, fw, fb})
                  .max_rel < kTol);
        CHECK(check_gradient([](Tape& t, std::vector<Var>& v) { return weighted_sum(t, ag::matmul_t(v[0], v[1]), 8); },
                             {f, fw})
                  .max_rel < kTol);
        const Tensor m = random_tensor({2, 6, 6}, rng, 0.0, 1.0);
        CHECK(check_gradient([](Tape& t, std::vector<Var>& v) { return weighted_sum(t, ag::mask_channels(v[0], v[1]), 9); },
                             {x, m})
                  .max_rel < kTol);
    }
}

TEST_CASE("cross entropy passes finite differences and matches the closed form") {
    Rng rng(4);
    const Tensor z = random_tensor({4, 3}, rng, -3, 3);
    Tensor y({4, 3});
    for (std::size_t n = 0; n < 4; ++n) y[n * 3 + n % 3] = 1.0;
    CHECK(check_gradient([&](Tape&, std::vector<Var>& v) { return ag::cross_entropy_sum(v[0], y, 1e-12); }, {z})
              .max_rel < kTol);
    Tape tape;
    const double got = ag::cross_entropy_sum(tape.constant(z), y, 1e-12).value().item();
    const Tensor lp = kernels::log_softmax_rows(z);
    double want = 0;
    for (std::size_t n = 0; n < 4; ++n) want -= lp[n * 3 + n % 3];
    CHECK(got == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("cross entropy clamps tiny probabilities and stops their gradient") {
    Tensor z({1, 2}, std::vector<double>{0.0, 100.0});
    Tensor y({1, 2}, std::vector<double>{1.0, 0.0});
    Tape tape;
    Var v = tape.variable(z);
    Var loss = ag::cross_entropy_sum(v, y, 1e-12);
    CHECK(loss.value().item() == doctest::Approx(-std::log(1e-12)));
    tape.backward(loss);
    CHECK(tape.grad(v).vec() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward returns a gradient for every named parameter") {
    Tape tape;
    Var a = tape.param("a", Tensor({2}, std::vector<double>{1, 2}));
    tape.param("unused", Tensor({3}, 1.0));
    const Gradients g = tape.backward(ag::square_sum(a));
    CHECK(g.at("a").vec() == std::vector<double>{2, 4});
    CHECK(g.at("unused").vec() == std::vector<double>{0, 0, 0});
    CHECK_THROWS_WITH_AS(g.at("missing"), "parameter 'missing' is not on the tape", Error);
}

TEST_CASE("gradient subsets strip their prefix") {
    Tape tape;
    Var a = tape.param("m.w", Tensor::scalar(3));
    Var b = tape.param("o.w", Tensor::scalar(4));
    const Gradients g = tape.backward(ag::add(ag::square_sum(a), b));
    const Gradients m = g.subset("m.");
    CHECK(m.size() == 1);
    CHECK(m.at("w").item() == 6);
    CHECK(g.subset("o.").at("w").item() == 1);
}

TEST_CASE("tape misuse is reported") {
    Tape tape;
    tape.param("w", Tensor::scalar(1));
    CHECK_THROWS_AS(tape.param("w", Tensor::scalar(2)), Error);
    Var v = tape.variable(Tensor({2}, 1.0));
    CHECK_THROWS_AS(tape.backward(v), ShapeError);
    CHECK_THROWS_AS(ag::add(v, tape.constant(Tensor({3}))), ShapeError);
    Tape other;
    CHECK_THROWS_AS(other.backward(ag::sum(v)), Error);
}

TEST_CASE("constants collect no gradient") {
    Tape tape;
    Var c = tape.constant(Tensor::scalar(2));
    Var w = tape.param("w", Tensor::scalar(3));
    tape.backward(ag::mul(c, w));
    CHECK(tape.grad(c).empty());
    CHECK(tape.grad(w).item() == 2);
}
