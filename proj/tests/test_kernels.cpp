#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vapl/errors.hpp"
#include "vapl/kernels.hpp"

using namespace vapl;
using vapl::testing::random_tensor;

namespace {

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
    const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
    Tensor out({B, O, Ho, Wo});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xx = 0; xx < Wo; ++xx) {
                    double s = b[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const long iy = long(y + ky) - long(pad), ix = long(xx + kx) - long(pad);
                                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                                s += w[((o * C + c) * K + ky) * K + kx] * x[((n * C + c) * H + iy) * W + ix];
                            }
                    out[((n * O + o) * Ho + y) * Wo + xx] = s;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop for several kernel sizes and paddings") {
    Rng rng(7);
    for (std::size_t k : {1, 3, 5})
        for (std::size_t pad : {0, 1, 2}) {
            if (pad >= k) continue;
            const Tensor x = random_tensor({2, 3, 7, 6}, rng);
            const Tensor w = random_tensor({4, 3, k, k}, rng);
            const Tensor b = random_tensor({4}, rng);
            const Tensor got = kernels::conv2d(x, w, b, pad);
            const Tensor want = naive_conv(x, w, b, pad);
            REQUIRE(got.shape() == want.shape());
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
}

TEST_CASE("conv2d rejects mismatched channels") {
    Tensor x({1, 2, 4, 4}), w({3, 1, 3, 3}), b({3});
    CHECK_THROWS_AS(kernels::conv2d(x, w, b, 1), ShapeError);
}

TEST_CASE("maxpool2 keeps the window maximum and routes the gradient to the first maximum") {
    Tensor x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 4, 2, 0});
    const Tensor y = kernels::maxpool2(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y[0] == 5);
    CHECK(y[1] == 2);
    Tensor gx = Tensor::like(x);
    kernels::maxpool2_backward(x, Tensor({1, 1, 1, 2}, std::vector<double>{1, 1}), gx);
    CHECK(gx.vec() == std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0});
}

TEST_CASE("maxpool2 floors odd sizes") {
    Tensor x({1, 1, 5, 3}, 1.0);
    CHECK(kernels::maxpool2(x).shape() == Shape{1, 1, 2, 1});
}

TEST_CASE("linear with and without bias") {
    Tensor x({1, 2}, std::vector<double>{1, 2});
    Tensor w({2, 2}, std::vector<double>{1, 0, 3, 4});
    Tensor b({2}, std::vector<double>{0.5, -1});
    CHECK(kernels::linear(x, w, b).vec() == std::vector<double>{1.5, 10});
    CHECK(kernels::linear(x, w, Tensor()).vec() == std::vector<double>{1, 11});
}

TEST_CASE("softmax rows are stable for large logits") {
    Tensor z({2, 3}, std::vector<double>{1000, 1001, 1002, -5, 0, 5});
    const Tensor p = kernels::softmax_rows(z);
    const Tensor lp = kernels::log_softmax_rows(z);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            s += p[r * 3 + k];
            CHECK(std::log(p[r * 3 + k]) == doctest::Approx(lp[r * 3 + k]).epsilon(1e-12));
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0) + std::exp(2.0))).epsilon(1e-12));
}

TEST_CASE("softmax reports non-finite logits") {
    Tensor z({1, 2}, std::vector<double>{0, NAN});
    CHECK_THROWS_AS(kernels::softmax_rows(z), NumericError);
}

TEST_CASE("mask_channels broadcasts over channels") {
    Tensor img({1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4});
    Tensor m({1, 1, 2}, std::vector<double>{0, 0.5});
    CHECK(kernels::mask_channels(img, m).vec() == std::vector<double>{0, 1, 0, 2});
}
