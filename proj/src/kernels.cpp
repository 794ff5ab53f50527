#include "vapl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vapl/errors.hpp"

namespace vapl::kernels {

namespace {

void check_conv(const Tensor& x, const Tensor& w, std::size_t pad) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        throw ShapeError("conv2d: weight must be [O,C,k,k], got " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(1))
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    if (x.dim(2) + 2 * pad < w.dim(2) || x.dim(3) + 2 * pad < w.dim(3))
        throw ShapeError("conv2d: kernel larger than padded input");
}

// Valid output column range [lo, hi) for kernel column offset kx.
inline void col_range(std::size_t kx, std::size_t pad, std::size_t in_w, std::size_t out_w, std::size_t& lo,
                      std::size_t& hi) {
    // input column = x + kx - pad must be in [0, in_w)
    lo = kx < pad ? pad - kx : 0;
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(in_w) + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(kx);
    hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(h, 0, static_cast<std::ptrdiff_t>(out_w)));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad) {
    check_conv(x, w, pad);
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    const std::size_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
    if (b.size() != O) throw ShapeError("conv2d: bias has " + std::to_string(b.size()) + " values, expected " +
                                        std::to_string(O));
    Tensor out({B, O, OH, OW});
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    double* op = out.data().data();
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            double* oplane = op + (n * O + o) * OH * OW;
            std::fill(oplane, oplane + OH * OW, b[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = xp + (n * C + c) * H * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double wv = wp[((o * C + c) * K + ky) * K + kx];
                        std::size_t lo, hi;
                        col_range(kx, pad, W, OW, lo, hi);
                        if (hi <= lo) continue;
                        for (std::size_t y = 0; y < OH; ++y) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            const double* irow = iplane + static_cast<std::size_t>(iy) * W + (lo + kx - pad);
                            double* orow = oplane + y * OW + lo;
                            for (std::size_t j = 0; j < hi - lo; ++j) orow[j] += wv * irow[j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, std::size_t pad, Tensor* gx, Tensor* gw,
                     Tensor* gb) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    const std::size_t OH = gout.dim(2), OW = gout.dim(3);
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* gp = gout.data().data();
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            const double* gplane = gp + (n * O + o) * OH * OW;
            if (gb) {
                double s = 0.0;
                for (std::size_t i = 0; i < OH * OW; ++i) s += gplane[i];
                (*gb)[o] += s;
            }
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = xp + (n * C + c) * H * W;
                double* giplane = gx ? gx->data().data() + (n * C + c) * H * W : nullptr;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const std::size_t widx = ((o * C + c) * K + ky) * K + kx;
                        const double wv = wp[widx];
                        std::size_t lo, hi;
                        col_range(kx, pad, W, OW, lo, hi);
                        if (hi <= lo) continue;
                        double acc = 0.0;
                        for (std::size_t y = 0; y < OH; ++y) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            const std::size_t ioff = static_cast<std::size_t>(iy) * W + (lo + kx - pad);
                            const double* grow = gplane + y * OW + lo;
                            if (gw) {
                                const double* irow = iplane + ioff;
                                for (std::size_t j = 0; j < hi - lo; ++j) acc += grow[j] * irow[j];
                            }
                            if (giplane) {
                                double* girow = giplane + ioff;
                                for (std::size_t j = 0; j < hi - lo; ++j) girow[j] += wv * grow[j];
                            }
                        }
                        if (gw) (*gw)[widx] += acc;
                    }
                }
            }
        }
    }
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

Tensor maxpool2(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("maxpool2: input must be [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / 2, OW = W / 2;
    if (OH == 0 || OW == 0) throw ShapeError("maxpool2: input " + shape_str(x.shape()) + " too small");
    Tensor out({B, C, OH, OW});
    for (std::size_t p = 0; p < B * C; ++p) {
        const double* ip = x.data().data() + p * H * W;
        double* op = out.data().data() + p * OH * OW;
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t xo = 0; xo < OW; ++xo) {
                const double* r0 = ip + 2 * y * W + 2 * xo;
                const double* r1 = r0 + W;
                op[y * OW + xo] = std::max(std::max(r0[0], r0[1]), std::max(r1[0], r1[1]));
            }
    }
    return out;
}

void maxpool2_backward(const Tensor& x, const Tensor& gout, Tensor& gx) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H / 2, OW = W / 2;
    for (std::size_t p = 0; p < B * C; ++p) {
        const double* ip = x.data().data() + p * H * W;
        const double* gp = gout.data().data() + p * OH * OW;
        double* gi = gx.data().data() + p * H * W;
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t xo = 0; xo < OW; ++xo) {
                // first maximum in scan order receives the gradient
                std::size_t best = 2 * y * W + 2 * xo;
                const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
                for (std::size_t c : cand)
                    if (ip[c] > ip[best]) best = c;
                gi[best] += gp[y * OW + xo];
            }
    }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || w.dim(1) != x.dim(1))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
    if (!b.empty() && b.size() != w.dim(0)) throw ShapeError("linear: bias size mismatch");
    const std::size_t B = x.dim(0), F = x.dim(1), K = w.dim(0);
    Tensor out({B, K});
    for (std::size_t n = 0; n < B; ++n) {
        const double* xr = x.data().data() + n * F;
        for (std::size_t k = 0; k < K; ++k) {
            const double* wr = w.data().data() + k * F;
            double s = b.empty() ? 0.0 : b[k];
            for (std::size_t f = 0; f < F; ++f) s += xr[f] * wr[f];
            out[n * K + k] = s;
        }
    }
    return out;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx, Tensor* gw, Tensor* gb) {
    const std::size_t B = x.dim(0), F = x.dim(1), K = w.dim(0);
    for (std::size_t n = 0; n < B; ++n) {
        const double* xr = x.data().data() + n * F;
        for (std::size_t k = 0; k < K; ++k) {
            const double g = gout[n * K + k];
            if (gb) (*gb)[k] += g;
            const double* wr = w.data().data() + k * F;
            if (gw) {
                double* gwr = gw->data().data() + k * F;
                for (std::size_t f = 0; f < F; ++f) gwr[f] += g * xr[f];
            }
            if (gx) {
                double* gxr = gx->data().data() + n * F;
                for (std::size_t f = 0; f < F; ++f) gxr[f] += g * wr[f];
            }
        }
    }
}

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expected [B,K], got " + shape_str(logits.shape()));
    logits.check_finite("softmax input");
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    Tensor out = Tensor::like(logits);
    for (std::size_t n = 0; n < B; ++n) {
        const double* r = logits.data().data() + n * K;
        const double m = *std::max_element(r, r + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(r[k] - m);
        for (std::size_t k = 0; k < K; ++k) out[n * K + k] = std::exp(r[k] - m) / z;
    }
    return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("log_softmax: expected [B,K], got " + shape_str(logits.shape()));
    logits.check_finite("log_softmax input");
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    Tensor out = Tensor::like(logits);
    for (std::size_t n = 0; n < B; ++n) {
        const double* r = logits.data().data() + n * K;
        const double m = *std::max_element(r, r + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(r[k] - m);
        const double lz = m + std::log(z);
        for (std::size_t k = 0; k < K; ++k) out[n * K + k] = r[k] - lz;
    }
    return out;
}

Tensor mask_channels(const Tensor& image, const Tensor& mask) {
    if (image.rank() != 4 || mask.rank() != 3 || mask.dim(0) != image.dim(0) || mask.dim(1) != image.dim(2) ||
        mask.dim(2) != image.dim(3))
        throw ShapeError("mask " + shape_str(mask.shape()) + " does not fit image " + shape_str(image.shape()));
    const std::size_t B = image.dim(0), C = image.dim(1), HW = image.dim(2) * image.dim(3);
    Tensor out = Tensor::like(image);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* ip = image.data().data() + (n * C + c) * HW;
            const double* mp = mask.data().data() + n * HW;
            double* op = out.data().data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) op[i] = ip[i] * mp[i];
        }
    return out;
}

}  // namespace vapl::kernels
