#pragma once

#include <cstddef>
#include <span>

#include "vapl/tensor.hpp"

// Raw numeric kernels shared by the taped ops and the tape-free inference path,
// so both produce bitwise-identical values.
namespace vapl::kernels {

// x[B,C,H,W], w[O,C,k,k], b[O] -> [B,O,H',W'] with H' = H + 2*pad - k + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad);
// Accumulates gradients; pass nullptr for any gradient that is not wanted.
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, std::size_t pad, Tensor* gx, Tensor* gw,
                     Tensor* gb);

Tensor relu(const Tensor& x);

// 2x2 window, stride 2, floor semantics on odd sizes.
Tensor maxpool2(const Tensor& x);
void maxpool2_backward(const Tensor& x, const Tensor& gout, Tensor& gx);

// x[B,F], w[K,F], b[K] -> x w^T + b. An empty `b` means no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gout, Tensor* gx, Tensor* gw, Tensor* gb);

// Row-wise over the last dimension of a [B,K] tensor, max-subtracted.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

// image[B,C,H,W] * mask[B,H,W], mask broadcast across channels.
Tensor mask_channels(const Tensor& image, const Tensor& mask);

}  // namespace vapl::kernels
