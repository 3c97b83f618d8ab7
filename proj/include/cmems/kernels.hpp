#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmems/tensor.hpp"

// Compute kernels for the segmentation network. `cmems::kernels` holds the
// OpenMP/GEMM implementations used for training; `cmems::kernels::reference`
// holds direct serial loops with identical signatures, kept as test oracles and
// as the benchmark baseline.
//
// All kernels are bitwise deterministic for a given input regardless of the
// OpenMP thread count: parallel loops only split independent outputs.

namespace cmems::kernels {

/// 2-D convolution, stride 1, zero padding kernel/2.
/// weight is [out][in][kernel][kernel], bias is [out].
void conv2d_forward(const Tensor& x, std::span<const real> weight, std::span<const real> bias, int out_channels,
                    int kernel, Tensor& y);

/// Accumulates into dweight and dbias; overwrites *dx when dx is non-null.
void conv2d_backward(const Tensor& x, std::span<const real> weight, const Tensor& dy, int kernel, Tensor* dx,
                     std::span<real> dweight, std::span<real> dbias);

/// Training-mode batch normalization over (N,H,W) per channel.
/// Outputs the batch mean, biased variance and 1/sqrt(var+eps).
void batchnorm_forward_train(const Tensor& x, std::span<const real> gamma, std::span<const real> beta, real eps,
                             Tensor& y, std::vector<real>& mean, std::vector<real>& var, std::vector<real>& invstd);

void batchnorm_forward_eval(const Tensor& x, std::span<const real> gamma, std::span<const real> beta,
                            std::span<const real> running_mean, std::span<const real> running_var, real eps,
                            Tensor& y);

/// Backward of the training-mode forward. Accumulates dgamma/dbeta.
void batchnorm_backward(const Tensor& x, const Tensor& dy, std::span<const real> gamma, std::span<const real> mean,
                        std::span<const real> invstd, Tensor& dx, std::span<real> dgamma, std::span<real> dbeta);

void leaky_relu_forward(const Tensor& x, real slope, Tensor& y);
/// dx may alias dy.
void leaky_relu_backward(const Tensor& x, const Tensor& dy, real slope, Tensor& dx);

/// 2×2 max pooling, stride 2. argmax stores the winning flat index within each input plane;
/// ties resolve to the first element in row-major order.
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Shape4 x_shape, Tensor& dx);

/// 2× bilinear upsampling with half-pixel centres (align_corners = false).
void upsample2_forward(const Tensor& x, Tensor& y);
void upsample2_backward(const Tensor& dy, Shape4 x_shape, Tensor& dx);

/// Softmax over the channel axis with max subtraction.
void softmax_channels(const Tensor& logits, Tensor& probs);

namespace reference {

void conv2d_forward(const Tensor& x, std::span<const real> weight, std::span<const real> bias, int out_channels,
                    int kernel, Tensor& y);
void conv2d_backward(const Tensor& x, std::span<const real> weight, const Tensor& dy, int kernel, Tensor* dx,
                     std::span<real> dweight, std::span<real> dbias);
void batchnorm_forward_train(const Tensor& x, std::span<const real> gamma, std::span<const real> beta, real eps,
                             Tensor& y, std::vector<real>& mean, std::vector<real>& var, std::vector<real>& invstd);
void batchnorm_backward(const Tensor& x, const Tensor& dy, std::span<const real> gamma, std::span<const real> mean,
                        std::span<const real> invstd, Tensor& dx, std::span<real> dgamma, std::span<real> dbeta);
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Shape4 x_shape, Tensor& dx);
void upsample2_forward(const Tensor& x, Tensor& y);
void upsample2_backward(const Tensor& dy, Shape4 x_shape, Tensor& dx);
void softmax_channels(const Tensor& logits, Tensor& probs);

}  // namespace reference
}  // namespace cmems::kernels
