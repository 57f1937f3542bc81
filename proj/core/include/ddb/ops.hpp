#pragma once

#include "ddb/tensor.hpp"

namespace ddb {

// Probability floor used inside every log() in the loss functions.
inline constexpr double kLogFloor = 1e-12;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor relu(const Tensor& a);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& logits, int axis);

// -sum_i sum_j weights(i) * onehot(i,j) * log(max(probs(i,j), kLogFloor)).
// probs/onehot are HxWxK, weights HxW. Rows of onehot that are all zero are
// ignored pixels and contribute nothing.
Tensor weighted_cross_entropy(const Tensor& probs, const Tensor& onehot,
                              const Tensor& weights);

// Unweighted special case (weights identically 1).
Tensor cross_entropy(const Tensor& probs, const Tensor& onehot);

// sum_i sum_j t(i,j) * (log t(i,j) - log s(i,j)), logs floored at kLogFloor.
Tensor kl_divergence(const Tensor& student_probs, const Tensor& teacher_probs);

// Per-pixel one-hot of the argmax over the last axis; ties go to the lowest
// class index. The result never carries gradients.
Tensor argmax_onehot(const Tensor& logits);

// x: HxWxCin, kernel: KHxKWxCinxCout, bias: Cout. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

// x: NxDin, weight: DinxDout, bias: Dout.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Bilinear interpolation by an integer factor, align-corners off, edge
// replication outside the frame. x: HxWxC -> (H*f)x(W*f)xC.
Tensor bilinear_upsample(const Tensor& x, int factor);

}  // namespace ddb
