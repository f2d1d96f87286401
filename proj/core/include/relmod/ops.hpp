#pragma once

#include <cstdint>
#include <vector>

#include "relmod/tape.hpp"
#include "relmod/tensor.hpp"

namespace relmod::ops {

// Every op computes its forward value eagerly and, when the tape is
// recording and an input requires grad, registers one backward rule.
// Shape violations throw ShapeError naming the op and the shapes involved.

/// a [m,k] x b [k,n] -> [m,n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

/// x [m,n] -> [n,m]
Tensor transpose(Tape& tape, const Tensor& x);

/// x [..., n] + b [n], broadcast over leading axes.
Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& b);

Tensor relu(Tape& tape, const Tensor& x);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

/// Elementwise a / b. Guards against zero denominators and non-finite
/// results (NumericError).
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add_const(Tape& tape, const Tensor& x, double c);
Tensor mul_const(Tape& tape, const Tensor& x, double c);

/// Concatenates tensors of equal rank along `axis`.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);

/// Copies `len` slots starting at `start` along `axis`.
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);

/// Sum/mean over one axis; the axis is removed from the shape
/// (a fully reduced tensor keeps shape [1]).
Tensor reduce_sum(Tape& tape, const Tensor& x, std::size_t axis);
Tensor reduce_mean(Tape& tape, const Tensor& x, std::size_t axis);

/// Sum of all elements -> shape [1].
Tensor sum_all(Tape& tape, const Tensor& x);

/// x [H,W,C] with even H and W -> [H/2,W/2,C]. Ties broken by the first
/// element in row-major window order so backward is deterministic.
Tensor maxpool2x2(Tape& tape, const Tensor& x);

/// Inverted dropout: keep with probability 1-p and scale by 1/(1-p) so
/// eval mode (train=false) is the identity. p in [0,1). The mask is a
/// pure function of seed.
Tensor dropout(Tape& tape, const Tensor& x, double p, bool train, std::uint64_t seed);

/// input [H,W,Cin] cross-correlated with kernel [k,k,Cin,Cout] -> [Ho,Wo,Cout],
/// Ho = (H + 2*pad - k)/stride + 1. Zero padding.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t pad);

/// y = s * x / ||x||2, applied to a vector [D] or independently to each
/// row of [B,D]. Norm below epsilon throws DegenerateVectorError.
Tensor l2_normalize_scale(Tape& tape, const Tensor& x, double s);

/// Cosine similarity of two vectors -> shape [1], value clamped to [-1,1].
Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b);

/// Selects rows of x [K,D] by index (duplicates allowed) -> [R,D].
Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<std::size_t>& rows);

/// Mean negative log-likelihood of labels under softmax(logits [B,M]).
Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

/// Norm-division guard used by the normalizing ops.
inline constexpr double kNormEpsilon = 1e-12;

}  // namespace relmod::ops
