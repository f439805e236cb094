#pragma once

// Differentiable primitives. Every op validates shapes up front and throws
// ShapeError on mismatch; gradients are exact (relu uses subgradient 0 at 0).

#include <vector>

#include "xrdattn/tensor.hpp"

namespace xrdattn::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// x: [B, L, Cin], w: [k, Cin, Cout], b: [Cout] -> [B, L, Cout].
/// Stride 1, zero "same" padding: (k-1)/2 zeros on the left, the rest on the right.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

enum class BnMode { Train, Eval };

/// Running statistics owned by a batch-norm layer (not differentiated).
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

inline constexpr double kBatchNormEps = 1e-5;

/// Normalizes the last axis (channels) over all leading positions. Train mode
/// uses batch statistics and folds them into `state` with weight `momentum`
/// (running_var tracks the unbiased variance); eval mode uses `state`.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   BnMode mode, double momentum = 0.1);

/// x: [B, n], w: [n, m], b: [m] -> [B, m].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// [..., p, q] x [..., q, r] -> [..., p, r]; leading axes broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

/// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);

/// mean_b acosh(1 + (pred_b - target_b)^2). The derivative at zero error is
/// taken as 0 (the function has a |e|-like kink there).
Tensor acosh_loss(const Tensor& pred, const Tensor& target);
/// mean_b log(cosh(pred_b - target_b)); smooth alternative to acosh_loss.
Tensor log_cosh_loss(const Tensor& pred, const Tensor& target);

/// mean_b of -sum_c onehot[b,c] * log_softmax(logits)[b,c].
Tensor cross_entropy(const Tensor& logits, const Tensor& onehot);

/// sum_i weights[i] * losses[i]; throws LengthError on size mismatch.
Tensor weighted_sum_loss(const std::vector<Tensor>& losses, const std::vector<double>& weights);

}  // namespace xrdattn::ad
