#pragma once

#include <vector>

#include "lungsynth/nn/tensor.hpp"

namespace lungsynth::nn {

// 2D convolution, NCHW input, weight [Cout, Cin, k, k], optional bias [Cout].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

// x [N, F], weight [O, F], bias [O] (optional).
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var add_scalar(const Var& a, float s);

// Per-channel broadcast over H, W (and N when v is [C]). v is [C] or [N, C].
Var add_channel(const Var& x, const Var& v);
Var mul_channel(const Var& x, const Var& v);

Var relu(const Var& x);
Var silu(const Var& x);
Var sigmoid(const Var& x);

// Normalizes each (sample, group) to zero mean and unit variance; no affine.
Var group_norm(const Var& x, int groups, float eps = 1e-5f);

Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);
Var reshape(const Var& x, std::vector<int> shape);

Var sum(const Var& x);
Var mean(const Var& x);

// Scalar losses.
Var mse_loss(const Var& pred, const Tensor& target);
// logits [N, K]; labels in [0, K).
Var cross_entropy(const Var& logits, const std::vector<int>& labels);
// Elementwise logistic loss weighted by `weights`, summed and divided by
// `normalizer`.
Var bce_with_logits(const Var& logits, const Tensor& targets, const Tensor& weights, float normalizer);
// Smooth L1 (beta = 1/9 as in region-proposal training), weighted, summed,
// divided by `normalizer`.
Var smooth_l1(const Var& pred, const Tensor& target, const Tensor& weights, float normalizer, float beta = 1.0f / 9.0f);

// Nearest-neighbour resize of a constant tensor (used for label maps).
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);

}  // namespace lungsynth::nn
