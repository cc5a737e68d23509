#pragma once

#include <cstdint>
#include <span>

#include "winnorm/autodiff.hpp"

namespace winnorm::ops {

// Binary elementwise ops accept b with a's dims, or b of shape (N or 1) x C x 1 x 1,
// which broadcasts one scalar per (instance, channel) over the H x W plane.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> add_scalar(const Var<T>& a, T s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, T s);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
/// max(a, s) elementwise; the gradient passes where a > s.
template <typename T> Var<T> maximum(const Var<T>& a, T s);
template <typename T> Var<T> relu(const Var<T>& a) { return maximum(a, T{0}); }

/// Sum / mean of every element, as a 1 x 1 x 1 x 1 node.
template <typename T> Var<T> sum_all(const Var<T>& a);
template <typename T> Var<T> mean_all(const Var<T>& a);

/// Returns a copy of `a` that does not propagate gradients.
template <typename T> Var<T> detach(const Var<T>& a);

template <typename T>
struct MeanVar {
  Var<T> mean;
  Var<T> var;
};

/// Population mean and variance (divide by the pixel count) per (n, c) over the full H x W plane.
/// Outputs are N x C x 1 x 1.
template <typename T> MeanVar<T> reduce_mean_var(const Var<T>& f);
/// Same, restricted to the listed plane offsets (h * W + w), applied identically to every (n, c).
/// Visiting the pixels 0..HW-1 in order reproduces the full-plane result bit for bit.
template <typename T> MeanVar<T> reduce_mean_var(const Var<T>& f, std::span<const std::uint32_t> pixels);
/// Population mean and variance per channel over (N, H, W); outputs are 1 x C x 1 x 1.
template <typename T> MeanVar<T> channel_mean_var(const Var<T>& f);

/// (f - mean) / sqrt(var + eps) with mean and var of shape (N or 1) x C x 1 x 1, as one
/// node. Throws DegenerateInputError when var + eps is not positive.
template <typename T> Var<T> standardize(const Var<T>& f, const Var<T>& mean, const Var<T>& var, T eps);

/// 3x3 cross-correlation without bias. Kernel dims are C_out x C_in x 3 x 3; pad in {0,1}, stride in {1,2}.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, int stride, int pad);
/// 2x2 average pooling with stride 2; H and W must be even.
template <typename T> Var<T> avgpool2(const Var<T>& x);
/// N x C x H x W -> N x C x 1 x 1.
template <typename T> Var<T> global_avgpool(const Var<T>& x);
/// x: N x D, weight: D x K, bias: 1 x K (all stored as rank-4 with trailing 1 x 1) -> N x K.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);
/// Max-shifted log-softmax over the C axis of an N x K x 1 x 1 node.
template <typename T> Var<T> log_softmax(const Var<T>& logits);

}  // namespace winnorm::ops
