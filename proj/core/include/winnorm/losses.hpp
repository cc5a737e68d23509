#pragma once

#include <span>

#include "winnorm/autodiff.hpp"

namespace winnorm {

/// Batch-mean of -log softmax(logits)[label]. Logits are N x K x 1 x 1 with K >= 2.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

/// Symmetrized KL between the softmax outputs of two logit batches:
/// 0.5 * (KL(p || q) + KL(q || p)), averaged over the batch.
template <typename T>
Var<T> jsd_consistency(const Var<T>& mixed_logits, const Var<T>& global_logits);

/// 0.5 * (CE(mixed) + CE(global)) + delta * JSD(mixed, global).
template <typename T>
Var<T> total_loss(const Var<T>& mixed_logits, const Var<T>& global_logits, std::span<const int> labels, double delta);

}  // namespace winnorm
