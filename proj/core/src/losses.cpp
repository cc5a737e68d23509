#include "winnorm/losses.hpp"

#include "winnorm/error.hpp"
#include "winnorm/ops.hpp"

namespace winnorm {

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Dims d = logits.dims();
  if (d.h != 1 || d.w != 1 || d.c < 2) throw ShapeError("cross_entropy expects N x K logits with K >= 2, got " + d.str());
  if (labels.size() != d.n) throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + d.str());
  if (d.n == 0) throw DegenerateInputError("cross_entropy of an empty batch");
  Tensor4<T> pick(d);
  const T weight = T{-1} / static_cast<T>(d.n);
  for (std::size_t n = 0; n < d.n; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= d.c) {
      throw ConfigError("label " + std::to_string(labels[n]) + " out of range for " + std::to_string(d.c) + " classes");
    }
    pick.at(n, static_cast<std::size_t>(labels[n])) = weight;
  }
  const Var<T> log_p = ops::log_softmax(logits);
  return ops::sum_all(ops::mul(log_p, logits.tape().constant(std::move(pick))));
}

template <typename T>
Var<T> jsd_consistency(const Var<T>& mixed_logits, const Var<T>& global_logits) {
  if (mixed_logits.dims() != global_logits.dims()) {
    throw ShapeError("jsd_consistency: " + mixed_logits.dims().str() + " vs " + global_logits.dims().str());
  }
  const Var<T> log_p = ops::log_softmax(mixed_logits);
  const Var<T> log_q = ops::log_softmax(global_logits);
  // KL(p||q) + KL(q||p) = sum (p - q) * (log p - log q)
  const Var<T> both = ops::sum_all(ops::mul(ops::sub(ops::exp(log_p), ops::exp(log_q)), ops::sub(log_p, log_q)));
  return ops::mul_scalar(both, T{0.5} / static_cast<T>(mixed_logits.dims().n));
}

template <typename T>
Var<T> total_loss(const Var<T>& mixed_logits, const Var<T>& global_logits, std::span<const int> labels, double delta) {
  if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
  const Var<T> ce = ops::mul_scalar(ops::add(cross_entropy(mixed_logits, labels), cross_entropy(global_logits, labels)),
                                    T{0.5});
  if (delta == 0.0) return ce;
  return ops::add(ce, ops::mul_scalar(jsd_consistency(mixed_logits, global_logits), static_cast<T>(delta)));
}

template Var<float> cross_entropy<float>(const Var<float>&, std::span<const int>);
template Var<double> cross_entropy<double>(const Var<double>&, std::span<const int>);
template Var<float> jsd_consistency<float>(const Var<float>&, const Var<float>&);
template Var<double> jsd_consistency<double>(const Var<double>&, const Var<double>&);
template Var<float> total_loss<float>(const Var<float>&, const Var<float>&, std::span<const int>, double);
template Var<double> total_loss<double>(const Var<double>&, const Var<double>&, std::span<const int>, double);

}  // namespace winnorm
