#include "winnorm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "winnorm/parallel.hpp"

namespace winnorm::ops {

namespace {

// Sum of term(0..count-1) split over fixed lanes. The order is a pure function of
// count, so results stay reproducible while the lanes break the add dependency chain.
template <typename Term>
double lane_sum(std::size_t count, Term term) {
  constexpr std::size_t kLanes = 8;
  double acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= count; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(k + l);
  }
  for (; k < count; ++k) acc[k % kLanes] += term(k);
  double total = 0.0;
  for (double a : acc) total += a;
  return total;
}

enum class Broadcast { same, per_nc, per_c };

Broadcast classify(const Dims& a, const Dims& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (b.h == 1 && b.w == 1 && b.c == a.c) {
    if (b.n == a.n) return Broadcast::per_nc;
    if (b.n == 1) return Broadcast::per_c;
  }
  throw ShapeError(std::string(op) + ": cannot combine " + a.str() + " with " + b.str());
}

template <typename T>
bool any_requires_grad(const Var<T>& a, const Var<T>& b) {
  return a.requires_grad() || b.requires_grad();
}

// out[i] = f(a[i], b[j(i)]); derivatives receive (a, b) and return the partial.
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, F f, DA dfa, DB dfb) {
  const Broadcast mode = classify(a.dims(), b.dims(), name);
  const Dims d = a.dims();
  const std::size_t plane = d.plane();
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor4<T> out(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t base = (n * d.c + c) * plane;
      if (mode == Broadcast::same) {
        for (std::size_t p = 0; p < plane; ++p) out[base + p] = f(av[base + p], bv[base + p]);
      } else {
        const T y = bv[(mode == Broadcast::per_nc ? n * d.c : 0) + c];
        for (std::size_t p = 0; p < plane; ++p) out[base + p] = f(av[base + p], y);
      }
    }
  }
  require_finite<T>(out.data(), name);

  auto& tape = a.tape();
  Var<T> res = tape.result(std::move(out), any_requires_grad(a, b));
  tape.record(res, [an = a.node(), bn = b.node(), mode, dfa, dfb](const Tensor4<T>& g) {
    const Dims d = an->value.dims();
    const std::size_t plane = d.plane();
    const auto& av = an->value;
    const auto& bv = bn->value;
    T* ga = an->requires_grad ? an->grad_buffer().data().data() : nullptr;
    T* gb = bn->requires_grad ? bn->grad_buffer().data().data() : nullptr;
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t base = (n * d.c + c) * plane;
        if (mode == Broadcast::same) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = base + p;
            if (ga) ga[i] += g[i] * dfa(av[i], bv[i]);
            if (gb) gb[i] += g[i] * dfb(av[i], bv[i]);
          }
        } else {
          const std::size_t j = (mode == Broadcast::per_nc ? n * d.c : 0) + c;
          const T y = bv[j];
          T acc{0};
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = base + p;
            if (ga) ga[i] += g[i] * dfa(av[i], y);
            if (gb) acc += g[i] * dfb(av[i], y);
          }
          if (gb) gb[j] += acc;
        }
      }
    }
  });
  return res;
}

// out[i] = f(a[i]); df receives (a, out).
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& a, const char* name, F f, DF df) {
  const auto& av = a.value();
  Tensor4<T> out(a.dims());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  require_finite<T>(out.data(), name);
  auto& tape = a.tape();
  Var<T> res = tape.result(std::move(out), a.requires_grad());
  tape.record(res, [an = a.node(), rn = std::weak_ptr<Node<T>>(res.node()), df](const Tensor4<T>& g) {
    const auto out = rn.lock();
    const auto& av = an->value;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * df(av[i], out->value[i]);
  });
  return res;
}

template <typename T>
void check_domain(const Tensor4<T>& v, bool (*bad)(T), const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (bad(v[i])) throw DegenerateInputError(std::string(what) + " at element " + std::to_string(i));
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; }, [](T, T) { return T{-1}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  check_domain<T>(b.value(), [](T y) { return y == T{0}; }, "div: zero divisor");
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  return unary(a, "mul_scalar", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  check_domain<T>(a.value(), [](T x) { return x < T{0}; }, "sqrt: negative argument");
  return unary(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T{0.5} / y; });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  check_domain<T>(a.value(), [](T x) { return !(x > T{0}); }, "log: non-positive argument");
  return unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <typename T>
Var<T> maximum(const Var<T>& a, T s) {
  return unary(
      a, "maximum", [s](T x) { return x > s ? x : s; }, [s](T x, T) { return x > s ? T{1} : T{0}; });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  const T* p = a.value().data().data();
  const double acc = lane_sum(a.value().size(), [p](std::size_t k) { return static_cast<double>(p[k]); });
  Tensor4<T> out = Tensor4<T>::scalar(static_cast<T>(acc));
  require_finite<T>(out.data(), "sum_all");
  auto& tape = a.tape();
  Var<T> res = tape.result(std::move(out), a.requires_grad());
  tape.record(res, [an = a.node()](const Tensor4<T>& g) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
  return res;
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  if (a.value().empty()) throw DegenerateInputError("mean_all of an empty tensor");
  return mul_scalar(sum_all(a), T{1} / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return a.tape().constant(a.value());
}

namespace {

// Shared kernel for full-plane and region statistics. `pixels == nullptr` means every
// plane offset in order, which makes the two paths bit-identical on the full plane.
template <typename T>
MeanVar<T> region_stats(const Var<T>& f, std::shared_ptr<const std::vector<std::uint32_t>> pixels) {
  const Dims d = f.dims();
  const std::size_t plane = d.plane();
  const std::size_t count = pixels ? pixels->size() : plane;
  if (count == 0) throw DegenerateInputError("statistics over an empty region");
  if (pixels) {
    for (std::uint32_t p : *pixels) {
      if (p >= plane) throw ShapeError("region pixel " + std::to_string(p) + " outside plane of " + d.str());
    }
  }
  const std::uint32_t* idx = pixels ? pixels->data() : nullptr;
  const auto& fv = f.value();
  Tensor4<T> mean = Tensor4<T>::matrix(d.n, d.c);
  Tensor4<T> var = Tensor4<T>::matrix(d.n, d.c);
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* p = fv.data().data() + (n * d.c + c) * plane;
      const double mu = (idx ? lane_sum(count, [&](std::size_t k) { return static_cast<double>(p[idx[k]]); })
                             : lane_sum(count, [&](std::size_t k) { return static_cast<double>(p[k]); })) *
                        inv;
      auto sq = [mu](double x) { return (x - mu) * (x - mu); };
      const double v = idx ? lane_sum(count, [&](std::size_t k) { return sq(static_cast<double>(p[idx[k]])); })
                           : lane_sum(count, [&](std::size_t k) { return sq(static_cast<double>(p[k])); });
      mean.at(n, c) = static_cast<T>(mu);
      var.at(n, c) = static_cast<T>(v * inv);
    }
  }
  require_finite<T>(mean.data(), "reduce_mean_var");
  require_finite<T>(var.data(), "reduce_mean_var");

  auto& tape = f.tape();
  Var<T> mean_var = tape.result(std::move(mean), f.requires_grad());
  Var<T> var_var = tape.result(std::move(var), f.requires_grad());
  tape.record(mean_var, [fn = f.node(), pixels, count](const Tensor4<T>& g) {
    const Dims d = fn->value.dims();
    const std::size_t plane = d.plane();
    const std::uint32_t* idx = pixels ? pixels->data() : nullptr;
    auto& gf = fn->grad_buffer();
    const T inv = T{1} / static_cast<T>(count);
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        T* gp = gf.data().data() + (n * d.c + c) * plane;
        const T share = g.at(n, c) * inv;
        for (std::size_t k = 0; k < count; ++k) gp[idx ? idx[k] : k] += share;
      }
    }
  });
  tape.record(var_var, [fn = f.node(), mn = mean_var.node(), pixels, count](const Tensor4<T>& g) {
    const Dims d = fn->value.dims();
    const std::size_t plane = d.plane();
    const std::uint32_t* idx = pixels ? pixels->data() : nullptr;
    auto& gf = fn->grad_buffer();
    const T scale = T{2} / static_cast<T>(count);
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const T* p = fn->value.data().data() + (n * d.c + c) * plane;
        T* gp = gf.data().data() + (n * d.c + c) * plane;
        const T mu = mn->value.at(n, c);
        const T s = g.at(n, c) * scale;
        for (std::size_t k = 0; k < count; ++k) {
          const std::size_t i = idx ? idx[k] : k;
          gp[i] += s * (p[i] - mu);
        }
      }
    }
  });
  return {mean_var, var_var};
}

}  // namespace

template <typename T>
MeanVar<T> reduce_mean_var(const Var<T>& f) {
  return region_stats<T>(f, nullptr);
}

template <typename T>
MeanVar<T> reduce_mean_var(const Var<T>& f, std::span<const std::uint32_t> pixels) {
  return region_stats<T>(f, std::make_shared<const std::vector<std::uint32_t>>(pixels.begin(), pixels.end()));
}

template <typename T>
MeanVar<T> channel_mean_var(const Var<T>& f) {
  const Dims d = f.dims();
  const std::size_t plane = d.plane();
  const std::size_t count = d.n * plane;
  if (count == 0) throw DegenerateInputError("channel statistics of an empty tensor");
  const auto& fv = f.value();
  Tensor4<T> mean = Tensor4<T>::matrix(1, d.c);
  Tensor4<T> var = Tensor4<T>::matrix(1, d.c);
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t c = 0; c < d.c; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* p = fv.plane(n, c).data();
      s += lane_sum(plane, [p](std::size_t k) { return static_cast<double>(p[k]); });
    }
    const double mu = s * inv;
    double v = 0.0;
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* p = fv.plane(n, c).data();
      v += lane_sum(plane, [p, mu](std::size_t k) {
        const double dx = static_cast<double>(p[k]) - mu;
        return dx * dx;
      });
    }
    mean[c] = static_cast<T>(mu);
    var[c] = static_cast<T>(v * inv);
  }
  require_finite<T>(var.data(), "channel_mean_var");

  auto& tape = f.tape();
  Var<T> mean_var = tape.result(std::move(mean), f.requires_grad());
  Var<T> var_var = tape.result(std::move(var), f.requires_grad());
  tape.record(mean_var, [fn = f.node(), count](const Tensor4<T>& g) {
    const Dims d = fn->value.dims();
    auto& gf = fn->grad_buffer();
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const T share = g[c] / static_cast<T>(count);
        for (T& x : gf.plane(n, c)) x += share;
      }
    }
  });
  tape.record(var_var, [fn = f.node(), mn = mean_var.node(), count](const Tensor4<T>& g) {
    const Dims d = fn->value.dims();
    auto& gf = fn->grad_buffer();
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const T s = T{2} * g[c] / static_cast<T>(count);
        const T mu = mn->value[c];
        auto src = fn->value.plane(n, c);
        auto dst = gf.plane(n, c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += s * (src[i] - mu);
      }
    }
  });
  return {mean_var, var_var};
}

template <typename T>
Var<T> standardize(const Var<T>& f, const Var<T>& mean, const Var<T>& var, T eps) {
  const Broadcast mode = classify(f.dims(), mean.dims(), "standardize");
  if (mode == Broadcast::same || !(var.dims() == mean.dims())) {
    throw ShapeError("standardize: statistics " + mean.dims().str() + " / " + var.dims().str() + " for input " +
                     f.dims().str());
  }
  const Dims d = f.dims();
  const std::size_t plane = d.plane();
  const std::size_t stats = mean.value().size();
  auto rstd = std::make_shared<std::vector<T>>(stats);
  for (std::size_t j = 0; j < stats; ++j) {
    const T denom = var.value()[j] + eps;
    if (!(denom > T{0})) throw DegenerateInputError("standardize: var + eps is not positive at " + std::to_string(j));
    (*rstd)[j] = T{1} / std::sqrt(denom);
  }
  Tensor4<T> out(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t j = (mode == Broadcast::per_nc ? n * d.c : 0) + c;
      const T m = mean.value()[j];
      const T r = (*rstd)[j];
      const T* src = f.value().data().data() + (n * d.c + c) * plane;
      T* dst = out.data().data() + (n * d.c + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = (src[p] - m) * r;
    }
  }
  require_finite<T>(out.data(), "standardize");

  auto& tape = f.tape();
  Var<T> res = tape.result(std::move(out), f.requires_grad() || mean.requires_grad() || var.requires_grad());
  tape.record(res, [fn = f.node(), mn = mean.node(), vn = var.node(), rstd, mode](const Tensor4<T>& g) {
    const Dims d = fn->value.dims();
    const std::size_t plane = d.plane();
    T* gf = fn->requires_grad ? fn->grad_buffer().data().data() : nullptr;
    T* gm = mn->requires_grad ? mn->grad_buffer().data().data() : nullptr;
    T* gv = vn->requires_grad ? vn->grad_buffer().data().data() : nullptr;
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const std::size_t j = (mode == Broadcast::per_nc ? n * d.c : 0) + c;
        const std::size_t base = (n * d.c + c) * plane;
        const T r = (*rstd)[j];
        const T m = mn->value[j];
        const T* gp = g.data().data() + base;
        if (gf) {
          T* dst = gf + base;
          for (std::size_t p = 0; p < plane; ++p) dst[p] += gp[p] * r;
        }
        if (gm || gv) {
          const T* src = fn->value.data().data() + base;
          const double sg = lane_sum(plane, [gp](std::size_t p) { return static_cast<double>(gp[p]); });
          const double sgx = lane_sum(plane, [gp, src, m](std::size_t p) {
            return static_cast<double>(gp[p]) * static_cast<double>(src[p] - m);
          });
          if (gm) gm[j] += static_cast<T>(-static_cast<double>(r) * sg);
          if (gv) gv[j] += static_cast<T>(-0.5 * static_cast<double>(r) * r * r * sgx);
        }
      }
    }
  });
  return res;
}

namespace {

struct ConvGeometry {
  std::size_t c_in, c_out, h, w, ho, wo;
  int stride, pad;
  std::size_t patch() const { return c_in * 9; }
  std::size_t out_plane() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ow * stride - pad + k lies inside the plane.
inline void valid_columns(const ConvGeometry& g, int k, std::size_t& lo, std::size_t& hi) {
  const long first = static_cast<long>(g.pad) - k;  // smallest ow * stride that lands inside
  lo = first <= 0 ? 0 : static_cast<std::size_t>((first + g.stride - 1) / g.stride);
  const long last = static_cast<long>(g.w) - 1 + g.pad - k;
  hi = last < 0 ? 0 : std::min(g.wo, static_cast<std::size_t>(last / g.stride) + 1);
  lo = std::min(lo, hi);
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.out_plane();
  const auto s = static_cast<std::size_t>(g.stride);
  for (int kw = 0; kw < 3; ++kw) {
    std::size_t lo = 0, hi = 0;
    valid_columns(g, kw, lo, hi);
    const long shift = kw - static_cast<long>(g.pad);
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      const T* plane = x + ci * g.h * g.w;
      for (int kh = 0; kh < 3; ++kh) {
        T* row = col + ((ci * 3 + kh) * 3 + kw) * cols;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + kh;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, T{0});
            continue;
          }
          const T* src = plane + ih * static_cast<long>(g.w) + shift;
          std::fill(dst, dst + lo, T{0});
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * s];
          std::fill(dst + hi, dst + g.wo, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t cols = g.out_plane();
  const auto s = static_cast<std::size_t>(g.stride);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    T* plane = dx + ci * g.h * g.w;
    for (int kh = 0; kh < 3; ++kh) {
      for (int kw = 0; kw < 3; ++kw) {
        std::size_t lo = 0, hi = 0;
        valid_columns(g, kw, lo, hi);
        const long shift = kw - static_cast<long>(g.pad);
        const T* row = col + ((ci * 3 + kh) * 3 + kw) * cols;
        for (std::size_t oh = 0; oh < g.ho; ++oh) {
          const long ih = static_cast<long>(oh) * g.stride - g.pad + kh;
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          T* dst = plane + ih * static_cast<long>(g.w) + shift;
          const T* src = row + oh * g.wo;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * s] += src[ow];
        }
      }
    }
  }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Kernel-gradient partial sums are formed over fixed instance chunks and merged in
// chunk order, so the result does not depend on the thread budget.
constexpr std::size_t kConvChunks = 8;

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, int stride, int pad) {
  const Dims xd = x.dims();
  const Dims kd = kernel.dims();
  if (kd.h != 3 || kd.w != 3 || kd.c != xd.c) {
    throw ShapeError("conv2d: kernel " + kd.str() + " incompatible with input " + xd.str());
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  if (pad != 0 && pad != 1) throw ShapeError("conv2d: pad must be 0 or 1");
  if (xd.h + 2 * pad < 3 || xd.w + 2 * pad < 3) throw ShapeError("conv2d: input " + xd.str() + " smaller than kernel");
  const ConvGeometry geo{xd.c,
                         kd.n,
                         xd.h,
                         xd.w,
                         (xd.h + 2 * pad - 3) / stride + 1,
                         (xd.w + 2 * pad - 3) / stride + 1,
                         stride,
                         pad};

  Tensor4<T> out(Dims{xd.n, geo.c_out, geo.ho, geo.wo});
  const T* xin = x.value().data().data();
  const T* kin = kernel.value().data().data();
  T* yout = out.data().data();
  const std::size_t chunks = std::min(xd.n, kConvChunks);
  parallel_for(chunks, [&](std::size_t chunk) {
    std::vector<T> col(geo.patch() * geo.out_plane());
    Eigen::Map<const RowMat<T>> wm(kin, geo.c_out, geo.patch());
    Eigen::Map<const RowMat<T>> cm(col.data(), geo.patch(), geo.out_plane());
    for (std::size_t n = chunk * xd.n / chunks; n < (chunk + 1) * xd.n / chunks; ++n) {
      im2col(xin + n * geo.c_in * geo.h * geo.w, geo, col.data());
      Eigen::Map<RowMat<T>> om(yout + n * geo.c_out * geo.out_plane(), geo.c_out, geo.out_plane());
      om.noalias() = wm * cm;
    }
  });
  require_finite<T>(out.data(), "conv2d");

  auto& tape = x.tape();
  Var<T> res = tape.result(std::move(out), any_requires_grad(x, kernel));
  tape.record(res, [xn = x.node(), kn = kernel.node(), geo](const Tensor4<T>& g) {
    const std::size_t batch = xn->value.dims().n;
    const std::size_t in_size = geo.c_in * geo.h * geo.w;
    const std::size_t out_size = geo.c_out * geo.out_plane();
    const T* xin = xn->value.data().data();
    const T* kin = kn->value.data().data();
    const T* gout = g.data().data();
    T* gx = xn->requires_grad ? xn->grad_buffer().data().data() : nullptr;
    const bool want_k = kn->requires_grad;
    const std::size_t chunks = std::min(batch, kConvChunks);
    std::vector<RowMat<T>> partial(want_k ? chunks : 0);
    parallel_for(chunks, [&](std::size_t chunk) {
      const std::size_t begin = chunk * batch / chunks;
      const std::size_t end = (chunk + 1) * batch / chunks;
      std::vector<T> col(geo.patch() * geo.out_plane());
      Eigen::Map<const RowMat<T>> wm(kin, geo.c_out, geo.patch());
      if (want_k) partial[chunk] = RowMat<T>::Zero(geo.c_out, geo.patch());
      for (std::size_t n = begin; n < end; ++n) {
        Eigen::Map<const RowMat<T>> gm(gout + n * out_size, geo.c_out, geo.out_plane());
        if (want_k) {
          im2col(xin + n * in_size, geo, col.data());
          Eigen::Map<const RowMat<T>> cm(col.data(), geo.patch(), geo.out_plane());
          partial[chunk].noalias() += gm * cm.transpose();
        }
        if (gx) {
          Eigen::Map<RowMat<T>> dcol(col.data(), geo.patch(), geo.out_plane());
          dcol.noalias() = wm.transpose() * gm;
          col2im(col.data(), geo, gx + n * in_size);
        }
      }
    });
    if (want_k) {
      Eigen::Map<RowMat<T>> gk(kn->grad_buffer().data().data(), geo.c_out, geo.patch());
      for (const auto& p : partial) gk += p;
    }
  });
  return res;
}

template <typename T>
Var<T> avgpool2(const Var<T>& x) {
  const Dims d = x.dims();
  if (d.h % 2 != 0 || d.w % 2 != 0 || d.h == 0 || d.w == 0) throw ShapeError("avgpool2 needs even H and W, got " + d.str());
  const Dims od{d.n, d.c, d.h / 2, d.w / 2};
  const auto& xv = x.value();
  Tensor4<T> out(od);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      for (std::size_t i = 0; i < od.h; ++i) {
        for (std::size_t j = 0; j < od.w; ++j) {
          out.at(n, c, i, j) = T{0.25} * (xv.at(n, c, 2 * i, 2 * j) + xv.at(n, c, 2 * i, 2 * j + 1) +
                                          xv.at(n, c, 2 * i + 1, 2 * j) + xv.at(n, c, 2 * i + 1, 2 * j + 1));
        }
      }
    }
  }
  auto& tape = x.tape();
  Var<T> res = tape.result(std::move(out), x.requires_grad());
  tape.record(res, [xn = x.node()](const Tensor4<T>& g) {
    auto& gx = xn->grad_buffer();
    const Dims od = g.dims();
    for (std::size_t n = 0; n < od.n; ++n) {
      for (std::size_t c = 0; c < od.c; ++c) {
        for (std::size_t i = 0; i < od.h; ++i) {
          for (std::size_t j = 0; j < od.w; ++j) {
            const T s = T{0.25} * g.at(n, c, i, j);
            gx.at(n, c, 2 * i, 2 * j) += s;
            gx.at(n, c, 2 * i, 2 * j + 1) += s;
            gx.at(n, c, 2 * i + 1, 2 * j) += s;
            gx.at(n, c, 2 * i + 1, 2 * j + 1) += s;
          }
        }
      }
    }
  });
  return res;
}

template <typename T>
Var<T> global_avgpool(const Var<T>& x) {
  const Dims d = x.dims();
  if (d.plane() == 0) throw ShapeError("global_avgpool of an empty plane");
  Tensor4<T> out = Tensor4<T>::matrix(d.n, d.c);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < d.c; ++c) {
      const T* p = x.value().plane(n, c).data();
      const double s = lane_sum(d.plane(), [p](std::size_t k) { return static_cast<double>(p[k]); });
      out.at(n, c) = static_cast<T>(s / static_cast<double>(d.plane()));
    }
  }
  auto& tape = x.tape();
  Var<T> res = tape.result(std::move(out), x.requires_grad());
  tape.record(res, [xn = x.node()](const Tensor4<T>& g) {
    const Dims d = xn->value.dims();
    auto& gx = xn->grad_buffer();
    const T inv = T{1} / static_cast<T>(d.plane());
    for (std::size_t n = 0; n < d.n; ++n) {
      for (std::size_t c = 0; c < d.c; ++c) {
        const T s = g.at(n, c) * inv;
        for (T& v : gx.plane(n, c)) v += s;
      }
    }
  });
  return res;
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Dims xd = x.dims();
  const Dims wd = weight.dims();
  const Dims bd = bias.dims();
  if (xd.h != 1 || xd.w != 1 || wd.h != 1 || wd.w != 1 || wd.n != xd.c || bd != Dims{1, wd.c, 1, 1}) {
    throw ShapeError("linear: x " + xd.str() + ", weight " + wd.str() + ", bias " + bd.str());
  }
  const std::size_t rows = xd.n;
  const std::size_t in = xd.c;
  const std::size_t outc = wd.c;
  // Each row is reduced in the same fixed order regardless of the batch size, so
  // evaluation logits do not depend on how a split is chunked.
  Tensor4<T> out = Tensor4<T>::matrix(rows, outc);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < outc; ++k) out[r * outc + k] = bias.value()[k];
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xv[r * in + i];
      for (std::size_t k = 0; k < outc; ++k) out[r * outc + k] += xi * wv[i * outc + k];
    }
  }
  require_finite<T>(out.data(), "linear");

  auto& tape = x.tape();
  Var<T> res = tape.result(std::move(out), x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  tape.record(res, [xn = x.node(), wn = weight.node(), bn = bias.node(), rows, in, outc](const Tensor4<T>& g) {
    Eigen::Map<const RowMat<T>> gm(g.data().data(), rows, outc);
    Eigen::Map<const RowMat<T>> xm(xn->value.data().data(), rows, in);
    Eigen::Map<const RowMat<T>> wm(wn->value.data().data(), in, outc);
    if (xn->requires_grad) {
      Eigen::Map<RowMat<T>> gx(xn->grad_buffer().data().data(), rows, in);
      gx.noalias() += gm * wm.transpose();
    }
    if (wn->requires_grad) {
      Eigen::Map<RowMat<T>> gw(wn->grad_buffer().data().data(), in, outc);
      gw.noalias() += xm.transpose() * gm;
    }
    if (bn->requires_grad) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(bn->grad_buffer().data().data(), outc);
      gb += gm.colwise().sum();
    }
  });
  return res;
}

template <typename T>
Var<T> log_softmax(const Var<T>& logits) {
  const Dims d = logits.dims();
  if (d.h != 1 || d.w != 1 || d.c == 0) throw ShapeError("log_softmax expects N x K x 1 x 1, got " + d.str());
  const auto& lv = logits.value();
  Tensor4<T> out(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < d.c; ++k) mx = std::max(mx, lv.at(n, k));
    double s = 0.0;
    for (std::size_t k = 0; k < d.c; ++k) s += std::exp(static_cast<double>(lv.at(n, k) - mx));
    const T lse = mx + static_cast<T>(std::log(s));
    for (std::size_t k = 0; k < d.c; ++k) out.at(n, k) = lv.at(n, k) - lse;
  }
  require_finite<T>(out.data(), "log_softmax");
  auto& tape = logits.tape();
  Var<T> res = tape.result(std::move(out), logits.requires_grad());
  tape.record(res, [ln = logits.node(), rn = std::weak_ptr<Node<T>>(res.node())](const Tensor4<T>& g) {
    const auto out = rn.lock();
    const Dims d = g.dims();
    auto& gl = ln->grad_buffer();
    for (std::size_t n = 0; n < d.n; ++n) {
      T gsum{0};
      for (std::size_t k = 0; k < d.c; ++k) gsum += g.at(n, k);
      for (std::size_t k = 0; k < d.c; ++k) gl.at(n, k) += g.at(n, k) - std::exp(out->value.at(n, k)) * gsum;
    }
  });
  return res;
}

#define WINNORM_INSTANTIATE_OPS(T)                                                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                       \
  template Var<T> mul_scalar<T>(const Var<T>&, T);                                       \
  template Var<T> sqrt<T>(const Var<T>&);                                                \
  template Var<T> exp<T>(const Var<T>&);                                                 \
  template Var<T> log<T>(const Var<T>&);                                                 \
  template Var<T> maximum<T>(const Var<T>&, T);                                          \
  template Var<T> sum_all<T>(const Var<T>&);                                             \
  template Var<T> mean_all<T>(const Var<T>&);                                            \
  template Var<T> detach<T>(const Var<T>&);                                              \
  template MeanVar<T> reduce_mean_var<T>(const Var<T>&);                                 \
  template MeanVar<T> reduce_mean_var<T>(const Var<T>&, std::span<const std::uint32_t>); \
  template MeanVar<T> channel_mean_var<T>(const Var<T>&);                                \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, int, int);                     \
  template Var<T> avgpool2<T>(const Var<T>&);                                            \
  template Var<T> global_avgpool<T>(const Var<T>&);                                      \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                \
  template Var<T> standardize<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);        \
  template Var<T> log_softmax<T>(const Var<T>&);

WINNORM_INSTANTIATE_OPS(float)
WINNORM_INSTANTIATE_OPS(double)

}  // namespace winnorm::ops
