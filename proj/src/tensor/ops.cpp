#include "csn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace csn {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  return std::equal(small.rbegin(), small.rend(), large.rbegin());
}

// Output shape and operand periods for trailing/scalar broadcasting. Index i
// of the output reads a[i % na] and b[i % nb].
struct Broadcast {
  Shape out;
  std::size_t na;
  std::size_t nb;
};

Broadcast broadcast_shapes(const char* op, const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return {sa, a.numel(), b.numel()};
  if (b.numel() == 1 || is_suffix(sb, sa)) return {sa, a.numel(), b.numel()};
  if (a.numel() == 1 || is_suffix(sa, sb)) return {sb, a.numel(), b.numel()};
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Forward fwd, GradA grad_a, GradB grad_b) {
  const auto bc = broadcast_shapes(name, a, b);
  const std::size_t n = shape_numel(bc.out);
  const auto& da = a.data();
  const auto& db = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(da[i % bc.na], db[i % bc.nb]);
  ImplPtr ia = a.impl();
  ImplPtr ib = b.impl();
  return make_result(name, bc.out, std::move(out), {&a, &b}, [ia, ib, bc, n, grad_a, grad_b](const TensorImpl& o) {
    const auto& g = o.grad;
    if (ia->requires_grad) {
      auto& ga = ia->grad;
      for (std::size_t i = 0; i < n; ++i) {
        ga[i % bc.na] += g[i] * grad_a(ia->data[i % bc.na], ib->data[i % bc.nb]);
      }
    }
    if (ib->requires_grad) {
      auto& gb = ib->grad;
      for (std::size_t i = 0; i < n; ++i) {
        gb[i % bc.nb] += g[i] * grad_b(ia->data[i % bc.na], ib->data[i % bc.nb]);
      }
    }
  });
}

// Pointwise op whose derivative is a function of (input, output).
template <typename Forward, typename Deriv>
Tensor unary_op(const char* name, const Tensor& x, Forward fwd, Deriv deriv) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  ImplPtr ix = x.impl();
  return make_result(name, x.shape(), std::move(out), {&x}, [ix, deriv](const TensorImpl& o) {
    auto& gx = ix->grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * deriv(ix->data[i], o.data[i]);
  });
}

// Decomposes a shape around `axis` into (outer, len, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

}  // namespace

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::size_t M = sa[sa.size() - 2];
  const std::size_t K = sa.back();
  const std::size_t N = sb.back();
  if (sb[sb.size() - 2] != K) {
    throw DimensionError("matmul inner extents differ: " + shape_str(sa) + " @ " + shape_str(sb));
  }
  const Shape ba(sa.begin(), sa.end() - 2);
  const Shape bb(sb.begin(), sb.end() - 2);
  const std::size_t rank = std::max(ba.size(), bb.size());
  Shape batch(rank, 1);
  std::vector<std::size_t> ea(rank, 1);
  std::vector<std::size_t> eb(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t xa = i + ba.size() >= rank ? ba[i + ba.size() - rank] : 1;
    const std::size_t xb = i + bb.size() >= rank ? bb[i + bb.size() - rank] : 1;
    if (xa != xb && xa != 1 && xb != 1) {
      throw DimensionError("matmul batch extents differ: " + shape_str(sa) + " @ " + shape_str(sb));
    }
    batch[i] = std::max(xa, xb);
    ea[i] = xa;
    eb[i] = xb;
  }
  const std::size_t nbatch = shape_numel(batch);
  std::vector<std::size_t> off_a(nbatch);
  std::vector<std::size_t> off_b(nbatch);
  for (std::size_t bi = 0; bi < nbatch; ++bi) {
    std::size_t rem = bi;
    std::size_t ia = 0;
    std::size_t ib = 0;
    std::size_t stride_a = 1;
    std::size_t stride_b = 1;
    for (std::size_t d = rank; d-- > 0;) {
      const std::size_t idx = rem % batch[d];
      rem /= batch[d];
      ia += (ea[d] == 1 ? 0 : idx) * stride_a;
      ib += (eb[d] == 1 ? 0 : idx) * stride_b;
      stride_a *= ea[d];
      stride_b *= eb[d];
    }
    off_a[bi] = ia * M * K;
    off_b[bi] = ib * K * N;
  }

  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(nbatch * M * N, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t bi = 0; bi < nbatch; ++bi) {
    const double* A = pa + off_a[bi];
    const double* B = pb + off_b[bi];
    double* C = out.data() + bi * M * N;
    for (std::size_t i = 0; i < M; ++i) {
      double* crow = C + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const double aik = A[i * K + k];
        const double* brow = B + k * N;
        for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  }

  ImplPtr ia = a.impl();
  ImplPtr ib = b.impl();
  return make_result("matmul", std::move(out_shape), std::move(out), {&a, &b},
                     [ia, ib, off_a = std::move(off_a), off_b = std::move(off_b), M, K, N](const TensorImpl& o) {
                       const std::size_t nb = off_a.size();
                       for (std::size_t bi = 0; bi < nb; ++bi) {
                         const double* G = o.grad.data() + bi * M * N;
                         const double* A = ia->data.data() + off_a[bi];
                         const double* B = ib->data.data() + off_b[bi];
                         if (ia->requires_grad) {
                           double* GA = ia->grad.data() + off_a[bi];
                           for (std::size_t i = 0; i < M; ++i) {
                             const double* grow = G + i * N;
                             for (std::size_t k = 0; k < K; ++k) {
                               const double* brow = B + k * N;
                               double acc = 0.0;
                               for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                               GA[i * K + k] += acc;
                             }
                           }
                         }
                         if (ib->requires_grad) {
                           double* GB = ib->grad.data() + off_b[bi];
                           for (std::size_t i = 0; i < M; ++i) {
                             const double* grow = G + i * N;
                             for (std::size_t k = 0; k < K; ++k) {
                               const double aik = A[i * K + k];
                               double* gbrow = GB + k * N;
                               for (std::size_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                             }
                           }
                         }
                       }
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  Shape shape = x.shape();
  const std::size_t R = shape[shape.size() - 2];
  const std::size_t C = shape.back();
  std::swap(shape[shape.size() - 2], shape.back());
  const std::size_t nb = x.numel() / std::max<std::size_t>(R * C, 1);
  const auto& dx = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < nb; ++b) {
    const double* src = dx.data() + b * R * C;
    double* dst = out.data() + b * R * C;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) dst[c * R + r] = src[r * C + c];
  }
  ImplPtr ix = x.impl();
  return make_result("transpose", std::move(shape), std::move(out), {&x}, [ix, nb, R, C](const TensorImpl& o) {
    for (std::size_t b = 0; b < nb; ++b) {
      const double* g = o.grad.data() + b * R * C;
      double* gx = ix->grad.data() + b * R * C;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[c * R + r];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw NumericError("div: zero divisor");
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v <= 0.0) throw NumericError("sqrt: non-positive input");
  }
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v))); },
      [](double v, double) {
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("softmax over an empty last axis");
  const std::size_t L = x.shape().back();
  const std::size_t rows = x.numel() / L;
  const auto& dx = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = dx.data() + r * L;
    double* o = out.data() + r * L;
    const double mx = *std::max_element(in, in + L);
    double total = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < L; ++j) o[j] /= total;
  }
  ImplPtr ix = x.impl();
  return make_result("softmax", x.shape(), std::move(out), {&x}, [ix, rows, L](const TensorImpl& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = o.data.data() + r * L;
      const double* g = o.grad.data() + r * L;
      double dot = 0.0;
      for (std::size_t j = 0; j < L; ++j) dot += g[j] * s[j];
      double* gx = ix->grad.data() + r * L;
      for (std::size_t j = 0; j < L; ++j) gx[j] += s[j] * (g[j] - dot);
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  ImplPtr ix = x.impl();
  return make_result("sum", {}, {total}, {&x}, [ix](const TensorImpl& o) {
    const double g = o.grad[0];
    for (auto& v : ix->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto s = split_at(x.shape(), ax);
  if (s.len == 0) throw DimensionError("mean over an empty axis");
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(1);
  for (std::size_t i = 0; i < s.len; ++i) taps[0].emplace_back(i, 1.0 / static_cast<double>(s.len));
  Tensor pooled = apply_axis_map(x, static_cast<std::ptrdiff_t>(ax), AxisMap::build(s.len, taps));
  if (keepdim) return pooled;
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  return reshape(pooled, std::move(shape));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse_loss shape mismatch: " + shape_str(prediction.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  return mean(square(sub(prediction, target)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  ImplPtr ix = x.impl();
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [ix](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) ix->grad[i] += o.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw DimensionError("concat of no tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != ax && p.shape()[d] != shape[d]) throw DimensionError("concat extent mismatch off the concat axis");
    }
    total += p.shape()[ax];
  }
  shape[ax] = total;
  const auto s = split_at(shape, ax);
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  for (const auto& p : parts) {
    starts.push_back(pos);
    const std::size_t len = p.shape()[ax];
    const auto& dp = p.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(dp.data() + o * len * s.inner, len * s.inner, out.data() + (o * total + pos) * s.inner);
    pos += len;
  }
  Tape* tape = Tape::active();
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (!tape || !track) return make_result("concat", std::move(shape), std::move(out), {}, nullptr);
  std::vector<ImplPtr> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  for (double v : out) {
    if (!std::isfinite(v)) throw NumericError("concat produced a non-finite value");
  }
  return tape->record(std::move(shape), std::move(out), impls, [impls, starts, s, total, ax](const TensorImpl& o) {
    for (std::size_t k = 0; k < impls.size(); ++k) {
      if (!impls[k]->requires_grad) continue;
      const std::size_t len = impls[k]->shape[ax];
      for (std::size_t oo = 0; oo < s.outer; ++oo) {
        const double* g = o.grad.data() + (oo * total + starts[k]) * s.inner;
        double* gx = impls[k]->grad.data() + oo * len * s.inner;
        for (std::size_t i = 0; i < len * s.inner; ++i) gx[i] += g[i];
      }
    }
  });
}

AxisMap AxisMap::build(std::size_t in_len, const std::vector<std::vector<std::pair<std::size_t, double>>>& taps) {
  AxisMap map;
  map.in_len = in_len;
  map.out_len = taps.size();
  map.offsets.reserve(taps.size() + 1);
  map.offsets.push_back(0);
  for (const auto& row : taps) {
    for (const auto& [idx, w] : row) {
      if (idx >= in_len) throw DimensionError("axis map tap out of range");
      map.index.push_back(idx);
      map.weight.push_back(w);
    }
    map.offsets.push_back(map.index.size());
  }
  return map;
}

Tensor apply_axis_map(const Tensor& x, std::ptrdiff_t axis, const AxisMap& map) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const auto s = split_at(x.shape(), ax);
  if (s.len != map.in_len) {
    throw DimensionError("axis map expects length " + std::to_string(map.in_len) + ", got " + std::to_string(s.len));
  }
  Shape shape = x.shape();
  shape[ax] = map.out_len;
  std::vector<double> out(s.outer * map.out_len * s.inner, 0.0);
  const auto& dx = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = dx.data() + o * s.len * s.inner;
    double* dst = out.data() + o * map.out_len * s.inner;
    for (std::size_t t = 0; t < map.out_len; ++t) {
      double* drow = dst + t * s.inner;
      for (std::size_t k = map.offsets[t]; k < map.offsets[t + 1]; ++k) {
        const double w = map.weight[k];
        const double* srow = src + map.index[k] * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) drow[i] += w * srow[i];
      }
    }
  }
  ImplPtr ix = x.impl();
  return make_result("axis_map", std::move(shape), std::move(out), {&x}, [ix, map, s](const TensorImpl& res) {
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* gsrc = ix->grad.data() + o * s.len * s.inner;
      const double* g = res.grad.data() + o * map.out_len * s.inner;
      for (std::size_t t = 0; t < map.out_len; ++t) {
        const double* grow = g + t * s.inner;
        for (std::size_t k = map.offsets[t]; k < map.offsets[t + 1]; ++k) {
          const double w = map.weight[k];
          double* gs = gsrc + map.index[k] * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) gs[i] += w * grow[i];
        }
      }
    }
  });
}

Tensor avg_downsample(const Tensor& x, std::size_t factor, std::ptrdiff_t axis) {
  if (factor < 1) throw std::invalid_argument("avg_downsample: factor must be >= 1");
  const std::size_t T = x.dim(axis);
  const std::size_t out_len = (T + factor - 1) / factor;
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    const std::size_t begin = o * factor;
    const std::size_t end = std::min(T, begin + factor);
    const double w = 1.0 / static_cast<double>(end - begin);
    for (std::size_t t = begin; t < end; ++t) taps[o].emplace_back(t, w);
  }
  return apply_axis_map(x, axis, AxisMap::build(T, taps));
}

Tensor moving_average(const Tensor& x, std::size_t kernel, std::ptrdiff_t axis) {
  if (kernel % 2 == 0) throw std::invalid_argument("moving_average: kernel must be odd");
  const std::size_t T = x.dim(axis);
  if (T == 0 || kernel > 2 * T - 1) throw std::invalid_argument("moving_average: kernel exceeds 2T-1");
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  const double w = 1.0 / static_cast<double>(kernel);
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const auto src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(t) + k, 0,
                                                  static_cast<std::ptrdiff_t>(T) - 1);
      taps[t].emplace_back(static_cast<std::size_t>(src), w);
    }
  }
  return apply_axis_map(x, axis, AxisMap::build(T, taps));
}

Tensor linear_interp(const Tensor& x, std::size_t new_len, std::ptrdiff_t axis) {
  if (new_len < 1) throw std::invalid_argument("linear_interp: new_len must be >= 1");
  const std::size_t T = x.dim(axis);
  if (T < 1) throw std::invalid_argument("linear_interp: empty input axis");
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(new_len);
  if (new_len == 1) {
    for (std::size_t t = 0; t < T; ++t) taps[0].emplace_back(t, 1.0 / static_cast<double>(T));
  } else if (T == 1) {
    for (auto& row : taps) row.emplace_back(0, 1.0);
  } else {
    for (std::size_t o = 0; o < new_len; ++o) {
      // Exact rational position o * (T-1) / (new_len-1).
      const std::size_t num = o * (T - 1);
      const std::size_t den = new_len - 1;
      const std::size_t lo = num / den;
      const std::size_t rem = num % den;
      if (rem == 0) {
        taps[o].emplace_back(lo, 1.0);
      } else {
        const double frac = static_cast<double>(rem) / static_cast<double>(den);
        taps[o].emplace_back(lo, 1.0 - frac);
        taps[o].emplace_back(lo + 1, frac);
      }
    }
  }
  return apply_axis_map(x, axis, AxisMap::build(T, taps));
}

Tensor narrow(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t T = x.dim(axis);
  if (start + length > T) throw DimensionError("narrow range exceeds axis length");
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(length);
  for (std::size_t i = 0; i < length; ++i) taps[i].emplace_back(start + i, 1.0);
  return apply_axis_map(x, axis, AxisMap::build(T, taps));
}

Tensor expand_axis(const Tensor& x, std::ptrdiff_t axis, std::size_t count) {
  if (x.dim(axis) != 1) throw DimensionError("expand_axis needs a length-1 axis");
  std::vector<std::vector<std::pair<std::size_t, double>>> taps(count, {{0, 1.0}});
  return apply_axis_map(x, axis, AxisMap::build(1, taps));
}

Tensor patchify(const Tensor& x, std::size_t patch_len) {
  if (patch_len < 1) throw std::invalid_argument("patchify: patch length must be >= 1");
  if (x.rank() != 3) throw DimensionError("patchify expects [B, T, D], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0);
  const std::size_t T = x.dim(1);
  const std::size_t D = x.dim(2);
  if (T == 0) throw DimensionError("patchify of an empty sequence");
  const std::size_t N = (T + patch_len - 1) / patch_len;
  Tensor padded = x;
  if (N * patch_len != T) {
    std::vector<std::vector<std::pair<std::size_t, double>>> taps(N * patch_len);
    for (std::size_t t = 0; t < taps.size(); ++t) taps[t].emplace_back(std::min(t, T - 1), 1.0);
    padded = apply_axis_map(x, 1, AxisMap::build(T, taps));
  }
  return reshape(padded, {B, N, patch_len, D});
}

Tensor unpatchify(const Tensor& patches, std::size_t seq_len) {
  if (patches.rank() != 4) throw DimensionError("unpatchify expects [B, N, P, D]");
  const std::size_t B = patches.dim(0);
  const std::size_t NP = patches.dim(1) * patches.dim(2);
  const std::size_t D = patches.dim(3);
  if (seq_len > NP) throw DimensionError("unpatchify: sequence longer than the patched span");
  Tensor flat = reshape(patches, {B, NP, D});
  if (seq_len == NP) return flat;
  return narrow(flat, 1, 0, seq_len);
}

}  // namespace csn
