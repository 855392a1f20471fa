#pragma once

#include <algorithm>
#include <cblas.h>
#include <cmath>

#include "dmat/tensor.hpp"

namespace dmat {
namespace detail {

inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb,
                 float beta, float* c, int64_t ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), alpha, a,
              int(lda), b, int(ldb), beta, c, int(ldc));
}
inline void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k,
                 double alpha, const double* a, int64_t lda, const double* b,
                 int64_t ldb, double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), alpha, a,
              int(lda), b, int(ldb), beta, c, int(ldc));
}

// numpy-style trailing alignment; strides are 0 along broadcast dims
struct BcastPlan {
  Shape out;
  std::vector<int64_t> sa, sb;
  bool same = false;
};

inline BcastPlan make_bcast(const Shape& a, const Shape& b,
                            const char* opname) {
  BcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  size_t nd = std::max(a.size(), b.size());
  p.out.resize(nd);
  p.sa.resize(nd);
  p.sb.resize(nd);
  auto sta = row_major_strides(a);
  auto stb = row_major_strides(b);
  for (size_t i = 0; i < nd; ++i) {
    size_t oi = nd - 1 - i;
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(opname) + ": shapes " + shape_str(a) +
                       " and " + shape_str(b) + " differ on axis " +
                       std::to_string(oi) + " and neither is 1");
    p.out[oi] = std::max(da, db);
    p.sa[oi] = (da == 1 && p.out[oi] != 1) ? 0
               : (i < a.size() ? sta[a.size() - 1 - i] : 0);
    p.sb[oi] = (db == 1 && p.out[oi] != 1) ? 0
               : (i < b.size() ? stb[b.size() - 1 - i] : 0);
  }
  return p;
}

// walks every element of `out`, calling visit(out_linear, a_offset, b_offset)
template <typename Fn>
inline void bcast_walk(const BcastPlan& p, Fn visit) {
  int nd = int(p.out.size());
  int64_t n = shape_numel(p.out);
  std::vector<int64_t> ix(nd, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    visit(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      if (++ix[d] < p.out[d]) {
        oa += p.sa[d];
        ob += p.sb[d];
        break;
      }
      ix[d] = 0;
      oa -= p.sa[d] * (p.out[d] - 1);
      ob -= p.sb[d] * (p.out[d] - 1);
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T, typename FwdF, typename DerivF>
Tensor<T> map_unary(const char* name, const Tensor<T>& x, FwdF fwd,
                    DerivF dfdx) {
  Tensor<T> y(x.shape());
  auto xs = x.values();
  auto ys = y.values();
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>(name, xi->wants_grad(), y, [xi, yi, dfdx] {
    yi->ensure_grad();
    xi->ensure_grad();
    for (size_t i = 0; i < xi->data.size(); ++i)
      xi->grad[i] += yi->grad[i] * dfdx(xi->data[i], yi->data[i]);
  });
  return y;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return map_unary(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return map_unary(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// numerically safe silu: x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return map_unary(
      "silu", x,
      [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return map_unary(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return map_unary(
      "log", x, [](T v) { return std::log(v); },
      [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return map_unary(
      "abs", x, [](T v) { return std::fabs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// softplus(x) = log(1 + e^x), stable form: max(x,0) + log1p(e^{-|x|})
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return map_unary(
      "softplus", x,
      [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::fabs(v))); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return map_unary(
      "leaky_relu", x,
      [slope](T v) { return v >= T(0) ? v : slope * v; },
      [slope](T v, T) { return v >= T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return map_unary(
      "pow_scalar", x, [p](T v) { return std::pow(v, p); },
      [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return map_unary(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return map_unary(
      "mul_scalar", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

namespace detail {

enum class BinKind { Add, Sub, Mul };

template <typename T>
Tensor<T> binary_op(const char* name, BinKind kind, const Tensor<T>& a,
                    const Tensor<T>& b) {
  BcastPlan p = make_bcast(a.shape(), b.shape(), name);
  Tensor<T> y(p.out);
  auto as = a.values();
  auto bs = b.values();
  auto ys = y.values();
  if (p.same) {
    switch (kind) {
      case BinKind::Add:
        for (size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
        break;
      case BinKind::Sub:
        for (size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] - bs[i];
        break;
      case BinKind::Mul:
        for (size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] * bs[i];
        break;
    }
  } else {
    bcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      switch (kind) {
        case BinKind::Add: ys[i] = as[oa] + bs[ob]; break;
        case BinKind::Sub: ys[i] = as[oa] - bs[ob]; break;
        case BinKind::Mul: ys[i] = as[oa] * bs[ob]; break;
      }
    });
  }
  auto ai = a.impl();
  auto bi = b.impl();
  auto yi = y.impl();
  bool wa = ai->wants_grad(), wb = bi->wants_grad();
  tape_record<T>(name, wa || wb, y, [ai, bi, yi, p, kind, wa, wb] {
    yi->ensure_grad();
    if (wa) ai->ensure_grad();
    if (wb) bi->ensure_grad();
    auto& g = yi->grad;
    if (p.same) {
      for (size_t i = 0; i < g.size(); ++i) {
        switch (kind) {
          case BinKind::Add:
            if (wa) ai->grad[i] += g[i];
            if (wb) bi->grad[i] += g[i];
            break;
          case BinKind::Sub:
            if (wa) ai->grad[i] += g[i];
            if (wb) bi->grad[i] -= g[i];
            break;
          case BinKind::Mul:
            if (wa) ai->grad[i] += g[i] * bi->data[i];
            if (wb) bi->grad[i] += g[i] * ai->data[i];
            break;
        }
      }
    } else {
      bcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
        switch (kind) {
          case BinKind::Add:
            if (wa) ai->grad[oa] += g[i];
            if (wb) bi->grad[ob] += g[i];
            break;
          case BinKind::Sub:
            if (wa) ai->grad[oa] += g[i];
            if (wb) bi->grad[ob] -= g[i];
            break;
          case BinKind::Mul:
            if (wa) ai->grad[oa] += g[i] * bi->data[ob];
            if (wb) bi->grad[ob] += g[i] * ai->data[oa];
            break;
        }
      });
    }
  });
  return y;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("add", detail::BinKind::Add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("sub", detail::BinKind::Sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op("mul", detail::BinKind::Mul, a, b);
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes_in,
              bool keepdim = false) {
  int nd = x.ndim();
  std::vector<char> reduce(size_t(nd), 0);
  for (int a : axes_in) {
    if (a < 0) a += nd;
    if (a < 0 || a >= nd)
      throw ShapeError("sum: axis " + std::to_string(a) +
                       " out of range for shape " + shape_str(x.shape()));
    reduce[size_t(a)] = 1;
  }
  Shape kept;  // keepdim shape, used to build out strides aligned with x dims
  Shape out_shape;
  for (int d = 0; d < nd; ++d) {
    kept.push_back(reduce[size_t(d)] ? 1 : x.dim(d));
    if (!reduce[size_t(d)]) out_shape.push_back(x.dim(d));
    else if (keepdim) out_shape.push_back(1);
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> y(out_shape);
  auto kst = row_major_strides(kept);
  std::vector<int64_t> ost(size_t(nd), 0);
  for (int d = 0; d < nd; ++d) ost[size_t(d)] = reduce[size_t(d)] ? 0 : kst[size_t(d)];
  auto xs = x.values();
  auto ys = y.values();
  const Shape xsh = x.shape();
  std::vector<int64_t> ix(size_t(nd), 0);
  int64_t oo = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    ys[size_t(oo)] += xs[size_t(i)];
    for (int d = nd - 1; d >= 0; --d) {
      if (++ix[size_t(d)] < xsh[size_t(d)]) {
        oo += ost[size_t(d)];
        break;
      }
      ix[size_t(d)] = 0;
      oo -= ost[size_t(d)] * (xsh[size_t(d)] - 1);
    }
  }
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("sum", xi->wants_grad(), y, [xi, yi, ost, xsh, nd] {
    yi->ensure_grad();
    xi->ensure_grad();
    std::vector<int64_t> jx(size_t(nd), 0);
    int64_t o = 0;
    int64_t n = int64_t(xi->data.size());
    for (int64_t i = 0; i < n; ++i) {
      xi->grad[size_t(i)] += yi->grad[size_t(o)];
      for (int d = nd - 1; d >= 0; --d) {
        if (++jx[size_t(d)] < xsh[size_t(d)]) {
          o += ost[size_t(d)];
          break;
        }
        jx[size_t(d)] = 0;
        o -= ost[size_t(d)] * (xsh[size_t(d)] - 1);
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<int> axes(size_t(x.ndim()));
  for (int d = 0; d < x.ndim(); ++d) axes[size_t(d)] = d;
  return sum(x, axes, false);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes,
               bool keepdim = false) {
  int64_t n0 = x.numel();
  Tensor<T> s = sum(x, axes, keepdim);
  int64_t n1 = s.numel();
  return mul_scalar(s, T(1) / T(n0 / n1));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  Tensor<T> s = sum(x);
  return mul_scalar(s, T(1) / T(x.numel()));
}

// ------------------------------------------------------------------ movement

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape target) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 in target");
      infer = int(i);
    } else {
      known *= target[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0)
      throw ShapeError("reshape: cannot infer axis " + std::to_string(infer) +
                       " for " + shape_str(x.shape()) + " -> " +
                       shape_str(target));
    target[size_t(infer)] = x.numel() / known;
  }
  if (shape_numel(target) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " (" +
                     std::to_string(x.numel()) + " elements) -> " +
                     shape_str(target) + " (" +
                     std::to_string(shape_numel(target)) + " elements)");
  Tensor<T> y(target);
  std::copy(x.values().begin(), x.values().end(), y.values().begin());
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("reshape", xi->wants_grad(), y, [xi, yi] {
    yi->ensure_grad();
    xi->ensure_grad();
    for (size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += yi->grad[i];
  });
  return y;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
  int nd = x.ndim();
  if (int(perm.size()) != nd)
    throw ShapeError("permute: got " + std::to_string(perm.size()) +
                     " axes for tensor of rank " + std::to_string(nd));
  std::vector<char> seen(size_t(nd), 0);
  Shape osh(size_t(nd), 0);
  for (int d = 0; d < nd; ++d) {
    int p = perm[size_t(d)];
    if (p < 0 || p >= nd || seen[size_t(p)])
      throw ShapeError("permute: invalid permutation");
    seen[size_t(p)] = 1;
    osh[size_t(d)] = x.dim(p);
  }
  Tensor<T> y(osh);
  auto xst = row_major_strides(x.shape());
  // stride into x for each out dim
  std::vector<int64_t> st(size_t(nd), 0);
  for (int d = 0; d < nd; ++d) st[size_t(d)] = xst[size_t(perm[size_t(d)])];
  auto xs = x.values();
  auto ys = y.values();
  std::vector<int64_t> ix(size_t(nd), 0);
  int64_t xo = 0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    ys[size_t(i)] = xs[size_t(xo)];
    for (int d = nd - 1; d >= 0; --d) {
      if (++ix[size_t(d)] < osh[size_t(d)]) {
        xo += st[size_t(d)];
        break;
      }
      ix[size_t(d)] = 0;
      xo -= st[size_t(d)] * (osh[size_t(d)] - 1);
    }
  }
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("permute", xi->wants_grad(), y, [xi, yi, st, osh, nd] {
    yi->ensure_grad();
    xi->ensure_grad();
    std::vector<int64_t> jx(size_t(nd), 0);
    int64_t xo = 0;
    int64_t n = int64_t(yi->data.size());
    for (int64_t i = 0; i < n; ++i) {
      xi->grad[size_t(xo)] += yi->grad[size_t(i)];
      for (int d = nd - 1; d >= 0; --d) {
        if (++jx[size_t(d)] < osh[size_t(d)]) {
          xo += st[size_t(d)];
          break;
        }
        jx[size_t(d)] = 0;
        xo -= st[size_t(d)] * (osh[size_t(d)] - 1);
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  if (start < 0 || len < 0 || start + len > x.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") exceeds axis " +
                     std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape osh = x.shape();
  osh[size_t(axis)] = len;
  Tensor<T> y(osh);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
  int64_t xaxis = x.dim(axis);
  auto xs = x.values();
  auto ys = y.values();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(xs.begin() + (o * xaxis + start) * inner,
              xs.begin() + (o * xaxis + start + len) * inner,
              ys.begin() + o * len * inner);
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("slice", xi->wants_grad(), y,
                 [xi, yi, outer, inner, xaxis, start, len] {
                   yi->ensure_grad();
                   xi->ensure_grad();
                   for (int64_t o = 0; o < outer; ++o)
                     for (int64_t l = 0; l < len * inner; ++l)
                       xi->grad[size_t((o * xaxis + start) * inner + l)] +=
                           yi->grad[size_t(o * len * inner + l)];
                 });
  return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  int nd = xs[0].ndim();
  if (axis < 0) axis += nd;
  int64_t total = 0;
  for (auto& x : xs) {
    if (x.ndim() != nd)
      throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && x.dim(d) != xs[0].dim(d))
        throw ShapeError("concat: shapes " + shape_str(xs[0].shape()) +
                         " and " + shape_str(x.shape()) +
                         " differ on non-concat axis " + std::to_string(d));
    total += x.dim(axis);
  }
  Shape osh = xs[0].shape();
  osh[size_t(axis)] = total;
  Tensor<T> y(osh);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= osh[size_t(d)];
  for (int d = axis + 1; d < nd; ++d) inner *= osh[size_t(d)];
  auto ys = y.values();
  int64_t off = 0;
  for (auto& x : xs) {
    int64_t la = x.dim(axis);
    auto vs = x.values();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(vs.begin() + o * la * inner, vs.begin() + (o + 1) * la * inner,
                ys.begin() + (o * total + off) * inner);
    off += la;
  }
  bool any = false;
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  std::vector<int64_t> lens;
  for (auto& x : xs) {
    impls.push_back(x.impl());
    lens.push_back(x.dim(axis));
    any = any || x.impl()->wants_grad();
  }
  auto yi = y.impl();
  tape_record<T>("concat", any, y, [impls, lens, yi, outer, inner, total] {
    yi->ensure_grad();
    int64_t off = 0;
    for (size_t k = 0; k < impls.size(); ++k) {
      int64_t la = lens[k];
      if (impls[k]->wants_grad()) {
        impls[k]->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t l = 0; l < la * inner; ++l)
            impls[k]->grad[size_t(o * la * inner + l)] +=
                yi->grad[size_t((o * total + off) * inner + l)];
      }
      off += la;
    }
  });
  return y;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> xs, int axis) {
  return concat(std::vector<Tensor<T>>(xs), axis);
}

// -------------------------------------------------------------------- matmul

// a [..., M, K] x b [..., K, N] with numpy-style broadcast over batch dims
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw ShapeError("matmul: inputs must have rank >= 2, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t M = a.dim(-2), K = a.dim(-1);
  int64_t Kb = b.dim(-2), N = b.dim(-1);
  if (K != Kb)
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()) + " (axis -1 of lhs is " +
                     std::to_string(K) + ", axis -2 of rhs is " +
                     std::to_string(Kb) + ")");
  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  detail::BcastPlan p = detail::make_bcast(abatch, bbatch, "matmul");
  Shape osh = p.out;
  osh.push_back(M);
  osh.push_back(N);
  Tensor<T> y(osh);
  int64_t nbatch = shape_numel(p.out);
  // per-batch element offsets into a and b
  std::vector<int64_t> aoff(size_t(nbatch), 0), boff(size_t(nbatch), 0);
  if (p.same || p.out.empty()) {
    for (int64_t i = 0; i < nbatch; ++i) {
      aoff[size_t(i)] = i;
      boff[size_t(i)] = i;
    }
  } else {
    detail::bcast_walk(p, [&](int64_t i, int64_t oa, int64_t ob) {
      aoff[size_t(i)] = oa;
      boff[size_t(i)] = ob;
    });
  }
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* yp = y.ptr();
  for (int64_t i = 0; i < nbatch; ++i)
    detail::gemm(false, false, M, N, K, T(1), ap + aoff[size_t(i)] * M * K, K,
                 bp + boff[size_t(i)] * K * N, N, T(0), yp + i * M * N, N);
  auto ai = a.impl();
  auto bi = b.impl();
  auto yi = y.impl();
  bool wa = ai->wants_grad(), wb = bi->wants_grad();
  tape_record<T>("matmul", wa || wb, y,
                 [ai, bi, yi, aoff, boff, nbatch, M, N, K, wa, wb] {
                   yi->ensure_grad();
                   if (wa) ai->ensure_grad();
                   if (wb) bi->ensure_grad();
                   const T* gp = yi->grad.data();
                   for (int64_t i = 0; i < nbatch; ++i) {
                     const T* g = gp + i * M * N;
                     if (wa)  // dA = g x B^T
                       detail::gemm(false, true, M, K, N, T(1), g, N,
                                    bi->data.data() + boff[size_t(i)] * K * N,
                                    N, T(1),
                                    ai->grad.data() + aoff[size_t(i)] * M * K,
                                    K);
                     if (wb)  // dB = A^T x g
                       detail::gemm(true, false, K, N, M, T(1),
                                    ai->data.data() + aoff[size_t(i)] * M * K,
                                    K, g, N, T(1),
                                    bi->grad.data() + boff[size_t(i)] * K * N,
                                    N);
                   }
                 });
  return y;
}

// ------------------------------------------------------------------- softmax

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  int64_t L = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
  Tensor<T> y(x.shape());
  auto xs = x.values();
  auto ys = y.values();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * L * inner + in;
      T mx = xs[size_t(base)];
      for (int64_t l = 1; l < L; ++l)
        mx = std::max(mx, xs[size_t(base + l * inner)]);
      T denom = T(0);
      for (int64_t l = 0; l < L; ++l) {
        T e = std::exp(xs[size_t(base + l * inner)] - mx);
        ys[size_t(base + l * inner)] = e;
        denom += e;
      }
      T inv = T(1) / denom;
      for (int64_t l = 0; l < L; ++l) ys[size_t(base + l * inner)] *= inv;
    }
  auto xi = x.impl();
  auto yi = y.impl();
  tape_record<T>("softmax", xi->wants_grad(), y, [xi, yi, outer, inner, L] {
    yi->ensure_grad();
    xi->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        int64_t base = o * L * inner + in;
        T dot = T(0);
        for (int64_t l = 0; l < L; ++l) {
          size_t k = size_t(base + l * inner);
          dot += yi->grad[k] * yi->data[k];
        }
        for (int64_t l = 0; l < L; ++l) {
          size_t k = size_t(base + l * inner);
          xi->grad[k] += yi->data[k] * (yi->grad[k] - dot);
        }
      }
  });
  return y;
}

}  // namespace dmat
