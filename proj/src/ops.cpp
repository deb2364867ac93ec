#include "tlab/ops.hpp"

#include <algorithm>
#include <cmath>

namespace tlab {

namespace {

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Effective strides of `in` when broadcast against a right-aligned `out`
// shape; broadcast axes get stride 0.
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
  auto ist = contiguous_strides(in);
  std::vector<int64_t> st(out.size(), 0);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = (in[i] == out[off + i]) ? ist[i] : 0;
  return st;
}

// Visits every flat output index with the matching flat offsets into two
// broadcast inputs (odometer walk, no div/mod per element).
template <class F>
void for_each_bcast2(const Shape& out, const std::vector<int64_t>& sa,
                     const std::vector<int64_t>& sb, F&& f) {
  int64_t n = shape_numel(out);
  size_t r = out.size();
  if (r == 0) {
    if (n > 0) f(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      size_t u = static_cast<size_t>(ax);
      idx[u]++;
      ia += sa[u];
      ib += sb[u];
      if (idx[u] < out[u]) break;
      ia -= sa[u] * out[u];
      ib -= sb[u] * out[u];
      idx[u] = 0;
    }
  }
}

Shape broadcast_shape_named(const char* op, const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db)
      out[i] = da;
    else if (da == 1)
      out[i] = db;
    else if (db == 1)
      out[i] = da;
    else
      fail("{}: cannot broadcast shape {} with {}", op, shape_str(a),
           shape_str(b));
  }
  return out;
}

// Generic broadcasting binary op; partials are functions of the two input
// values.
template <class FwdF, class DaF, class DbF>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdF fwd,
                 DaF dfda, DbF dfdb) {
  Shape os = broadcast_shape_named(name, a.shape(), b.shape());
  auto sa = bcast_strides(a.shape(), os);
  auto sb = bcast_strides(b.shape(), os);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<real> out(static_cast<size_t>(shape_numel(os)));
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for_each_bcast2(os, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      out[static_cast<size_t>(o)] = fwd(av[static_cast<size_t>(ia)],
                                        bv[static_cast<size_t>(ib)]);
    });
  }
  Tensor pa = a, pb = b;
  return Tensor::make(
      std::move(os), std::move(out), {a, b},
      [pa, pb, sa, sb, dfda, dfdb](const std::vector<real>& g,
                                   const std::vector<real>&) {
        Shape os2 = broadcast_shape_named("binary", pa.shape(), pb.shape());
        const auto& av2 = pa.value();
        const auto& bv2 = pb.value();
        std::vector<real> ga(pa.requires_grad() ? av2.size() : 0, 0.0);
        std::vector<real> gb(pb.requires_grad() ? bv2.size() : 0, 0.0);
        for_each_bcast2(os2, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
          real va = av2[static_cast<size_t>(ia)];
          real vb = bv2[static_cast<size_t>(ib)];
          real go = g[static_cast<size_t>(o)];
          if (!ga.empty()) ga[static_cast<size_t>(ia)] += dfda(va, vb) * go;
          if (!gb.empty()) gb[static_cast<size_t>(ib)] += dfdb(va, vb) * go;
        });
        if (!ga.empty()) pa.accumulate_grad(ga);
        if (!gb.empty()) pb.accumulate_grad(gb);
      });
}

// Generic elementwise unary op; the derivative is a function of (x, y).
template <class FwdF, class DF>
Tensor unary_op(const Tensor& a, FwdF fwd, DF dfdx) {
  const auto& av = a.value();
  std::vector<real> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tensor pa = a;
  return Tensor::make(a.shape(), std::move(out), {a},
                      [pa, dfdx](const std::vector<real>& g,
                                 const std::vector<real>& y) {
                        const auto& av2 = pa.value();
                        std::vector<real> ga(av2.size());
                        for (size_t i = 0; i < av2.size(); ++i)
                          ga[i] = dfdx(av2[i], y[i]) * g[i];
                        pa.accumulate_grad(ga);
                      });
}

std::vector<int> normalize_axes(const char* op, std::vector<int> axes,
                                size_t rank) {
  if (axes.empty()) {
    axes.resize(rank);
    for (size_t i = 0; i < rank; ++i) axes[i] = static_cast<int>(i);
    return axes;
  }
  for (auto& ax : axes) {
    if (ax < 0) ax += static_cast<int>(rank);
    check(ax >= 0 && ax < static_cast<int>(rank),
          "{}: axis {} out of range for rank {}", op, ax, rank);
  }
  std::sort(axes.begin(), axes.end());
  check(std::adjacent_find(axes.begin(), axes.end()) == axes.end(),
        "{}: duplicate reduction axis", op);
  return axes;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  return broadcast_shape_named("broadcast", a, b);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](real x, real y) { return x + y; },
      [](real, real) { return real(1); }, [](real, real) { return real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](real x, real y) { return x - y; },
      [](real, real) { return real(1); }, [](real, real) { return real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](real x, real y) { return x * y; },
      [](real, real y) { return y; }, [](real x, real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](real x, real y) { return x / y; },
      [](real, real y) { return real(1) / y; },
      [](real x, real y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, real s) {
  return unary_op(
      a, [s](real x) { return x + s; }, [](real, real) { return real(1); });
}

Tensor mul_scalar(const Tensor& a, real s) {
  return unary_op(
      a, [s](real x) { return x * s; }, [s](real, real) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, [](real x) { return std::sqrt(x); },
      [](real, real y) { return real(0.5) / y; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](real x) { return x * x; }, [](real x, real) { return 2 * x; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](real x) { return std::abs(x); },
      [](real x, real) { return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0)); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](real x) { return x > 0 ? x : real(0); },
      [](real x, real) { return x > 0 ? real(1) : real(0); });
}

Tensor gelu(const Tensor& a) {
  constexpr real kInvSqrt2 = 0.70710678118654752440;
  constexpr real kInvSqrt2Pi = 0.39894228040143267794;
  return unary_op(
      a,
      [=](real x) { return real(0.5) * x * (1 + std::erf(x * kInvSqrt2)); },
      [=](real x, real) {
        real cdf = real(0.5) * (1 + std::erf(x * kInvSqrt2));
        real pdf = kInvSqrt2Pi * std::exp(real(-0.5) * x * x);
        return cdf + x * pdf;
      });
}

Tensor clamp_min(const Tensor& a, real lo) {
  return unary_op(
      a, [lo](real x) { return x < lo ? lo : x; },
      [lo](real x, real) { return x >= lo ? real(1) : real(0); });
}

Tensor sum(const Tensor& a, std::vector<int> axes, bool keepdim) {
  auto ax = normalize_axes("sum", std::move(axes), a.rank());
  std::vector<bool> reduced(a.rank(), false);
  for (int x : ax) reduced[static_cast<size_t>(x)] = true;

  Shape os;
  for (size_t i = 0; i < a.rank(); ++i) {
    if (!reduced[i])
      os.push_back(a.shape()[i]);
    else if (keepdim)
      os.push_back(1);
  }
  // walk the input; stride 0 on reduced axes maps to the output slot
  Shape kept = a.shape();
  for (size_t i = 0; i < kept.size(); ++i)
    if (reduced[i]) kept[i] = 1;
  auto kst = contiguous_strides(kept);
  std::vector<int64_t> so(a.rank());
  for (size_t i = 0; i < a.rank(); ++i) so[i] = reduced[i] ? 0 : kst[i];

  std::vector<real> out(static_cast<size_t>(shape_numel(os)), 0.0);
  const auto& av = a.value();
  auto si = contiguous_strides(a.shape());
  for_each_bcast2(a.shape(), si, so, [&](int64_t, int64_t ii, int64_t oi) {
    out[static_cast<size_t>(oi)] += av[static_cast<size_t>(ii)];
  });
  Tensor pa = a;
  Shape ashape = a.shape();
  return Tensor::make(std::move(os), std::move(out), {a},
                      [pa, ashape, si, so](const std::vector<real>& g,
                                           const std::vector<real>&) {
                        std::vector<real> ga(pa.value().size());
                        for_each_bcast2(ashape, si, so,
                                        [&](int64_t, int64_t ii, int64_t oi) {
                                          ga[static_cast<size_t>(ii)] =
                                              g[static_cast<size_t>(oi)];
                                        });
                        pa.accumulate_grad(ga);
                      });
}

Tensor mean(const Tensor& a, std::vector<int> axes, bool keepdim) {
  auto ax = normalize_axes("mean", std::move(axes), a.rank());
  int64_t count = 1;
  for (int x : ax) count *= a.shape()[static_cast<size_t>(x)];
  check(count > 0, "mean: reduction over an empty extent");
  return mul_scalar(sum(a, ax, keepdim), real(1) / static_cast<real>(count));
}

Tensor variance(const Tensor& a, std::vector<int> axes, bool keepdim,
                bool unbiased) {
  auto ax = normalize_axes("variance", std::move(axes), a.rank());
  int64_t count = 1;
  for (int x : ax) count *= a.shape()[static_cast<size_t>(x)];
  Tensor centered = sub(a, mean(a, ax, /*keepdim=*/true));
  Tensor v = mean(square(centered), ax, keepdim);
  if (unbiased) {
    check(count > 1, "variance: unbiased estimate needs at least 2 elements");
    v = mul_scalar(v, static_cast<real>(count) / static_cast<real>(count - 1));
  }
  return v;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      check(infer < 0, "reshape: more than one -1 extent in {}",
            shape_str(new_shape));
      infer = static_cast<int>(i);
    } else {
      check(new_shape[i] > 0, "reshape: bad extent in {}",
            shape_str(new_shape));
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    check(known > 0 && a.numel() % known == 0,
          "reshape: cannot infer -1 in {} from {} elements",
          shape_str(new_shape), a.numel());
    new_shape[static_cast<size_t>(infer)] = a.numel() / known;
    known *= new_shape[static_cast<size_t>(infer)];
  }
  check(known == a.numel(), "reshape: {} elements cannot view as shape {}",
        a.numel(), shape_str(new_shape));
  Tensor pa = a;
  return Tensor::make(std::move(new_shape), a.value(), {a},
                      [pa](const std::vector<real>& g,
                           const std::vector<real>&) {
                        pa.accumulate_grad(g);
                      });
}

Tensor transpose(const Tensor& a, std::vector<int> perm) {
  check(perm.size() == a.rank(), "transpose: permutation size {} != rank {}",
        perm.size(), a.rank());
  std::vector<bool> seen(a.rank(), false);
  for (int p : perm) {
    check(p >= 0 && p < static_cast<int>(a.rank()) && !seen[static_cast<size_t>(p)],
          "transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape os(a.rank());
  auto ist = contiguous_strides(a.shape());
  std::vector<int64_t> map_stride(a.rank());
  for (size_t i = 0; i < a.rank(); ++i) {
    os[i] = a.shape()[static_cast<size_t>(perm[i])];
    map_stride[i] = ist[static_cast<size_t>(perm[i])];
  }
  const auto& av = a.value();
  std::vector<real> out(av.size());
  std::vector<int64_t> zero(a.rank(), 0);
  {
    auto ost = contiguous_strides(os);
    for_each_bcast2(os, ost, map_stride, [&](int64_t, int64_t oi, int64_t ii) {
      out[static_cast<size_t>(oi)] = av[static_cast<size_t>(ii)];
    });
  }
  Tensor pa = a;
  return Tensor::make(std::move(os), std::move(out), {a},
                      [pa, perm](const std::vector<real>& g,
                                 const std::vector<real>&) {
                        // scatter through the same mapping
                        Shape os2(pa.rank());
                        auto ist2 = contiguous_strides(pa.shape());
                        std::vector<int64_t> ms(pa.rank());
                        for (size_t i = 0; i < pa.rank(); ++i) {
                          os2[i] = pa.shape()[static_cast<size_t>(perm[i])];
                          ms[i] = ist2[static_cast<size_t>(perm[i])];
                        }
                        auto ost = contiguous_strides(os2);
                        std::vector<real> ga(pa.value().size());
                        for_each_bcast2(os2, ost, ms,
                                        [&](int64_t, int64_t oi, int64_t ii) {
                                          ga[static_cast<size_t>(ii)] =
                                              g[static_cast<size_t>(oi)];
                                        });
                        pa.accumulate_grad(ga);
                      });
}

namespace {
// Decomposes shape around `axis` as [outer, extent, inner].
void split_at_axis(const Shape& s, int axis, int64_t& outer, int64_t& extent,
                   int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  extent = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    inner *= s[i];
}
}  // namespace

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (axis < 0) axis += static_cast<int>(a.rank());
  check(axis >= 0 && axis < static_cast<int>(a.rank()),
        "slice: axis out of range for shape {}", shape_str(a.shape()));
  int64_t outer, extent, inner;
  split_at_axis(a.shape(), axis, outer, extent, inner);
  check(start >= 0 && len > 0 && start + len <= extent,
        "slice: range [{}, {}) out of bounds for extent {}", start,
        start + len, extent);
  Shape os = a.shape();
  os[static_cast<size_t>(axis)] = len;
  const auto& av = a.value();
  std::vector<real> out(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < len; ++j)
      std::copy_n(av.begin() + (o * extent + start + j) * inner, inner,
                  out.begin() + (o * len + j) * inner);
  Tensor pa = a;
  return Tensor::make(
      std::move(os), std::move(out), {a},
      [pa, axis, start, len, outer, extent, inner](
          const std::vector<real>& g, const std::vector<real>&) {
        std::vector<real> ga(pa.value().size(), 0.0);
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < len; ++j) {
            const real* src = g.data() + (o * len + j) * inner;
            real* dst = ga.data() + (o * extent + start + j) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        pa.accumulate_grad(ga);
      });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  size_t rank = parts[0].rank();
  if (axis < 0) axis += static_cast<int>(rank);
  check(axis >= 0 && axis < static_cast<int>(rank), "concat: axis out of range");
  Shape os = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    check(p.rank() == rank, "concat: rank mismatch between {} and {}",
          shape_str(parts[0].shape()), shape_str(p.shape()));
    for (size_t i = 0; i < rank; ++i)
      if (static_cast<int>(i) != axis)
        check(p.shape()[i] == os[i],
              "concat: shape {} incompatible with {} on non-concat axis",
              shape_str(p.shape()), shape_str(os));
    total += p.shape()[static_cast<size_t>(axis)];
  }
  os[static_cast<size_t>(axis)] = total;

  int64_t outer, extent, inner;
  split_at_axis(os, axis, outer, extent, inner);
  std::vector<real> out(static_cast<size_t>(outer * extent * inner));
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t e = p.shape()[static_cast<size_t>(axis)];
    const auto& pv = p.value();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * e * inner, e * inner,
                  out.begin() + (o * extent + off) * inner);
    off += e;
  }
  std::vector<Tensor> captured = parts;
  return Tensor::make(
      std::move(os), std::move(out), parts,
      [captured, axis, outer, extent, inner](const std::vector<real>& g,
                                             const std::vector<real>&) {
        int64_t off2 = 0;
        for (const auto& p : captured) {
          int64_t e = p.shape()[static_cast<size_t>(axis)];
          if (p.requires_grad()) {
            std::vector<real> gp(static_cast<size_t>(p.numel()));
            for (int64_t o = 0; o < outer; ++o)
              std::copy_n(g.begin() + (o * extent + off2) * inner, e * inner,
                          gp.begin() + o * e * inner);
            Tensor t = p;
            t.accumulate_grad(gp);
          }
          off2 += e;
        }
      });
}

Tensor gather(const Tensor& a, int axis, const std::vector<int64_t>& indices) {
  if (axis < 0) axis += static_cast<int>(a.rank());
  check(axis >= 0 && axis < static_cast<int>(a.rank()),
        "gather: axis out of range for shape {}", shape_str(a.shape()));
  int64_t outer, extent, inner;
  split_at_axis(a.shape(), axis, outer, extent, inner);
  for (int64_t ix : indices)
    check(ix >= 0 && ix < extent, "gather: index {} out of range [0, {})", ix,
          extent);
  Shape os = a.shape();
  os[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
  int64_t m = static_cast<int64_t>(indices.size());
  const auto& av = a.value();
  std::vector<real> out(static_cast<size_t>(outer * m * inner));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t j = 0; j < m; ++j)
      std::copy_n(av.begin() + (o * extent + indices[static_cast<size_t>(j)]) * inner,
                  inner, out.begin() + (o * m + j) * inner);
  Tensor pa = a;
  return Tensor::make(
      std::move(os), std::move(out), {a},
      [pa, indices, outer, extent, inner, m](const std::vector<real>& g,
                                             const std::vector<real>&) {
        std::vector<real> ga(pa.value().size(), 0.0);
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t j = 0; j < m; ++j) {
            const real* src = g.data() + (o * m + j) * inner;
            real* dst =
                ga.data() + (o * extent + indices[static_cast<size_t>(j)]) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        pa.accumulate_grad(ga);
      });
}

Tensor detach(const Tensor& a) {
  return Tensor(a.shape(), a.value(), false);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() >= 2 && b.rank() >= 2,
        "matmul: inputs must have rank >= 2, got {} and {}",
        shape_str(a.shape()), shape_str(b.shape()));
  int64_t m = a.shape()[a.rank() - 2];
  int64_t k = a.shape()[a.rank() - 1];
  int64_t k2 = b.shape()[b.rank() - 2];
  int64_t n = b.shape()[b.rank() - 1];
  check(k == k2, "matmul: inner extents disagree between {} and {}",
        shape_str(a.shape()), shape_str(b.shape()));

  Shape abatch(a.shape().begin(), a.shape().end() - 2);
  Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape obatch = broadcast_shape_named("matmul", abatch, bbatch);
  auto sa = bcast_strides(abatch, obatch);
  auto sb = bcast_strides(bbatch, obatch);
  // batch strides measured in matrices
  Shape os = obatch;
  os.push_back(m);
  os.push_back(n);

  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<real> out(static_cast<size_t>(shape_numel(os)), 0.0);
  for_each_bcast2(obatch, sa, sb, [&](int64_t ob, int64_t ia, int64_t ib) {
    const real* A = av.data() + ia * m * k;
    const real* B = bv.data() + ib * k * n;
    real* C = out.data() + ob * m * n;
    for (int64_t i = 0; i < m; ++i) {
      const real* Ai = A + i * k;
      real* Ci = C + i * n;
      for (int64_t p = 0; p < k; ++p) {
        real aip = Ai[p];
        const real* Bp = B + p * n;
        for (int64_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
      }
    }
  });

  Tensor pa = a, pb = b;
  return Tensor::make(
      std::move(os), std::move(out), {a, b},
      [pa, pb, obatch, sa, sb, m, k, n](const std::vector<real>& g,
                                        const std::vector<real>&) {
        const auto& av2 = pa.value();
        const auto& bv2 = pb.value();
        std::vector<real> ga(pa.requires_grad() ? av2.size() : 0, 0.0);
        std::vector<real> gb(pb.requires_grad() ? bv2.size() : 0, 0.0);
        for_each_bcast2(obatch, sa, sb, [&](int64_t ob, int64_t ia, int64_t ib) {
          const real* A = av2.data() + ia * m * k;
          const real* B = bv2.data() + ib * k * n;
          const real* G = g.data() + ob * m * n;
          if (!ga.empty()) {
            real* GA = ga.data() + ia * m * k;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t j = 0; j < n; ++j) {
                real gij = G[i * n + j];
                const real* Bj = B + j;
                real* GAi = GA + i * k;
                for (int64_t p = 0; p < k; ++p) GAi[p] += gij * Bj[p * n];
              }
          }
          if (!gb.empty()) {
            real* GB = gb.data() + ib * k * n;
            for (int64_t i = 0; i < m; ++i) {
              const real* Ai = A + i * k;
              const real* Gi = G + i * n;
              for (int64_t p = 0; p < k; ++p) {
                real aip = Ai[p];
                real* GBp = GB + p * n;
                for (int64_t j = 0; j < n; ++j) GBp[j] += aip * Gi[j];
              }
            }
          }
        });
        if (!ga.empty()) pa.accumulate_grad(ga);
        if (!gb.empty()) pb.accumulate_grad(gb);
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(w.rank() == 2, "linear: weight must be [in, out], got {}",
        shape_str(w.shape()));
  Shape xs = x.shape();
  check(!xs.empty() && xs.back() == w.shape()[0],
        "linear: input {} does not match weight {}", shape_str(x.shape()),
        shape_str(w.shape()));
  bool flat = x.rank() == 1;
  Tensor xin = flat ? reshape(x, {1, xs[0]}) : x;
  Tensor y = matmul(xin, w);
  if (b.defined()) y = add(y, b);
  if (flat) y = reshape(y, {w.shape()[1]});
  return y;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad) {
  check(input.rank() == 4, "conv2d: input must be [N,C,H,W], got {}",
        shape_str(input.shape()));
  check(weight.rank() == 4, "conv2d: weight must be [F,C,KH,KW], got {}",
        shape_str(weight.shape()));
  check(input.shape()[1] == weight.shape()[1],
        "conv2d: channel mismatch between input {} and weight {}",
        shape_str(input.shape()), shape_str(weight.shape()));
  check(stride >= 1, "conv2d: stride must be >= 1, got {}", stride);
  check(pad >= 0, "conv2d: padding must be >= 0, got {}", pad);
  int64_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
          W = input.shape()[3];
  int64_t F = weight.shape()[0], KH = weight.shape()[2], KW = weight.shape()[3];
  if (bias.defined())
    check(bias.rank() == 1 && bias.shape()[0] == F,
          "conv2d: bias {} does not match {} filters", shape_str(bias.shape()),
          F);
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  check(H + 2 * pad >= KH && W + 2 * pad >= KW && OH > 0 && OW > 0,
        "conv2d: kernel {}x{} with pad {} does not fit input {}", KH, KW, pad,
        shape_str(input.shape()));

  const auto& xv = input.value();
  const auto& wv = weight.value();
  std::vector<real> out(static_cast<size_t>(N * F * OH * OW), 0.0);
  for (int64_t nI = 0; nI < N; ++nI) {
    for (int64_t f = 0; f < F; ++f) {
      real b0 = bias.defined() ? bias.value()[static_cast<size_t>(f)] : real(0);
      for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
          real acc = b0;
          int64_t ih0 = oh * stride - pad;
          int64_t iw0 = ow * stride - pad;
          for (int64_t c = 0; c < C; ++c) {
            const real* xp = xv.data() + ((nI * C + c) * H) * W;
            const real* wp = wv.data() + ((f * C + c) * KH) * KW;
            for (int64_t kh = 0; kh < KH; ++kh) {
              int64_t ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (int64_t kw = 0; kw < KW; ++kw) {
                int64_t iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                acc += xp[ih * W + iw] * wp[kh * KW + kw];
              }
            }
          }
          out[static_cast<size_t>(((nI * F + f) * OH + oh) * OW + ow)] = acc;
        }
      }
    }
  }

  Tensor px = input, pw = weight, pb = bias;
  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make(
      {N, F, OH, OW}, std::move(out), std::move(parents),
      [px, pw, pb, stride, pad, N, C, H, W, F, KH, KW, OH, OW](
          const std::vector<real>& g, const std::vector<real>&) {
        const auto& xv2 = px.value();
        const auto& wv2 = pw.value();
        std::vector<real> gx(px.requires_grad() ? xv2.size() : 0, 0.0);
        std::vector<real> gw(pw.requires_grad() ? wv2.size() : 0, 0.0);
        std::vector<real> gb(
            pb.defined() && pb.requires_grad() ? static_cast<size_t>(F) : 0, 0.0);
        for (int64_t nI = 0; nI < N; ++nI) {
          for (int64_t f = 0; f < F; ++f) {
            for (int64_t oh = 0; oh < OH; ++oh) {
              for (int64_t ow = 0; ow < OW; ++ow) {
                real go =
                    g[static_cast<size_t>(((nI * F + f) * OH + oh) * OW + ow)];
                if (go == 0) continue;
                if (!gb.empty()) gb[static_cast<size_t>(f)] += go;
                int64_t ih0 = oh * stride - pad;
                int64_t iw0 = ow * stride - pad;
                for (int64_t c = 0; c < C; ++c) {
                  const real* xp = xv2.data() + ((nI * C + c) * H) * W;
                  const real* wp = wv2.data() + ((f * C + c) * KH) * KW;
                  real* gxp = gx.empty() ? nullptr : gx.data() + ((nI * C + c) * H) * W;
                  real* gwp = gw.empty() ? nullptr : gw.data() + ((f * C + c) * KH) * KW;
                  for (int64_t kh = 0; kh < KH; ++kh) {
                    int64_t ih = ih0 + kh;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t kw = 0; kw < KW; ++kw) {
                      int64_t iw = iw0 + kw;
                      if (iw < 0 || iw >= W) continue;
                      if (gxp) gxp[ih * W + iw] += wp[kh * KW + kw] * go;
                      if (gwp) gwp[kh * KW + kw] += xp[ih * W + iw] * go;
                    }
                  }
                }
              }
            }
          }
        }
        if (!gx.empty()) px.accumulate_grad(gx);
        if (!gw.empty()) pw.accumulate_grad(gw);
        if (!gb.empty()) {
          Tensor t = pb;
          t.accumulate_grad(gb);
        }
      });
}

Tensor pad2d(const Tensor& input, int top, int bottom, int left, int right,
             PadMode mode) {
  check(input.rank() == 4, "pad2d: input must be [N,C,H,W], got {}",
        shape_str(input.shape()));
  check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
        "pad2d: negative padding");
  int64_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
          W = input.shape()[3];
  int64_t OH = H + top + bottom, OW = W + left + right;
  const auto& xv = input.value();
  std::vector<real> out(static_cast<size_t>(N * C * OH * OW), 0.0);
  auto clampi = [](int64_t v, int64_t lo, int64_t hi) {
    return v < lo ? lo : (v > hi ? hi : v);
  };
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const real* xp = xv.data() + nc * H * W;
    real* op = out.data() + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      int64_t ih = oh - top;
      if (mode == PadMode::Replicate) ih = clampi(ih, 0, H - 1);
      if (ih < 0 || ih >= H) continue;
      for (int64_t ow = 0; ow < OW; ++ow) {
        int64_t iw = ow - left;
        if (mode == PadMode::Replicate) iw = clampi(iw, 0, W - 1);
        if (iw < 0 || iw >= W) continue;
        op[oh * OW + ow] = xp[ih * W + iw];
      }
    }
  }
  Tensor px = input;
  return Tensor::make(
      {N, C, OH, OW}, std::move(out), {input},
      [px, top, left, mode, N, C, H, W, OH, OW](const std::vector<real>& g,
                                                const std::vector<real>&) {
        std::vector<real> gx(px.value().size(), 0.0);
        auto clampi = [](int64_t v, int64_t lo, int64_t hi) {
          return v < lo ? lo : (v > hi ? hi : v);
        };
        for (int64_t nc = 0; nc < N * C; ++nc) {
          const real* gp = g.data() + nc * OH * OW;
          real* gxp = gx.data() + nc * H * W;
          for (int64_t oh = 0; oh < OH; ++oh) {
            int64_t ih = oh - top;
            if (mode == PadMode::Replicate) ih = clampi(ih, 0, H - 1);
            if (ih < 0 || ih >= H) continue;
            for (int64_t ow = 0; ow < OW; ++ow) {
              int64_t iw = ow - left;
              if (mode == PadMode::Replicate) iw = clampi(iw, 0, W - 1);
              if (iw < 0 || iw >= W) continue;
              gxp[ih * W + iw] += gp[oh * OW + ow];
            }
          }
        }
        px.accumulate_grad(gx);
      });
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
  check(input.rank() == 4, "bilinear_resize: input must be [N,C,H,W], got {}",
        shape_str(input.shape()));
  check(out_h > 0 && out_w > 0, "bilinear_resize: bad target size {}x{}", out_h,
        out_w);
  int64_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
          W = input.shape()[3];
  int64_t OH = out_h, OW = out_w;

  struct Tap {
    int64_t i0, i1;
    real w1;  // weight of i1; i0 gets 1-w1
  };
  auto make_taps = [](int64_t in, int64_t outn) {
    std::vector<Tap> taps(static_cast<size_t>(outn));
    real scale = static_cast<real>(in) / static_cast<real>(outn);
    for (int64_t o = 0; o < outn; ++o) {
      real src = (static_cast<real>(o) + real(0.5)) * scale - real(0.5);
      if (src < 0) src = 0;
      if (src > static_cast<real>(in - 1)) src = static_cast<real>(in - 1);
      int64_t i0 = static_cast<int64_t>(std::floor(src));
      int64_t i1 = std::min(i0 + 1, in - 1);
      taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<real>(i0)};
    }
    return taps;
  };
  auto ty = make_taps(H, OH);
  auto tx = make_taps(W, OW);

  const auto& xv = input.value();
  std::vector<real> out(static_cast<size_t>(N * C * OH * OW));
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const real* xp = xv.data() + nc * H * W;
    real* op = out.data() + nc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      const Tap& a = ty[static_cast<size_t>(oh)];
      for (int64_t ow = 0; ow < OW; ++ow) {
        const Tap& b = tx[static_cast<size_t>(ow)];
        real v00 = xp[a.i0 * W + b.i0], v01 = xp[a.i0 * W + b.i1];
        real v10 = xp[a.i1 * W + b.i0], v11 = xp[a.i1 * W + b.i1];
        real top = v00 + (v01 - v00) * b.w1;
        real bot = v10 + (v11 - v10) * b.w1;
        op[oh * OW + ow] = top + (bot - top) * a.w1;
      }
    }
  }
  Tensor px = input;
  return Tensor::make(
      {N, C, OH, OW}, std::move(out), {input},
      [px, ty, tx, N, C, H, W, OH, OW](const std::vector<real>& g,
                                       const std::vector<real>&) {
        std::vector<real> gx(px.value().size(), 0.0);
        for (int64_t nc = 0; nc < N * C; ++nc) {
          const real* gp = g.data() + nc * OH * OW;
          real* gxp = gx.data() + nc * H * W;
          for (int64_t oh = 0; oh < OH; ++oh) {
            const Tap& a = ty[static_cast<size_t>(oh)];
            for (int64_t ow = 0; ow < OW; ++ow) {
              const Tap& b = tx[static_cast<size_t>(ow)];
              real go = gp[oh * OW + ow];
              gxp[a.i0 * W + b.i0] += go * (1 - a.w1) * (1 - b.w1);
              gxp[a.i0 * W + b.i1] += go * (1 - a.w1) * b.w1;
              gxp[a.i1 * W + b.i0] += go * a.w1 * (1 - b.w1);
              gxp[a.i1 * W + b.i1] += go * a.w1 * b.w1;
            }
          }
        }
        px.accumulate_grad(gx);
      });
}

Tensor pixel_shuffle(const Tensor& input, int upscale) {
  check(input.rank() == 4, "pixel_shuffle: input must be [N,C,H,W], got {}",
        shape_str(input.shape()));
  check(upscale >= 1, "pixel_shuffle: upscale must be >= 1, got {}", upscale);
  int64_t r = upscale;
  int64_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2],
          W = input.shape()[3];
  check(C % (r * r) == 0,
        "pixel_shuffle: channels {} not divisible by upscale^2 = {}", C, r * r);
  int64_t OC = C / (r * r), OH = H * r, OW = W * r;
  const auto& xv = input.value();
  std::vector<real> out(xv.size());
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t dy = 0; dy < r; ++dy)
        for (int64_t dx = 0; dx < r; ++dx) {
          int64_t ic = oc * r * r + dy * r + dx;
          const real* xp = xv.data() + ((n * C + ic) * H) * W;
          real* op = out.data() + ((n * OC + oc) * OH) * OW;
          for (int64_t h = 0; h < H; ++h)
            for (int64_t w = 0; w < W; ++w)
              op[(h * r + dy) * OW + (w * r + dx)] = xp[h * W + w];
        }
  Tensor px = input;
  return Tensor::make(
      {N, OC, OH, OW}, std::move(out), {input},
      [px, r, N, C, H, W, OC, OH, OW](const std::vector<real>& g,
                                      const std::vector<real>&) {
        std::vector<real> gx(px.value().size());
        for (int64_t n = 0; n < N; ++n)
          for (int64_t oc = 0; oc < OC; ++oc)
            for (int64_t dy = 0; dy < r; ++dy)
              for (int64_t dx = 0; dx < r; ++dx) {
                int64_t ic = oc * r * r + dy * r + dx;
                real* gxp = gx.data() + ((n * C + ic) * H) * W;
                const real* gp = g.data() + ((n * OC + oc) * OH) * OW;
                for (int64_t h = 0; h < H; ++h)
                  for (int64_t w = 0; w < W; ++w)
                    gxp[h * W + w] = gp[(h * r + dy) * OW + (w * r + dx)];
              }
        px.accumulate_grad(gx);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps) {
  check(x.rank() >= 1, "layer_norm: input must have rank >= 1");
  int last = static_cast<int>(x.rank()) - 1;
  Tensor mu = mean(x, {last}, /*keepdim=*/true);
  Tensor centered = sub(x, mu);
  Tensor var = mean(square(centered), {last}, /*keepdim=*/true);
  Tensor y = div(centered, sqrt(add_scalar(var, eps)));
  if (gamma.defined()) y = mul(y, gamma);
  if (beta.defined()) y = add(y, beta);
  return y;
}

Tensor softmax_over_channel(const Tensor& x, int axis, real scale) {
  if (axis < 0) axis += static_cast<int>(x.rank());
  check(axis >= 0 && axis < static_cast<int>(x.rank()),
        "softmax_over_channel: axis out of range for shape {}",
        shape_str(x.shape()));
  if (!x.all_finite()) fail_numeric("softmax_over_channel: non-finite input");
  int64_t outer, extent, inner;
  split_at_axis(x.shape(), axis, outer, extent, inner);
  const auto& xv = x.value();
  std::vector<real> out(xv.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const real* base = xv.data() + o * extent * inner + i;
      real* obase = out.data() + o * extent * inner + i;
      real mx = -std::numeric_limits<real>::infinity();
      for (int64_t kk = 0; kk < extent; ++kk)
        mx = std::max(mx, scale * base[kk * inner]);
      real s = 0;
      for (int64_t kk = 0; kk < extent; ++kk) {
        real e = std::exp(scale * base[kk * inner] - mx);
        obase[kk * inner] = e;
        s += e;
      }
      real inv = real(1) / s;
      for (int64_t kk = 0; kk < extent; ++kk) obase[kk * inner] *= inv;
    }
  }
  Tensor px = x;
  return Tensor::make(
      x.shape(), std::move(out), {x},
      [px, outer, extent, inner, scale](const std::vector<real>& g,
                                        const std::vector<real>& y) {
        std::vector<real> gx(y.size());
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < inner; ++i) {
            int64_t base = o * extent * inner + i;
            real dot = 0;
            for (int64_t kk = 0; kk < extent; ++kk)
              dot += g[static_cast<size_t>(base + kk * inner)] *
                     y[static_cast<size_t>(base + kk * inner)];
            for (int64_t kk = 0; kk < extent; ++kk) {
              size_t ix = static_cast<size_t>(base + kk * inner);
              gx[ix] = scale * y[ix] * (g[ix] - dot);
            }
          }
        }
        px.accumulate_grad(gx);
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be [N,K], got {}",
        shape_str(logits.shape()));
  int64_t N = logits.shape()[0], K = logits.shape()[1];
  check(static_cast<int64_t>(labels.size()) == N,
        "cross_entropy: {} labels for {} rows", labels.size(), N);
  for (int64_t i = 0; i < N; ++i)
    check(labels[static_cast<size_t>(i)] >= 0 &&
              labels[static_cast<size_t>(i)] < K,
          "cross_entropy: label {} out of range [0, {}) at row {}",
          labels[static_cast<size_t>(i)], K, i);
  const auto& lv = logits.value();
  real total = 0;
  for (int64_t i = 0; i < N; ++i) {
    const real* row = lv.data() + i * K;
    real mx = row[0];
    for (int64_t kk = 1; kk < K; ++kk) mx = std::max(mx, row[kk]);
    real s = 0;
    for (int64_t kk = 0; kk < K; ++kk) s += std::exp(row[kk] - mx);
    real lse = mx + std::log(s);
    total += lse - row[labels[static_cast<size_t>(i)]];
  }
  total /= static_cast<real>(N);
  Tensor pl = logits;
  return Tensor::make(
      Shape{}, {total}, {logits},
      [pl, labels, N, K](const std::vector<real>& g, const std::vector<real>&) {
        const auto& lv2 = pl.value();
        std::vector<real> gl(lv2.size());
        real g0 = g[0] / static_cast<real>(N);
        for (int64_t i = 0; i < N; ++i) {
          const real* row = lv2.data() + i * K;
          real* grow = gl.data() + i * K;
          real mx = row[0];
          for (int64_t kk = 1; kk < K; ++kk) mx = std::max(mx, row[kk]);
          real s = 0;
          for (int64_t kk = 0; kk < K; ++kk) s += std::exp(row[kk] - mx);
          real inv = real(1) / s;
          for (int64_t kk = 0; kk < K; ++kk)
            grow[kk] = std::exp(row[kk] - mx) * inv * g0;
          grow[labels[static_cast<size_t>(i)]] -= g0;
        }
        pl.accumulate_grad(gl);
      });
}

std::vector<int64_t> argmax(const Tensor& x, int axis) {
  if (axis < 0) axis += static_cast<int>(x.rank());
  check(axis >= 0 && axis < static_cast<int>(x.rank()),
        "argmax: axis out of range for shape {}", shape_str(x.shape()));
  int64_t outer, extent, inner;
  split_at_axis(x.shape(), axis, outer, extent, inner);
  const auto& xv = x.value();
  std::vector<int64_t> out(static_cast<size_t>(outer * inner), 0);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const real* base = xv.data() + o * extent * inner + i;
      int64_t best = 0;
      real bv = base[0];
      for (int64_t kk = 1; kk < extent; ++kk) {
        // strictly greater keeps the lowest index on ties
        if (base[kk * inner] > bv) {
          bv = base[kk * inner];
          best = kk;
        }
      }
      out[static_cast<size_t>(o * inner + i)] = best;
    }
  return out;
}

double accuracy(const Tensor& logits, const std::vector<int64_t>& labels) {
  auto pred = argmax(logits, 1);
  check(pred.size() == labels.size(), "accuracy: {} predictions, {} labels",
        pred.size(), labels.size());
  if (pred.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace tlab
