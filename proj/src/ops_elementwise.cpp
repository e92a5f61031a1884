#include <cmath>

#include "ops_common.hpp"

namespace warptrack {
namespace {
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using CArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
}  // namespace
}  // namespace warptrack

namespace warptrack {

using detail::out_grad;
using detail::rec_needed;
using detail::record;

namespace {

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  check_dim(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  const bool rec = rec_needed<S>({&a, &b});
  Tensor<S> out(a.shape(), rec);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (rec)
    record<S>(out, [a, b, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  const bool rec = rec_needed<S>({&a, &b});
  Tensor<S> out(a.shape(), rec);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (rec)
    record<S>(out, [a, b, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] -= go[i];
      }
    });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  const bool rec = rec_needed<S>({&a, &b});
  Tensor<S> out(a.shape(), rec);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (rec)
    record<S>(out, [a, b, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const int64_t n = out.numel();
      if (a.requires_grad()) {
        S* ga = a.grad();
        const S* pb = b.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        const S* pa = a.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
      }
    });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  const bool rec = rec_needed<S>({&a});
  Tensor<S> out(a.shape(), rec);
  const S* pa = a.data();
  S* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (rec)
    record<S>(out, [a, out, c]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* ga = a.grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
    });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(x.shape(), rec);
  const S* px = x.data();
  S* po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
  if (rec)
    record<S>(out, [x, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      const S* px = x.data();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i)
        if (px[i] > S(0)) gx[i] += go[i];
    });
  return out;
}

// gelu, tanh form: 0.5 x (1 + tanh(c (x + a x^3)))
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(x.shape(), rec);
  const int64_t n = x.numel();
  const S c = S(0.7978845608028654), a = S(0.044715);
  CArrMap<S> X(x.data(), n);
  ArrMap<S> O(out.data(), n);
  O = S(0.5) * X * (S(1) + (c * (X + a * X.cube())).tanh());
  if (rec)
    record<S>(out, [x, out, c, a]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const int64_t n = out.numel();
      CArrMap<S> X(x.data(), n);
      CArrMap<S> GO(go, n);
      ArrMap<S> GX(x.grad(), n);
      auto th = (c * (X + a * X.cube())).tanh();
      GX += GO * (S(0.5) * (S(1) + th) + S(0.5) * X * (S(1) - th.square()) * c * (S(1) + S(3) * a * X.square()));
    });
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(x.shape(), rec);
  const int64_t n = x.numel();
  CArrMap<S> X(x.data(), n);
  ArrMap<S> O(out.data(), n);
  O = S(1) / (S(1) + (-X).exp());
  if (rec)
    record<S>(out, [x, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const int64_t n = out.numel();
      CArrMap<S> GO(go, n);
      CArrMap<S> O(out.data(), n);
      ArrMap<S> GX(x.grad(), n);
      GX += GO * O * (S(1) - O);
    });
  return out;
}

template <typename S>
Tensor<S> bias_add(const Tensor<S>& x, const Tensor<S>& b) {
  check_dim(b.rank() == 1 && x.rank() >= 1 && x.shape().back() == b.extent(0),
            "bias_add: bias " + shape_str(b.shape()) + " does not match last axis of " + shape_str(x.shape()));
  const bool rec = rec_needed<S>({&x, &b});
  Tensor<S> out(x.shape(), rec);
  const int64_t d = b.extent(0);
  const int64_t rows = x.numel() / d;
  const S* px = x.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] + pb[j];
  if (rec)
    record<S>(out, [x, b, out, rows, d]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      if (x.requires_grad()) {
        S* gx = x.grad();
        const int64_t n = out.numel();
        for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
      }
      if (b.requires_grad()) {
        S* gb = b.grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
      }
    });
  return out;
}

template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  check_dim(!parts.empty(), "concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  check_dim(!s0.empty(), "concat_channels: inputs must have rank >= 1");
  int64_t total = 0;
  for (const auto& p : parts) {
    check_dim(p.rank() == int(s0.size()), "concat_channels: rank mismatch");
    for (size_t i = 0; i + 1 < s0.size(); ++i)
      check_dim(p.shape()[i] == s0[i], "concat_channels: leading extent mismatch");
    total += p.shape().back();
  }
  Shape os = s0;
  os.back() = total;
  bool rec = false;
  if (Tape<S>::current())
    for (const auto& p : parts) rec = rec || p.requires_grad();
  Tensor<S> out(os, rec);
  const int64_t rows = out.numel() / total;
  S* po = out.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t d = p.shape().back();
    const S* pp = p.data();
    for (int64_t r = 0; r < rows; ++r) std::memcpy(po + r * total + off, pp + r * d, size_t(d) * sizeof(S));
    off += d;
  }
  if (rec)
    record<S>(out, [parts, out, rows, total]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      int64_t off = 0;
      for (auto& p : parts) {
        const int64_t d = p.shape().back();
        if (p.requires_grad()) {
          S* gp = p.grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) gp[r * d + j] += go[r * total + off + j];
        }
        off += d;
      }
    });
  return out;
}

template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int64_t offset, int64_t len) {
  check_dim(x.rank() >= 1, "slice_channels: rank must be >= 1");
  const int64_t d = x.shape().back();
  check_dim(offset >= 0 && len > 0 && offset + len <= d, "slice_channels: invalid range");
  Shape os = x.shape();
  os.back() = len;
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(os, rec);
  const int64_t rows = x.numel() / d;
  const S* px = x.data();
  S* po = out.data();
  for (int64_t r = 0; r < rows; ++r) std::memcpy(po + r * len, px + r * d + offset, size_t(len) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, rows, d, offset, len]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < len; ++j) gx[r * d + offset + j] += go[r * len + j];
    });
  return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  check_dim(numel_of(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(std::move(shape), rec);
  std::memcpy(out.data(), x.data(), size_t(x.numel()) * sizeof(S));
  if (rec)
    record<S>(out, [x, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  return out;
}

template <typename S>
Tensor<S> swap_axes01(const Tensor<S>& x) {
  check_dim(x.rank() >= 2, "swap_axes01: rank must be >= 2");
  const int64_t a = x.extent(0), b = x.extent(1);
  int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.extent(i);
  Shape os = x.shape();
  std::swap(os[0], os[1]);
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(os, rec);
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < a; ++i)
    for (int64_t j = 0; j < b; ++j)
      std::memcpy(po + (j * a + i) * inner, px + (i * b + j) * inner, size_t(inner) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, a, b, inner]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t i = 0; i < a; ++i)
        for (int64_t j = 0; j < b; ++j) {
          const S* src = go + (j * a + i) * inner;
          S* dst = gx + (i * b + j) * inner;
          for (int64_t k = 0; k < inner; ++k) dst[k] += src[k];
        }
    });
  return out;
}

template <typename S>
Tensor<S> zero_row0(const Tensor<S>& x) {
  check_dim(x.rank() >= 1 && x.extent(0) >= 1, "zero_row0: needs a leading axis");
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(x.shape(), rec);
  const int64_t slice = x.numel() / x.extent(0);
  std::memcpy(out.data() + slice, x.data() + slice, size_t(x.numel() - slice) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, slice]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      const int64_t n = out.numel();
      for (int64_t i = slice; i < n; ++i) gx[i] += go[i];
    });
  return out;
}

template <typename S>
Tensor<S> drop_row0(const Tensor<S>& x) {
  check_dim(x.rank() >= 1 && x.extent(0) >= 2, "drop_row0: needs at least two leading slices");
  Shape os = x.shape();
  os[0] -= 1;
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(os, rec);
  const int64_t slice = x.numel() / x.extent(0);
  std::memcpy(out.data(), x.data() + slice, size_t(out.numel()) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, slice]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad() + slice;
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(Shape{}, rec);
  const S* px = x.data();
  S acc = S(0);
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = acc;
  if (rec)
    record<S>(out, [x, out]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      const S g = go[0];
      const int64_t n = x.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  check_dim(x.numel() > 0, "mean: empty tensor");
  Tensor<S> s = sum(x);
  return scale(s, S(1) / S(x.numel()));
}

template <typename S>
Tensor<S> stride_slice2d(const Tensor<S>& x, int r) {
  check_dim(x.rank() == 4, "stride_slice2d: expected [t,c,h,w]");
  check_dim(r >= 1, "stride_slice2d: stride must be >= 1");
  if (r == 1) return reshape(x, x.shape());
  const int64_t t = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const int64_t ho = (h + r - 1) / r, wo = (w + r - 1) / r;
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out({t, c, ho, wo}, rec);
  const S* px = x.data();
  S* po = out.data();
  for (int64_t i = 0; i < t * c; ++i)
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t xx = 0; xx < wo; ++xx) po[(i * ho + y) * wo + xx] = px[(i * h + y * r) * w + xx * r];
  if (rec)
    record<S>(out, [x, out, t, c, h, w, ho, wo, r]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t i = 0; i < t * c; ++i)
        for (int64_t y = 0; y < ho; ++y)
          for (int64_t xx = 0; xx < wo; ++xx) gx[(i * h + y * r) * w + xx * r] += go[(i * ho + y) * wo + xx];
    });
  return out;
}

template <typename S>
Tensor<S> channels_last(const Tensor<S>& x) {
  check_dim(x.rank() == 4, "channels_last: expected [t,c,h,w]");
  const int64_t t = x.extent(0), c = x.extent(1), n = x.extent(2) * x.extent(3);
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out({t, n, c}, rec);
  const S* px = x.data();
  S* po = out.data();
  for (int64_t f = 0; f < t; ++f)
    for (int64_t ch = 0; ch < c; ++ch) {
      const S* src = px + (f * c + ch) * n;
      S* dst = po + f * n * c + ch;
      for (int64_t i = 0; i < n; ++i) dst[i * c] = src[i];
    }
  if (rec)
    record<S>(out, [x, out, t, c, n]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t f = 0; f < t; ++f)
        for (int64_t ch = 0; ch < c; ++ch) {
          S* dst = gx + (f * c + ch) * n;
          const S* src = go + f * n * c + ch;
          for (int64_t i = 0; i < n; ++i) dst[i] += src[i * c];
        }
    });
  return out;
}

template <typename S>
Tensor<S> take_row0(const Tensor<S>& x) {
  check_dim(x.rank() >= 2 && x.extent(0) >= 1, "take_row0: needs a leading axis");
  Shape os(x.shape().begin() + 1, x.shape().end());
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(os, rec);
  const int64_t slice = out.numel();
  std::memcpy(out.data(), x.data(), size_t(slice) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, slice]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t i = 0; i < slice; ++i) gx[i] += go[i];
    });
  return out;
}

template <typename S>
Tensor<S> broadcast_row0(const Tensor<S>& x) {
  check_dim(x.rank() >= 2 && x.extent(0) >= 1, "broadcast_row0: needs a leading axis");
  const int64_t t = x.extent(0);
  const int64_t slice = x.numel() / t;
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(x.shape(), rec);
  for (int64_t f = 0; f < t; ++f) std::memcpy(out.data() + f * slice, x.data(), size_t(slice) * sizeof(S));
  if (rec)
    record<S>(out, [x, out, t, slice]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t f = 0; f < t; ++f)
        for (int64_t i = 0; i < slice; ++i) gx[i] += go[f * slice + i];
    });
  return out;
}

template <typename S>
Tensor<S> concat_planes(const std::vector<Tensor<S>>& parts) {
  check_dim(!parts.empty(), "concat_planes: no inputs");
  const Shape& s0 = parts[0].shape();
  check_dim(s0.size() == 4, "concat_planes: expected [b,c,h,w] inputs");
  int64_t ctot = 0;
  for (const auto& p : parts) {
    check_dim(p.rank() == 4 && p.extent(0) == s0[0] && p.extent(2) == s0[2] && p.extent(3) == s0[3],
              "concat_planes: extent mismatch");
    ctot += p.extent(1);
  }
  bool rec = false;
  if (Tape<S>::current())
    for (const auto& p : parts) rec = rec || p.requires_grad();
  const int64_t b = s0[0], plane = s0[2] * s0[3];
  Tensor<S> out({b, ctot, s0[2], s0[3]}, rec);
  int64_t coff = 0;
  for (const auto& p : parts) {
    const int64_t c = p.extent(1);
    for (int64_t i = 0; i < b; ++i)
      std::memcpy(out.data() + (i * ctot + coff) * plane, p.data() + i * c * plane,
                  size_t(c * plane) * sizeof(S));
    coff += c;
  }
  if (rec)
    record<S>(out, [parts, out, b, ctot, plane]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      int64_t coff = 0;
      for (auto& p : parts) {
        const int64_t c = p.extent(1);
        if (p.requires_grad()) {
          S* gp = p.grad();
          for (int64_t i = 0; i < b; ++i) {
            const S* src = go + (i * ctot + coff) * plane;
            S* dst = gp + i * c * plane;
            for (int64_t j = 0; j < c * plane; ++j) dst[j] += src[j];
          }
        }
        coff += c;
      }
    });
  return out;
}

template <typename S>
Tensor<S> warp_coords(const Tensor<S>& u, const Tensor<S>& base, S inv_stride) {
  check_dim(u.rank() == 3 && base.rank() == 2 && u.extent(1) == base.extent(0) && u.extent(2) == base.extent(1),
            "warp_coords: u [t,n,k] must match base [n,k]");
  const int64_t t = u.extent(0), n = u.extent(1), k = u.extent(2);
  const bool rec = rec_needed<S>({&u});
  Tensor<S> out(u.shape(), rec);
  const S* pu = u.data();
  const S* pb = base.data();
  S* po = out.data();
  for (int64_t f = 0; f < t; ++f)
    for (int64_t i = 0; i < n * k; ++i) po[f * n * k + i] = pb[i] + pu[f * n * k + i] * inv_stride;
  if (rec)
    record<S>(out, [u, out, inv_stride]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gu = u.grad();
      const int64_t m = out.numel();
      for (int64_t i = 0; i < m; ++i) gu[i] += go[i] * inv_stride;
    });
  return out;
}

#define WT_INSTANTIATE_ELEMENTWISE(S)                                                              \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                                \
  template Tensor<S> relu<S>(const Tensor<S>&);                                                    \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                                 \
  template Tensor<S> bias_add<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> concat_channels<S>(const std::vector<Tensor<S>>&);                            \
  template Tensor<S> slice_channels<S>(const Tensor<S>&, int64_t, int64_t);                        \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                          \
  template Tensor<S> swap_axes01<S>(const Tensor<S>&);                                             \
  template Tensor<S> zero_row0<S>(const Tensor<S>&);                                               \
  template Tensor<S> drop_row0<S>(const Tensor<S>&);                                               \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                     \
  template Tensor<S> mean<S>(const Tensor<S>&);                                                    \
  template Tensor<S> stride_slice2d<S>(const Tensor<S>&, int);                                     \
  template Tensor<S> channels_last<S>(const Tensor<S>&);                                           \
  template Tensor<S> take_row0<S>(const Tensor<S>&);                                               \
  template Tensor<S> broadcast_row0<S>(const Tensor<S>&);                                          \
  template Tensor<S> concat_planes<S>(const std::vector<Tensor<S>>&);                              \
  template Tensor<S> warp_coords<S>(const Tensor<S>&, const Tensor<S>&, S);

WT_INSTANTIATE_ELEMENTWISE(float)
WT_INSTANTIATE_ELEMENTWISE(double)

}  // namespace warptrack
