#include "ops_common.hpp"

namespace warptrack {

using detail::CMapM;
using detail::MapM;
using detail::out_grad;
using detail::rec_needed;
using detail::record;

namespace {

// cols[(ci*kh+dy)*kw+dx, oy*wo+ox] = x[ci, oy*s+dy-pad, ox*s+dx-pad] (0 outside)
template <typename S>
void im2col(const S* x, S* cols, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t ho, int64_t wo,
            int stride, int pad) {
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t dy = 0; dy < kh; ++dy)
      for (int64_t dx = 0; dx < kw; ++dx) {
        S* row = cols + ((c * kh + dy) * kw + dx) * (ho * wo);
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= h) {
            std::memset(row + oy * wo, 0, size_t(wo) * sizeof(S));
            continue;
          }
          const S* src = x + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride + dx - pad;
            row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(S* x, const S* cols, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t ho,
                int64_t wo, int stride, int pad) {
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t dy = 0; dy < kh; ++dy)
      for (int64_t dx = 0; dx < kw; ++dx) {
        const S* row = cols + ((c * kh + dy) * kw + dx) * (ho * wo);
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= h) continue;
          S* dst = x + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride + dx - pad;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
          }
        }
      }
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
  check_dim(x.rank() == 3 || x.rank() == 4, "conv2d: expected [ci,h,w] or [b,ci,h,w]");
  check_dim(w.rank() == 4, "conv2d: weight must be [co,ci,kh,kw]");
  const bool batched = x.rank() == 4;
  const int64_t bs = batched ? x.extent(0) : 1;
  const int64_t ci = x.extent(batched ? 1 : 0), h = x.extent(batched ? 2 : 1), ww = x.extent(batched ? 3 : 2);
  const int64_t co = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  check_dim(w.extent(1) == ci, "conv2d: channel mismatch, input " + std::to_string(ci) + " vs weight " +
                                   std::to_string(w.extent(1)));
  check_dim(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (ww + 2 * pad - kw) / stride + 1;
  check_dim(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");
  if (b.defined()) check_dim(b.rank() == 1 && b.extent(0) == co, "conv2d: bad bias shape");
  Shape os = batched ? Shape{bs, co, ho, wo} : Shape{co, ho, wo};
  const bool rec = rec_needed<S>({&x, &w, &b});
  Tensor<S> out(os, rec);
  const int64_t ckk = ci * kh * kw;
  {
    detail::Buffer<S> cols(ckk * ho * wo, false);
    CMapM<S> W(w.data(), co, ckk);
    for (int64_t im = 0; im < bs; ++im) {
      im2col(x.data() + im * ci * h * ww, cols.data(), ci, h, ww, kh, kw, ho, wo, stride, pad);
      CMapM<S> C(cols.data(), ckk, ho * wo);
      MapM<S> O(out.data() + im * co * ho * wo, co, ho * wo);
      O.noalias() = W * C;
      if (b.defined()) O.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.data(), co);
    }
  }
  if (rec)
    record<S>(out, [x, w, b, out, bs, ci, h, ww, co, kh, kw, ho, wo, stride, pad, ckk]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      detail::Buffer<S> cols(ckk * ho * wo, false);
      for (int64_t im = 0; im < bs; ++im) {
        CMapM<S> GO(go + im * co * ho * wo, co, ho * wo);
        if (w.requires_grad()) {
          im2col(x.data() + im * ci * h * ww, cols.data(), ci, h, ww, kh, kw, ho, wo, stride, pad);
          CMapM<S> C(cols.data(), ckk, ho * wo);
          MapM<S> GW(w.grad(), co, ckk);
          GW.noalias() += GO * C.transpose();
        }
        if (x.requires_grad()) {
          MapM<S> DC(cols.data(), ckk, ho * wo);
          CMapM<S> W(w.data(), co, ckk);
          DC.noalias() = W.transpose() * GO;
          col2im_add(x.grad() + im * ci * h * ww, cols.data(), ci, h, ww, kh, kw, ho, wo, stride, pad);
        }
        if (b.defined() && b.requires_grad()) {
          Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> GB(b.grad(), co);
          GB += GO.rowwise().sum();
        }
      }
    });
  return out;
}

template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
  check_dim(x.rank() == 3 || x.rank() == 4, "conv_transpose2d: expected [ci,h,w] or [b,ci,h,w]");
  check_dim(w.rank() == 4, "conv_transpose2d: weight must be [ci,co,kh,kw]");
  const bool batched = x.rank() == 4;
  const int64_t bs = batched ? x.extent(0) : 1;
  const int64_t ci = x.extent(batched ? 1 : 0), hi = x.extent(batched ? 2 : 1), wi = x.extent(batched ? 3 : 2);
  const int64_t co = w.extent(1), kh = w.extent(2), kw = w.extent(3);
  check_dim(w.extent(0) == ci, "conv_transpose2d: channel mismatch");
  const int64_t ho = (hi - 1) * stride - 2 * pad + kh;
  const int64_t wo = (wi - 1) * stride - 2 * pad + kw;
  check_dim(ho >= 1 && wo >= 1, "conv_transpose2d: empty output");
  if (b.defined()) check_dim(b.rank() == 1 && b.extent(0) == co, "conv_transpose2d: bad bias shape");
  Shape os = batched ? Shape{bs, co, ho, wo} : Shape{co, ho, wo};
  const bool rec = rec_needed<S>({&x, &w, &b});
  Tensor<S> out(os, rec);
  const int64_t ckk = co * kh * kw;
  {
    detail::Buffer<S> tmp(ckk * hi * wi, false);
    CMapM<S> W(w.data(), ci, ckk);
    for (int64_t im = 0; im < bs; ++im) {
      CMapM<S> X(x.data() + im * ci * hi * wi, ci, hi * wi);
      MapM<S> T(tmp.data(), ckk, hi * wi);
      T.noalias() = W.transpose() * X;
      // scatter taps: out[co, iy*s+dy-pad, ix*s+dx-pad] += tmp
      S* of = out.data() + im * co * ho * wo;
      col2im_add(of, tmp.data(), co, ho, wo, kh, kw, hi, wi, stride, pad);
      if (b.defined()) {
        const S* pb = b.data();
        for (int64_t c = 0; c < co; ++c) {
          S* dst = of + c * ho * wo;
          for (int64_t i = 0; i < ho * wo; ++i) dst[i] += pb[c];
        }
      }
    }
  }
  if (rec)
    record<S>(out, [x, w, b, out, bs, ci, hi, wi, co, kh, kw, ho, wo, stride, pad, ckk]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      detail::Buffer<S> dtmp(ckk * hi * wi, false);
      for (int64_t im = 0; im < bs; ++im) {
        const S* gof = go + im * co * ho * wo;
        // gather taps of the output grad (adjoint of the forward scatter)
        im2col(gof, dtmp.data(), co, ho, wo, kh, kw, hi, wi, stride, pad);
        CMapM<S> DT(dtmp.data(), ckk, hi * wi);
        if (x.requires_grad()) {
          MapM<S> GX(x.grad() + im * ci * hi * wi, ci, hi * wi);
          CMapM<S> W(w.data(), ci, ckk);
          GX.noalias() += W * DT;
        }
        if (w.requires_grad()) {
          CMapM<S> X(x.data() + im * ci * hi * wi, ci, hi * wi);
          MapM<S> GW(w.grad(), ci, ckk);
          GW.noalias() += X * DT.transpose();
        }
        if (b.defined() && b.requires_grad()) {
          S* gb = b.grad();
          for (int64_t c = 0; c < co; ++c) {
            S acc = S(0);
            const S* src = gof + c * ho * wo;
            for (int64_t i = 0; i < ho * wo; ++i) acc += src[i];
            gb[c] += acc;
          }
        }
      }
    });
  return out;
}

namespace {
inline int64_t reflect_index(int64_t i, int64_t n) {
  // mirror without edge repeat, valid while |pad| < n
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}
}  // namespace

template <typename S>
Tensor<S> reflect_pad2d(const Tensor<S>& x, int left, int right, int top, int bottom) {
  check_dim(x.rank() == 3 || x.rank() == 4, "reflect_pad2d: expected [c,h,w] or [b,c,h,w]");
  const bool batched = x.rank() == 4;
  const int64_t planes = batched ? x.extent(0) * x.extent(1) : x.extent(0);
  const int64_t h = x.extent(batched ? 2 : 1), w = x.extent(batched ? 3 : 2);
  check_dim(left >= 0 && right >= 0 && top >= 0 && bottom >= 0, "reflect_pad2d: negative pad");
  check_dim(left < w && right < w && top < h && bottom < h, "reflect_pad2d: pad must be smaller than extent");
  const int64_t ho = h + top + bottom, wo = w + left + right;
  Shape os = x.shape();
  os[os.size() - 2] = ho;
  os[os.size() - 1] = wo;
  const bool rec = rec_needed<S>({&x});
  Tensor<S> out(os, rec);
  const S* px = x.data();
  S* po = out.data();
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t oy = 0; oy < ho; ++oy) {
      const int64_t iy = reflect_index(oy - top, h);
      const S* src = px + (p * h + iy) * w;
      S* dst = po + (p * ho + oy) * wo;
      for (int64_t ox = 0; ox < wo; ++ox) dst[ox] = src[reflect_index(ox - left, w)];
    }
  if (rec)
    record<S>(out, [x, out, planes, h, w, ho, wo, left, top]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gx = x.grad();
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = reflect_index(oy - top, h);
          S* dst = gx + (p * h + iy) * w;
          const S* src = go + (p * ho + oy) * wo;
          for (int64_t ox = 0; ox < wo; ++ox) dst[reflect_index(ox - left, w)] += src[ox];
        }
    });
  return out;
}

#define WT_INSTANTIATE_CONV(S)                                                                        \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);      \
  template Tensor<S> conv_transpose2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int); \
  template Tensor<S> reflect_pad2d<S>(const Tensor<S>&, int, int, int, int);

WT_INSTANTIATE_CONV(float)
WT_INSTANTIATE_CONV(double)

}  // namespace warptrack
