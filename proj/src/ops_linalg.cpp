#include <cmath>

#include "ops_common.hpp"

namespace warptrack {

using detail::CMapM;
using detail::COStrideMapM;
using detail::MapM;
using detail::OStrideMapM;
using detail::out_grad;
using detail::rec_needed;
using detail::record;
using detail::RowMat;

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_dim(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 inputs");
  check_dim(a.extent(1) == b.extent(0),
            "matmul: inner extents disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  const bool rec = rec_needed<S>({&a, &b});
  Tensor<S> out({m, n}, rec);
  CMapM<S> A(a.data(), m, k), B(b.data(), k, n);
  MapM<S> C(out.data(), m, n);
  C.noalias() = A * B;
  if (rec)
    record<S>(out, [a, b, out, m, k, n]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      CMapM<S> GC(go, m, n);
      if (a.requires_grad()) {
        MapM<S> GA(a.grad(), m, k);
        CMapM<S> B(b.data(), k, n);
        GA.noalias() += GC * B.transpose();
      }
      if (b.requires_grad()) {
        MapM<S> GB(b.grad(), k, n);
        CMapM<S> A(a.data(), m, k);
        GB.noalias() += A.transpose() * GC;
      }
    });
  return out;
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  check_dim(x.rank() >= 1 && w.rank() == 2, "linear: expected x [..,d], w [d,e]");
  const int64_t d = x.shape().back();
  check_dim(w.extent(0) == d, "linear: weight rows " + std::to_string(w.extent(0)) + " != input channels " +
                                  std::to_string(d));
  const int64_t e = w.extent(1);
  const int64_t rows = x.numel() / d;
  if (b.defined()) check_dim(b.rank() == 1 && b.extent(0) == e, "linear: bad bias shape");
  Shape os = x.shape();
  os.back() = e;
  const bool rec = rec_needed<S>({&x, &w, &b});
  Tensor<S> out(os, rec);
  CMapM<S> X(x.data(), rows, d), W(w.data(), d, e);
  MapM<S> O(out.data(), rows, e);
  O.noalias() = X * W;
  if (b.defined()) O.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data(), e);
  if (rec)
    record<S>(out, [x, w, b, out, rows, d, e]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      CMapM<S> GO(go, rows, e);
      if (x.requires_grad()) {
        MapM<S> GX(x.grad(), rows, d);
        CMapM<S> W(w.data(), d, e);
        GX.noalias() += GO * W.transpose();
      }
      if (w.requires_grad()) {
        MapM<S> GW(w.grad(), d, e);
        CMapM<S> X(x.data(), rows, d);
        GW.noalias() += X.transpose() * GO;
      }
      if (b.defined() && b.requires_grad()) {
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> GB(b.grad(), e);
        GB += GO.colwise().sum();
      }
    });
  return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  check_dim(x.rank() >= 1, "layer_norm: rank must be >= 1");
  const int64_t c = x.shape().back();
  check_dim(c > 0, "layer_norm: empty channel axis");
  check_dim(gain.rank() == 1 && gain.extent(0) == c && bias.rank() == 1 && bias.extent(0) == c,
            "layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  check_dim(eps > S(0), "layer_norm: eps must be positive");
  const int64_t rows = x.numel() / c;
  const bool rec = rec_needed<S>({&x, &gain, &bias});
  Tensor<S> out(x.shape(), rec);
  // inv std per row is retained for backward
  auto inv_std = std::make_shared<std::vector<S>>();
  auto means = std::make_shared<std::vector<S>>();
  if (rec) {
    inv_std->resize(size_t(rows));
    means->resize(size_t(rows));
  }
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pb = bias.data();
  S* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = px + r * c;
    S mu = S(0);
    for (int64_t j = 0; j < c; ++j) mu += xr[j];
    mu /= S(c);
    S var = S(0);
    for (int64_t j = 0; j < c; ++j) {
      const S d = xr[j] - mu;
      var += d * d;
    }
    var /= S(c);
    const S inv = S(1) / std::sqrt(var + eps);
    if (rec) {
      (*inv_std)[size_t(r)] = inv;
      (*means)[size_t(r)] = mu;
    }
    S* orow = po + r * c;
    for (int64_t j = 0; j < c; ++j) orow[j] = (xr[j] - mu) * inv * pg[j] + pb[j];
  }
  if (rec)
    record<S>(out, [x, gain, bias, out, rows, c, inv_std, means]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const S* px = x.data();
      const S* pg = gain.data();
      S* gx = x.requires_grad() ? x.grad() : nullptr;
      S* gg = gain.requires_grad() ? gain.grad() : nullptr;
      S* gb = bias.requires_grad() ? bias.grad() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const S* xr = px + r * c;
        const S* gor = go + r * c;
        const S inv = (*inv_std)[size_t(r)];
        const S mu = (*means)[size_t(r)];
        if (gg || gb) {
          for (int64_t j = 0; j < c; ++j) {
            if (gg) gg[j] += gor[j] * (xr[j] - mu) * inv;
            if (gb) gb[j] += gor[j];
          }
        }
        if (gx) {
          // dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
          S sum_dxh = S(0), sum_dxh_xh = S(0);
          for (int64_t j = 0; j < c; ++j) {
            const S xh = (xr[j] - mu) * inv;
            const S dxh = gor[j] * pg[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
          }
          const S m1 = sum_dxh / S(c), m2 = sum_dxh_xh / S(c);
          S* gxr = gx + r * c;
          for (int64_t j = 0; j < c; ++j) {
            const S xh = (xr[j] - mu) * inv;
            const S dxh = gor[j] * pg[j];
            gxr[j] += inv * (dxh - m1 - xh * m2);
          }
        }
      }
    });
  return out;
}

namespace {

// shared attention kernel over b slices and h heads; layouts [b,n,h*dh]
template <typename S>
Tensor<S> attention_impl(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int64_t bs, int64_t n,
                         int64_t d, int heads, Shape out_shape) {
  check_dim(d % heads == 0, "attention: model dim " + std::to_string(d) + " not divisible by heads");
  const int64_t dh = d / heads;
  const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));
  const bool rec = rec_needed<S>({&q, &k, &v});
  Tensor<S> out(std::move(out_shape), rec);
  // softmax probabilities retained for backward: [bs*heads, n, n]
  std::shared_ptr<std::vector<S>> probs;
  if (rec) probs = std::make_shared<std::vector<S>>(size_t(bs * heads * n * n));
  RowMat<S> sc(n, n);
  for (int64_t b = 0; b < bs; ++b) {
    for (int h = 0; h < heads; ++h) {
      const int64_t off = b * n * d + h * dh;
      COStrideMapM<S> Q(q.data() + off, n, dh, Eigen::OuterStride<>(d));
      COStrideMapM<S> K(k.data() + off, n, dh, Eigen::OuterStride<>(d));
      COStrideMapM<S> V(v.data() + off, n, dh, Eigen::OuterStride<>(d));
      sc.noalias() = Q * K.transpose();
      sc *= inv_sqrt;
      // stable rowwise softmax, vectorized
      const Eigen::Array<S, Eigen::Dynamic, 1> mx = sc.array().rowwise().maxCoeff();
      sc.array().colwise() -= mx;
      sc.array() = sc.array().exp();
      const Eigen::Array<S, Eigen::Dynamic, 1> tot = sc.array().rowwise().sum();
      sc.array().colwise() /= tot;
      if (rec) std::memcpy(probs->data() + size_t((b * heads + h) * n * n), sc.data(), size_t(n * n) * sizeof(S));
      OStrideMapM<S> O(out.data() + off, n, dh, Eigen::OuterStride<>(d));
      O.noalias() = sc * V;
    }
  }
  if (rec)
    record<S>(out, [q, k, v, out, probs, bs, n, d, dh, heads, inv_sqrt]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      RowMat<S> dP(n, n), dS(n, n);
      for (int64_t b = 0; b < bs; ++b) {
        for (int h = 0; h < heads; ++h) {
          const int64_t off = b * n * d + h * dh;
          CMapM<S> P(probs->data() + (b * heads + h) * n * n, n, n);
          COStrideMapM<S> GO(go + off, n, dh, Eigen::OuterStride<>(d));
          COStrideMapM<S> Q(q.data() + off, n, dh, Eigen::OuterStride<>(d));
          COStrideMapM<S> K(k.data() + off, n, dh, Eigen::OuterStride<>(d));
          COStrideMapM<S> V(v.data() + off, n, dh, Eigen::OuterStride<>(d));
          if (v.requires_grad()) {
            OStrideMapM<S> GV(v.grad() + off, n, dh, Eigen::OuterStride<>(d));
            GV.noalias() += P.transpose() * GO;
          }
          if (q.requires_grad() || k.requires_grad()) {
            dP.noalias() = GO * V.transpose();
            // softmax adjoint row-by-row
            for (int64_t i = 0; i < n; ++i) {
              S dot = S(0);
              for (int64_t j = 0; j < n; ++j) dot += dP(i, j) * P(i, j);
              for (int64_t j = 0; j < n; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot) * inv_sqrt;
            }
            if (q.requires_grad()) {
              OStrideMapM<S> GQ(q.grad() + off, n, dh, Eigen::OuterStride<>(d));
              GQ.noalias() += dS * K;
            }
            if (k.requires_grad()) {
              OStrideMapM<S> GK(k.grad() + off, n, dh, Eigen::OuterStride<>(d));
              GK.noalias() += dS.transpose() * Q;
            }
          }
        }
      }
    });
  return out;
}

}  // namespace

template <typename S>
Tensor<S> softmax_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
  check_dim(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "softmax_attention: expected [n,d] inputs");
  check_dim(q.shape() == k.shape() && k.shape() == v.shape(), "softmax_attention: q/k/v shapes must match");
  check_dim(q.extent(0) >= 1, "softmax_attention: need at least one token");
  return attention_impl(q, k, v, 1, q.extent(0), q.extent(1), 1, q.shape());
}

template <typename S>
Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads) {
  check_dim(q.rank() == 3 && q.shape() == k.shape() && k.shape() == v.shape(),
            "attention: expected matching [b,n,d] inputs");
  return attention_impl(q, k, v, q.extent(0), q.extent(1), q.extent(2), heads, q.shape());
}

namespace {

template <typename S>
void gather_patches(const S* z, S* buf, int64_t wc, int64_t cz, int64_t hp, int64_t wp, int patch) {
  // buf row (py*wp+px) gets cells (py*p+dy, px*p+dx) in (dy,dx,channel) order
  for (int64_t py = 0; py < hp; ++py)
    for (int64_t px = 0; px < wp; ++px) {
      S* row = buf + (py * wp + px) * (patch * patch * cz);
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx) {
          const int64_t cell = (py * patch + dy) * wc + (px * patch + dx);
          std::memcpy(row + (dy * patch + dx) * cz, z + cell * cz, size_t(cz) * sizeof(S));
        }
    }
}

template <typename S>
void scatter_patches_add(S* z, const S* buf, int64_t wc, int64_t cz, int64_t hp, int64_t wp, int patch) {
  for (int64_t py = 0; py < hp; ++py)
    for (int64_t px = 0; px < wp; ++px) {
      const S* row = buf + (py * wp + px) * (patch * patch * cz);
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx) {
          const int64_t cell = (py * patch + dy) * wc + (px * patch + dx);
          const S* src = row + (dy * patch + dx) * cz;
          S* dst = z + cell * cz;
          for (int64_t j = 0; j < cz; ++j) dst[j] += src[j];
        }
    }
}

}  // namespace

template <typename S>
Tensor<S> patchify_project(const Tensor<S>& z, const Tensor<S>& w, const Tensor<S>& b, int hc, int wc, int patch) {
  check_dim(z.rank() == 3, "patchify_project: expected [t,n,c]");
  const int64_t t = z.extent(0), n = z.extent(1), cz = z.extent(2);
  check_dim(n == int64_t(hc) * wc, "patchify_project: cell count mismatch");
  check_dim(hc % patch == 0 && wc % patch == 0, "patchify_project: grid not divisible by patch");
  const int64_t hp = hc / patch, wp = wc / patch, np = hp * wp;
  const int64_t in_dim = int64_t(patch) * patch * cz;
  check_dim(w.rank() == 2 && w.extent(0) == in_dim, "patchify_project: weight rows must be patch^2*channels");
  const int64_t e = w.extent(1);
  check_dim(b.rank() == 1 && b.extent(0) == e, "patchify_project: bad bias");
  const bool rec = rec_needed<S>({&z, &w, &b});
  Tensor<S> out({t, np, e}, rec);
  {
    detail::Buffer<S> buf(np * in_dim, false);
    CMapM<S> W(w.data(), in_dim, e);
    for (int64_t f = 0; f < t; ++f) {
      gather_patches(z.data() + f * n * cz, buf.data(), wc, cz, hp, wp, patch);
      CMapM<S> B(buf.data(), np, in_dim);
      MapM<S> O(out.data() + f * np * e, np, e);
      O.noalias() = B * W;
      O.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data(), e);
    }
  }
  if (rec)
    record<S>(out, [z, w, b, out, t, n, cz, hp, wp, np, in_dim, e, wc, patch]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      detail::Buffer<S> buf(np * in_dim, false);
      detail::Buffer<S> dbuf(np * in_dim, false);
      CMapM<S> W(w.data(), in_dim, e);
      for (int64_t f = 0; f < t; ++f) {
        CMapM<S> GO(go + f * np * e, np, e);
        if (z.requires_grad()) {
          MapM<S> DB(dbuf.data(), np, in_dim);
          DB.noalias() = GO * W.transpose();
          scatter_patches_add(z.grad() + f * n * cz, dbuf.data(), wc, cz, hp, wp, patch);
        }
        if (w.requires_grad()) {
          gather_patches(z.data() + f * n * cz, buf.data(), wc, cz, hp, wp, patch);
          CMapM<S> B(buf.data(), np, in_dim);
          MapM<S> GW(w.grad(), in_dim, e);
          GW.noalias() += B.transpose() * GO;
        }
        if (b.requires_grad()) {
          Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> GB(b.grad(), e);
          GB += GO.colwise().sum();
        }
      }
    });
  return out;
}

template <typename S>
Tensor<S> unpatchify_project(const Tensor<S>& tok, const Tensor<S>& w, const Tensor<S>& b, int hc, int wc,
                             int patch, int out_ch) {
  check_dim(tok.rank() == 3, "unpatchify_project: expected [t,np,e]");
  const int64_t t = tok.extent(0), np = tok.extent(1), e = tok.extent(2);
  const int64_t hp = hc / patch, wp = wc / patch;
  check_dim(hc % patch == 0 && wc % patch == 0 && np == hp * wp, "unpatchify_project: patch grid mismatch");
  const int64_t od = int64_t(patch) * patch * out_ch;
  check_dim(w.rank() == 2 && w.extent(0) == e && w.extent(1) == od, "unpatchify_project: bad weight shape");
  check_dim(b.rank() == 1 && b.extent(0) == od, "unpatchify_project: bad bias");
  const int64_t n = int64_t(hc) * wc;
  const bool rec = rec_needed<S>({&tok, &w, &b});
  Tensor<S> out({t, n, int64_t(out_ch)}, rec);
  {
    detail::Buffer<S> r(np * od, false);
    CMapM<S> W(w.data(), e, od);
    for (int64_t f = 0; f < t; ++f) {
      CMapM<S> T(tok.data() + f * np * e, np, e);
      MapM<S> R(r.data(), np, od);
      R.noalias() = T * W;
      R.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data(), od);
      // r rows are per-patch (dy,dx,channel); spread to cells
      S* of = out.data() + f * n * out_ch;
      for (int64_t py = 0; py < hp; ++py)
        for (int64_t px = 0; px < wp; ++px) {
          const S* row = r.data() + (py * wp + px) * od;
          for (int dy = 0; dy < patch; ++dy)
            for (int dx = 0; dx < patch; ++dx) {
              const int64_t cell = (py * patch + dy) * wc + (px * patch + dx);
              std::memcpy(of + cell * out_ch, row + (int64_t(dy) * patch + dx) * out_ch,
                          size_t(out_ch) * sizeof(S));
            }
        }
    }
  }
  if (rec)
    record<S>(out, [tok, w, b, out, t, np, e, hp, wp, od, n, wc, patch, out_ch]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      detail::Buffer<S> dr(np * od, false);
      CMapM<S> W(w.data(), e, od);
      for (int64_t f = 0; f < t; ++f) {
        // gather per-patch grads back into dr
        const S* gf = go + f * n * out_ch;
        for (int64_t py = 0; py < hp; ++py)
          for (int64_t px = 0; px < wp; ++px) {
            S* row = dr.data() + (py * wp + px) * od;
            for (int dy = 0; dy < patch; ++dy)
              for (int dx = 0; dx < patch; ++dx) {
                const int64_t cell = (py * patch + dy) * wc + (px * patch + dx);
                std::memcpy(row + (int64_t(dy) * patch + dx) * out_ch, gf + cell * out_ch,
                            size_t(out_ch) * sizeof(S));
              }
          }
        CMapM<S> DR(dr.data(), np, od);
        if (tok.requires_grad()) {
          MapM<S> GT(tok.grad() + f * np * e, np, e);
          GT.noalias() += DR * W.transpose();
        }
        if (w.requires_grad()) {
          CMapM<S> T(tok.data() + f * np * e, np, e);
          MapM<S> GW(w.grad(), e, od);
          GW.noalias() += T.transpose() * DR;
        }
        if (b.requires_grad()) {
          Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> GB(b.grad(), od);
          GB += DR.colwise().sum();
        }
      }
    });
  return out;
}

#define WT_INSTANTIATE_LINALG(S)                                                                       \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);           \
  template Tensor<S> softmax_attention<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template Tensor<S> attention<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int);          \
  template Tensor<S> patchify_project<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int, int); \
  template Tensor<S> unpatchify_project<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int, int, int);

WT_INSTANTIATE_LINALG(float)
WT_INSTANTIATE_LINALG(double)

}  // namespace warptrack
