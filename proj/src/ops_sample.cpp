#include <cmath>

#include "ops_common.hpp"

namespace warptrack {

using detail::out_grad;
using detail::rec_needed;
using detail::record;

namespace {

struct Taps {
  int64_t x0, x1, y0, y1;
  double fx, fy;
  bool x_free, y_free;  // clamp kills the coordinate gradient
};

inline Taps make_taps(double x, double y, int64_t w, int64_t h) {
  Taps t;
  t.x_free = x > 0.0 && x < double(w - 1);
  t.y_free = y > 0.0 && y < double(h - 1);
  const double xc = std::min(std::max(x, 0.0), double(w - 1));
  const double yc = std::min(std::max(y, 0.0), double(h - 1));
  t.x0 = int64_t(std::floor(xc));
  t.y0 = int64_t(std::floor(yc));
  if (t.x0 > w - 1) t.x0 = w - 1;
  if (t.y0 > h - 1) t.y0 = h - 1;
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = xc - double(t.x0);
  t.fy = yc - double(t.y0);
  return t;
}

// forward taps for one point over all channels; strides are per-channel plane
template <typename S>
inline void sample_point(const S* f, int64_t c, int64_t plane, int64_t w, const Taps& t, S* dst) {
  const S wx1 = S(t.fx), wx0 = S(1) - wx1;
  const S wy1 = S(t.fy), wy0 = S(1) - wy1;
  const S w00 = wx0 * wy0, w01 = wx1 * wy0, w10 = wx0 * wy1, w11 = wx1 * wy1;
  const int64_t i00 = t.y0 * w + t.x0, i01 = t.y0 * w + t.x1, i10 = t.y1 * w + t.x0, i11 = t.y1 * w + t.x1;
  for (int64_t ch = 0; ch < c; ++ch) {
    const S* p = f + ch * plane;
    dst[ch] = w00 * p[i00] + w01 * p[i01] + w10 * p[i10] + w11 * p[i11];
  }
}

template <typename S>
inline void sample_point_backward(const S* f, S* gf, S* gcoord, const S* gout, int64_t c, int64_t plane, int64_t w,
                                  const Taps& t) {
  const S wx1 = S(t.fx), wx0 = S(1) - wx1;
  const S wy1 = S(t.fy), wy0 = S(1) - wy1;
  const S w00 = wx0 * wy0, w01 = wx1 * wy0, w10 = wx0 * wy1, w11 = wx1 * wy1;
  const int64_t i00 = t.y0 * w + t.x0, i01 = t.y0 * w + t.x1, i10 = t.y1 * w + t.x0, i11 = t.y1 * w + t.x1;
  S gx = S(0), gy = S(0);
  for (int64_t ch = 0; ch < c; ++ch) {
    const S g = gout[ch];
    if (gf) {
      S* p = gf + ch * plane;
      p[i00] += g * w00;
      p[i01] += g * w01;
      p[i10] += g * w10;
      p[i11] += g * w11;
    }
    if (gcoord) {
      const S* p = f + ch * plane;
      gx += g * (wy0 * (p[i01] - p[i00]) + wy1 * (p[i11] - p[i10]));
      gy += g * (wx0 * (p[i10] - p[i00]) + wx1 * (p[i11] - p[i01]));
    }
  }
  if (gcoord) {
    if (t.x_free) gcoord[0] += gx;
    if (t.y_free) gcoord[1] += gy;
  }
}

}  // namespace

template <typename S>
Tensor<S> bilinear_sample(const Tensor<S>& f, const Tensor<S>& coords) {
  check_dim(f.rank() == 3, "bilinear_sample: field must be [c,h,w]");
  check_dim(coords.rank() == 2 && coords.extent(1) == 2, "bilinear_sample: coords must be [n,2]");
  const int64_t c = f.extent(0), h = f.extent(1), w = f.extent(2);
  const int64_t n = coords.extent(0);
  const S* pc = coords.data();
  for (int64_t i = 0; i < 2 * n; ++i)
    if (!std::isfinite(double(pc[i]))) fail_numeric("bilinear_sample: non-finite coordinate at point " +
                                                    std::to_string(i / 2));
  const bool rec = rec_needed<S>({&f, &coords});
  Tensor<S> out({n, c}, rec);
  S* po = out.data();
  const int64_t plane = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const Taps t = make_taps(double(pc[2 * i]), double(pc[2 * i + 1]), w, h);
    sample_point(f.data(), c, plane, w, t, po + i * c);
  }
  if (rec)
    record<S>(out, [f, coords, out, c, h, w, n, plane]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const S* pc = coords.data();
      S* gf = f.requires_grad() ? f.grad() : nullptr;
      S* gc = coords.requires_grad() ? coords.grad() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        const Taps t = make_taps(double(pc[2 * i]), double(pc[2 * i + 1]), w, h);
        sample_point_backward(f.data(), gf, gc ? gc + 2 * i : nullptr, go + i * c, c, plane, w, t);
      }
    });
  return out;
}

template <typename S>
Tensor<S> warp_gather(const Tensor<S>& f, const Tensor<S>& coords) {
  check_dim(f.rank() == 4, "warp_gather: field must be [t,c,h,w]");
  check_dim(coords.rank() == 3 && coords.extent(2) == 2 && coords.extent(0) == f.extent(0),
            "warp_gather: coords must be [t,n,2] matching the field frames");
  const int64_t tt = f.extent(0), c = f.extent(1), h = f.extent(2), w = f.extent(3);
  const int64_t n = coords.extent(1);
  const S* pc = coords.data();
  for (int64_t i = 0; i < tt * n * 2; ++i)
    if (!std::isfinite(double(pc[i]))) fail_numeric("warp_gather: non-finite coordinate");
  const bool rec = rec_needed<S>({&f, &coords});
  Tensor<S> out({tt, n, c}, rec);
  const int64_t plane = h * w;
  for (int64_t fr = 0; fr < tt; ++fr) {
    const S* ff = f.data() + fr * c * plane;
    const S* cf = pc + fr * n * 2;
    S* of = out.data() + fr * n * c;
    for (int64_t i = 0; i < n; ++i) {
      const Taps t = make_taps(double(cf[2 * i]), double(cf[2 * i + 1]), w, h);
      sample_point(ff, c, plane, w, t, of + i * c);
    }
  }
  if (rec)
    record<S>(out, [f, coords, out, tt, c, h, w, n, plane]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const S* pc = coords.data();
      S* gf = f.requires_grad() ? f.grad() : nullptr;
      S* gc = coords.requires_grad() ? coords.grad() : nullptr;
      for (int64_t fr = 0; fr < tt; ++fr) {
        const S* ff = f.data() + fr * c * plane;
        const S* cf = pc + fr * n * 2;
        S* gff = gf ? gf + fr * c * plane : nullptr;
        S* gcf = gc ? gc + fr * n * 2 : nullptr;
        const S* gof = go + fr * n * c;
        for (int64_t i = 0; i < n; ++i) {
          const Taps t = make_taps(double(cf[2 * i]), double(cf[2 * i + 1]), w, h);
          sample_point_backward(ff, gff, gcf ? gcf + 2 * i : nullptr, gof + i * c, c, plane, w, t);
        }
      }
    });
  return out;
}

template <typename S>
Tensor<S> assemble_tokens(const Tensor<S>& g, const Tensor<S>& f0, const Tensor<S>& u, const Tensor<S>& h) {
  check_dim(g.rank() == 3, "assemble_tokens: warped features must be [t,n,c]");
  const int64_t t = g.extent(0), n = g.extent(1), c = g.extent(2);
  check_dim(f0.rank() == 2 && f0.extent(0) == n && f0.extent(1) == c,
            "assemble_tokens: query features must be [n,c]");
  check_dim(u.rank() == 3 && u.extent(0) == t && u.extent(1) == n && u.extent(2) == 2,
            "assemble_tokens: displacements must be [t,n,2]");
  check_dim(h.rank() == 3 && h.extent(0) == t && h.extent(1) == n, "assemble_tokens: hidden must be [t,n,dh]");
  const int64_t dh = h.extent(2);
  const int64_t cz = 2 * c + 2 + dh;
  const bool rec = rec_needed<S>({&g, &f0, &u, &h});
  Tensor<S> out({t, n, cz}, rec);
  S* po = out.data();
  for (int64_t fr = 0; fr < t; ++fr)
    for (int64_t i = 0; i < n; ++i) {
      S* row = po + (fr * n + i) * cz;
      std::memcpy(row, g.data() + (fr * n + i) * c, size_t(c) * sizeof(S));
      std::memcpy(row + c, f0.data() + i * c, size_t(c) * sizeof(S));
      std::memcpy(row + 2 * c, u.data() + (fr * n + i) * 2, 2 * sizeof(S));
      std::memcpy(row + 2 * c + 2, h.data() + (fr * n + i) * dh, size_t(dh) * sizeof(S));
    }
  if (rec)
    record<S>(out, [g, f0, u, h, out, t, n, c, dh, cz]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      detail::CMapM<S> GO(go, t * n, cz);
      if (g.requires_grad()) detail::MapM<S>(g.grad(), t * n, c) += GO.leftCols(c);
      if (u.requires_grad()) detail::MapM<S>(u.grad(), t * n, 2) += GO.middleCols(2 * c, 2);
      if (h.requires_grad()) detail::MapM<S>(h.grad(), t * n, dh) += GO.rightCols(dh);
      if (f0.requires_grad()) {
        detail::MapM<S> GF0(f0.grad(), n, c);
        for (int64_t fr = 0; fr < t; ++fr) GF0 += GO.middleRows(fr * n, n).middleCols(c, c);
      }
    });
  return out;
}

template <typename S>
Tensor<S> huber(const Tensor<S>& r, S delta) {
  check_dim(delta > S(0), "huber: delta must be positive");
  const bool rec = rec_needed<S>({&r});
  Tensor<S> out(r.shape(), rec);
  const S* pr = r.data();
  S* po = out.data();
  const int64_t n = r.numel();
  for (int64_t i = 0; i < n; ++i) {
    const S a = std::abs(pr[i]);
    po[i] = a <= delta ? S(0.5) * a * a : delta * (a - S(0.5) * delta);
  }
  if (rec)
    record<S>(out, [r, out, delta]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      S* gr = r.grad();
      const S* pr = r.data();
      const int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) {
        const S v = pr[i];
        const S d = v > delta ? delta : (v < -delta ? -delta : v);
        gr[i] += go[i] * d;
      }
    });
  return out;
}

template <typename S>
Tensor<S> huber_norm_loss(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& weights, S delta) {
  check_dim(pred.rank() >= 1 && pred.shape().back() == 2, "huber_norm_loss: last axis must be 2");
  check_dim(pred.shape() == gt.shape(), "huber_norm_loss: pred/gt shape mismatch");
  const int64_t pts = pred.numel() / 2;
  check_dim(weights.numel() == pts, "huber_norm_loss: weights must have one entry per point");
  check_dim(delta > S(0), "huber_norm_loss: delta must be positive");
  const bool rec = rec_needed<S>({&pred});
  Tensor<S> out(Shape{}, rec);
  const S* pp = pred.data();
  const S* pg = gt.data();
  const S* pw = weights.data();
  double acc = 0.0;
  for (int64_t i = 0; i < pts; ++i) {
    const double dx = double(pp[2 * i] - pg[2 * i]);
    const double dy = double(pp[2 * i + 1] - pg[2 * i + 1]);
    const double r = std::sqrt(dx * dx + dy * dy);
    const double hub = r <= double(delta) ? 0.5 * r * r : double(delta) * (r - 0.5 * double(delta));
    acc += double(pw[i]) * hub;
  }
  out.data()[0] = S(acc / double(pts));
  if (rec)
    record<S>(out, [pred, gt, weights, out, pts, delta]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const S g = go[0] / S(pts);
      S* gp = pred.grad();
      const S* pp = pred.data();
      const S* pg = gt.data();
      const S* pw = weights.data();
      for (int64_t i = 0; i < pts; ++i) {
        const S dx = pp[2 * i] - pg[2 * i];
        const S dy = pp[2 * i + 1] - pg[2 * i + 1];
        const S r = std::sqrt(dx * dx + dy * dy);
        // d/dx huber(r) = min(1, delta/r) * dx; smooth at r=0
        const S f = r <= delta ? S(1) : delta / r;
        gp[2 * i] += g * pw[i] * f * dx;
        gp[2 * i + 1] += g * pw[i] * f * dy;
      }
    });
  return out;
}

template <typename S>
Tensor<S> bce_loss(const Tensor<S>& p, const Tensor<S>& target, const Tensor<S>& weights, S eps) {
  check_dim(p.shape() == target.shape(), "bce_loss: prediction/target shape mismatch");
  check_dim(weights.numel() == p.numel(), "bce_loss: weights shape mismatch");
  check_dim(eps > S(0) && eps < S(0.5), "bce_loss: eps out of range");
  const int64_t n = p.numel();
  const bool rec = rec_needed<S>({&p});
  Tensor<S> out(Shape{}, rec);
  const S* pp = p.data();
  const S* pt = target.data();
  const S* pw = weights.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double pc = std::min(std::max(double(pp[i]), double(eps)), 1.0 - double(eps));
    const double t = double(pt[i]);
    acc += double(pw[i]) * -(t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
  }
  out.data()[0] = S(acc / double(n));
  if (rec)
    record<S>(out, [p, target, weights, out, n, eps]() mutable {
      const S* go = out_grad(out);
      if (!go) return;
      const S g = go[0] / S(n);
      S* gp = p.grad();
      const S* pp = p.data();
      const S* pt = target.data();
      const S* pw = weights.data();
      for (int64_t i = 0; i < n; ++i) {
        if (pp[i] <= eps || pp[i] >= S(1) - eps) continue;  // clamp region: zero slope
        const S pc = pp[i];
        gp[i] += g * pw[i] * (pc - pt[i]) / (pc * (S(1) - pc));
      }
    });
  return out;
}

#define WT_INSTANTIATE_SAMPLE(S)                                                                        \
  template Tensor<S> bilinear_sample<S>(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> warp_gather<S>(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> assemble_tokens<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> huber<S>(const Tensor<S>&, S);                                                     \
  template Tensor<S> huber_norm_loss<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
  template Tensor<S> bce_loss<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);

WT_INSTANTIATE_SAMPLE(float)
WT_INSTANTIATE_SAMPLE(double)

}  // namespace warptrack
