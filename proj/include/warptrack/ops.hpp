#pragma once

#include <vector>

#include "warptrack/tape.hpp"
#include "warptrack/tensor.hpp"

namespace warptrack {

// Differentiable primitives. Each op computes its forward result and, when a
// tape is live and some input requires grad, records a closure implementing
// the exact adjoint. Shape violations throw invalid_argument; non-finite
// inputs where checked throw runtime_error.

// elementwise (same shape)
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S c);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);

// b broadcast over the last axis
template <typename S> Tensor<S> bias_add(const Tensor<S>& x, const Tensor<S>& b);

// [m,k]x[k,n] -> [m,n]
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// x [...,d] * w [d,e] (+ optional bias [e]); leading axes flattened
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b = {});

// normalize over the last axis, then affine
template <typename S> Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps = S(1e-5));

// softmax(q k^T / sqrt(dh)) v. Single-slice form takes [n,d] (heads=1 means
// dh=d); batched form takes [b,n,d] with d split into heads.
template <typename S> Tensor<S> softmax_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v);
template <typename S> Tensor<S> attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads);

// x [b,ci,h,w] or [ci,h,w]; w [co,ci,kh,kw]; cross-correlation,
// out extents = (in + 2*pad - k)/stride + 1
template <typename S> Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad);

// adjoint-of-conv upsampling; w [ci,co,kh,kw], out = (in-1)*stride - 2*pad + k
template <typename S> Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad);

template <typename S> Tensor<S> reflect_pad2d(const Tensor<S>& x, int left, int right, int top, int bottom);

// f [c,h,w], coords [n,2] as (x,y) with pixel centers at integers, origin
// top-left; out-of-range clamps to the border. Differentiable in f and coords.
template <typename S> Tensor<S> bilinear_sample(const Tensor<S>& f, const Tensor<S>& coords);

// per-frame bilinear gather: f [t,c,h,w], coords [t,n,2] -> [t,n,c]
template <typename S> Tensor<S> warp_gather(const Tensor<S>& f, const Tensor<S>& coords);

// token assembly g [t,n,c] ++ f0 [n,c] (broadcast over t) ++ u [t,n,2] ++ h [t,n,dh]
template <typename S> Tensor<S> assemble_tokens(const Tensor<S>& g, const Tensor<S>& f0, const Tensor<S>& u, const Tensor<S>& h);

// last-axis concat / slice
template <typename S> Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts);
template <typename S> Tensor<S> slice_channels(const Tensor<S>& x, int64_t offset, int64_t len);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> swap_axes01(const Tensor<S>& x);

// zero the t=0 slice (keeps the query row pinned)
template <typename S> Tensor<S> zero_row0(const Tensor<S>& x);

// remove the t=0 slice: [t,...] -> [t-1,...]
template <typename S> Tensor<S> drop_row0(const Tensor<S>& x);

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);

// gather every r-th cell of a [t,c,h,w] field (coarser indexing stride)
template <typename S> Tensor<S> stride_slice2d(const Tensor<S>& x, int r);

// [t,c,h,w] -> [t,h*w,c] cell-major layout
template <typename S> Tensor<S> channels_last(const Tensor<S>& x);

// copy of the t=0 slice: [t,...] -> [...]
template <typename S> Tensor<S> take_row0(const Tensor<S>& x);

// repeat the t=0 slice over every frame: out[t] = x[0]
template <typename S> Tensor<S> broadcast_row0(const Tensor<S>& x);

// concat along axis 1 of [b,c,h,w] tensors
template <typename S> Tensor<S> concat_planes(const std::vector<Tensor<S>>& parts);

// coords[t,n,k] = base[n,k] + u[t,n,k]*inv_stride (base constant)
template <typename S> Tensor<S> warp_coords(const Tensor<S>& u, const Tensor<S>& base, S inv_stride);

// fused patch embedding: z [t, hc*wc, cz] -> tokens [t, (hc/p)*(wc/p), e]
// with per-patch flattening order (cell-row, cell-col, channel).
template <typename S> Tensor<S> patchify_project(const Tensor<S>& z, const Tensor<S>& w, const Tensor<S>& b,
                                                 int hc, int wc, int patch);
// inverse layout: tokens [t, np, e] -> field [t, hc*wc, co]
template <typename S> Tensor<S> unpatchify_project(const Tensor<S>& tok, const Tensor<S>& w, const Tensor<S>& b,
                                                   int hc, int wc, int patch, int out_ch);

// elementwise huber on a residual: 0.5 r^2 for |r| <= delta, else delta*(|r| - delta/2)
template <typename S> Tensor<S> huber(const Tensor<S>& r, S delta);

// mean over all elements of weights*huber(||pred-gt||) with huber on the
// Euclidean norm of the last-axis pair; weights/gt are constants.
template <typename S> Tensor<S> huber_norm_loss(const Tensor<S>& pred, const Tensor<S>& gt, const Tensor<S>& weights, S delta);

// mean over all elements of weights*bce(clamp(p), target); target/weights constants
template <typename S> Tensor<S> bce_loss(const Tensor<S>& p, const Tensor<S>& target, const Tensor<S>& weights, S eps = S(1e-6));

}  // namespace warptrack
