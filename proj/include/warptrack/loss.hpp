#pragma once

#include "warptrack/model.hpp"

namespace warptrack {

struct LossWeights {
  double gamma = 0.8;        // per-iteration exponential base, weight gamma^(K-k)
  double lambda_occ = 0.2;   // occluded-point down-weighting in the track loss
  double lambda_vis = 1.0;
  double lambda_conf = 1.0;
  double huber_delta = 6.0;  // px
  double conf_radius = 12.0;  // px, confidence indicator radius
  double margin = 12.0;       // px, off-canvas supervision margin
};

// supervision weights per (t,p), t >= 1: 1 visible, lambda_occ occluded, 0
// when gt left the canvas beyond the margin; frame 0 is dropped
template <typename S>
Tensor<S> supervision_weights(const GroundTruth& gt, const LossWeights& w, int64_t height, int64_t width);

// sum_k gamma^(K-k) * mean_(t,p) [ w_tp * huber(||x_hat - x||) ]
template <typename S>
Tensor<S> track_loss(const std::vector<Tensor<S>>& u_iters, const GroundTruth& gt, const Tensor<S>& queries,
                     const LossWeights& w, int64_t height, int64_t width);

// iteration-weighted BCE for visibility plus confidence; the confidence
// target 1[||x_hat - x|| <= r] is recomputed per iteration and detached
template <typename S>
Tensor<S> vis_conf_loss(const std::vector<Tensor<S>>& v_iters, const std::vector<Tensor<S>>& tau_iters,
                        const std::vector<Tensor<S>>& u_iters, const GroundTruth& gt, const Tensor<S>& queries,
                        const LossWeights& w);

struct LossParts {
  double total = 0, track = 0, vis_conf = 0;
};

// convenience wrapper used by the trainer; returns the scalar loss tensor and
// its detached components
template <typename S>
std::pair<Tensor<S>, LossParts> total_loss(const TrackResult<S>& result, const GroundTruth& gt,
                                           const LossWeights& w, int64_t height, int64_t width);

}  // namespace warptrack
