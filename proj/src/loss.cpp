#include "warptrack/loss.hpp"

#include <cmath>

namespace warptrack {

namespace {

// gt displacement field relative to the query grid, frame 0 dropped
template <typename S>
Tensor<S> gt_displacements(const GroundTruth& gt, const Tensor<S>& queries) {
  const int64_t t = gt.tracks.extent(0), n = gt.tracks.extent(1);
  check_dim(queries.extent(0) == n, "loss: query count does not match ground truth");
  Tensor<S> out({t - 1, n, 2});
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      out.data()[((f - 1) * n + i) * 2] = S(gt.tracks.data()[(f * n + i) * 2]) - queries.data()[2 * i];
      out.data()[((f - 1) * n + i) * 2 + 1] =
          S(gt.tracks.data()[(f * n + i) * 2 + 1]) - queries.data()[2 * i + 1];
    }
  return out;
}

}  // namespace

template <typename S>
Tensor<S> supervision_weights(const GroundTruth& gt, const LossWeights& w, int64_t height, int64_t width) {
  const int64_t t = gt.tracks.extent(0), n = gt.tracks.extent(1);
  Tensor<S> out({t - 1, n});
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      const float x = gt.tracks.data()[(f * n + i) * 2], y = gt.tracks.data()[(f * n + i) * 2 + 1];
      const bool in_margin = x >= -w.margin && x <= double(width - 1) + w.margin && y >= -w.margin &&
                             y <= double(height - 1) + w.margin;
      const bool vis = gt.visibility.data()[f * n + i] > 0.5f;
      out.data()[(f - 1) * n + i] = !in_margin ? S(0) : (vis ? S(1) : S(w.lambda_occ));
    }
  return out;
}

template <typename S>
Tensor<S> track_loss(const std::vector<Tensor<S>>& u_iters, const GroundTruth& gt, const Tensor<S>& queries,
                     const LossWeights& w, int64_t height, int64_t width) {
  check_dim(!u_iters.empty(), "track_loss: no iterations");
  const int k = int(u_iters.size());
  const Tensor<S> target = gt_displacements(gt, queries);
  const Tensor<S> weights = supervision_weights<S>(gt, w, height, width);
  Tensor<S> acc;
  for (int i = 0; i < k; ++i) {
    const S wk = S(std::pow(w.gamma, double(k - 1 - i)));
    auto term = huber_norm_loss(drop_row0(u_iters[size_t(i)]), target, weights, S(w.huber_delta));
    acc = acc.defined() ? add(acc, scale(term, wk)) : scale(term, wk);
  }
  return acc;
}

template <typename S>
Tensor<S> vis_conf_loss(const std::vector<Tensor<S>>& v_iters, const std::vector<Tensor<S>>& tau_iters,
                        const std::vector<Tensor<S>>& u_iters, const GroundTruth& gt, const Tensor<S>& queries,
                        const LossWeights& w) {
  check_dim(v_iters.size() == u_iters.size() && tau_iters.size() == u_iters.size(),
            "vis_conf_loss: iteration lists misaligned");
  const int k = int(u_iters.size());
  const int64_t t = gt.tracks.extent(0), n = gt.tracks.extent(1);
  Tensor<S> vis_target({t - 1, n});
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i)
      vis_target.data()[(f - 1) * n + i] = S(gt.visibility.data()[f * n + i] > 0.5f ? 1 : 0);
  Tensor<S> ones = Tensor<S>::full({t - 1, n}, S(1));

  Tensor<S> acc;
  for (int i = 0; i < k; ++i) {
    const S wk = S(std::pow(w.gamma, double(k - 1 - i)));
    auto vterm = bce_loss(drop_row0(v_iters[size_t(i)]), vis_target, ones);
    // confidence target from this iteration's prediction, detached
    const Tensor<S>& u = u_iters[size_t(i)];
    Tensor<S> conf_target({t - 1, n});
    for (int64_t f = 1; f < t; ++f)
      for (int64_t i2 = 0; i2 < n; ++i2) {
        const double px = double(queries.data()[2 * i2]) + double(u.data()[(f * n + i2) * 2]);
        const double py = double(queries.data()[2 * i2 + 1]) + double(u.data()[(f * n + i2) * 2 + 1]);
        const double dx = px - double(gt.tracks.data()[(f * n + i2) * 2]);
        const double dy = py - double(gt.tracks.data()[(f * n + i2) * 2 + 1]);
        conf_target.data()[(f - 1) * n + i2] = std::sqrt(dx * dx + dy * dy) <= w.conf_radius ? S(1) : S(0);
      }
    auto tterm = bce_loss(drop_row0(tau_iters[size_t(i)]), conf_target, ones);
    auto term = add(scale(vterm, S(w.lambda_vis)), scale(tterm, S(w.lambda_conf)));
    acc = acc.defined() ? add(acc, scale(term, wk)) : scale(term, wk);
  }
  return acc;
}

template <typename S>
std::pair<Tensor<S>, LossParts> total_loss(const TrackResult<S>& result, const GroundTruth& gt,
                                           const LossWeights& w, int64_t height, int64_t width) {
  auto tl = track_loss(result.u_iters, gt, result.queries, w, height, width);
  auto vc = vis_conf_loss(result.v_iters, result.tau_iters, result.u_iters, gt, result.queries, w);
  auto loss = add(tl, vc);
  LossParts parts;
  parts.track = double(tl.item());
  parts.vis_conf = double(vc.item());
  parts.total = double(loss.item());
  return {std::move(loss), parts};
}

#define WT_INSTANTIATE_LOSS(S)                                                                            \
  template Tensor<S> supervision_weights<S>(const GroundTruth&, const LossWeights&, int64_t, int64_t);    \
  template Tensor<S> track_loss<S>(const std::vector<Tensor<S>>&, const GroundTruth&, const Tensor<S>&,   \
                                   const LossWeights&, int64_t, int64_t);                                 \
  template Tensor<S> vis_conf_loss<S>(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&,       \
                                      const std::vector<Tensor<S>>&, const GroundTruth&, const Tensor<S>&, \
                                      const LossWeights&);                                                \
  template std::pair<Tensor<S>, LossParts> total_loss<S>(const TrackResult<S>&, const GroundTruth&,       \
                                                         const LossWeights&, int64_t, int64_t);

WT_INSTANTIATE_LOSS(float)
WT_INSTANTIATE_LOSS(double)

}  // namespace warptrack
