#pragma once

#include <optional>
#include <string>
#include <vector>

#include "warptrack/tensor.hpp"

namespace warptrack {

// Point-tracking and flow metrics. Point metrics operate in the 256x256
// normalized evaluation frame and exclude frame 0 (fixed by definition).
// All rates are fractions in [0,1].

inline const std::vector<double>& metric_thresholds() {
  static const std::vector<double> th = {1, 2, 4, 8, 16};
  return th;
}

struct DeltaResult {
  std::optional<double> delta_avg;
  std::vector<std::optional<double>> per_threshold;  // aligned with metric_thresholds()
};

struct MetricReport {
  std::optional<double> delta_avg;
  std::vector<std::optional<double>> delta_per_threshold;
  std::optional<double> occlusion_accuracy;
  std::optional<double> average_jaccard;
  std::vector<std::optional<double>> jaccard_per_threshold;
  std::optional<double> epe;
  std::optional<double> fl_all;
  std::optional<double> one_px;
  int64_t points_evaluated = 0;  // (t,p) pairs with t >= 1
  int64_t visible_points = 0;

  std::string to_json() const;
};

// rescale pixel coordinates into the 256x256 evaluation frame
Tensor<float> normalize_tracks(const Tensor<float>& tracks, int64_t height, int64_t width);

// fraction of gt-visible points within each threshold (strict <); positions
// already normalized; frame 0 excluded
DeltaResult delta_avg(const Tensor<float>& pred_tracks, const Tensor<float>& gt_tracks,
                      const Tensor<float>& gt_visibility);

// fraction of (t,p), t >= 1, with (prob > 0.5) equal to gt visibility
double occlusion_accuracy(const Tensor<float>& pred_vis_prob, const Tensor<float>& gt_visibility);

// Jaccard over joint position/visibility decisions, averaged over thresholds
std::optional<double> average_jaccard(const Tensor<float>& pred_tracks, const Tensor<float>& pred_vis_prob,
                                      const Tensor<float>& gt_tracks, const Tensor<float>& gt_visibility,
                                      std::vector<std::optional<double>>* per_threshold = nullptr);

struct FlowMetrics {
  std::optional<double> epe;
  std::optional<double> fl_all;  // epe > 3 px and epe > 5% of |gt|
  std::optional<double> one_px;  // epe > 1 px
};

// dense 2-channel fields [2,h,w]; mask [h,w] nonzero = valid (empty tensor = all valid)
FlowMetrics flow_metrics(const Tensor<float>& pred_flow, const Tensor<float>& gt_flow, const Tensor<float>& valid_mask);

struct MagnitudeBin {
  double lo, hi;
  int64_t count = 0;
  std::optional<double> epe;
};

// pixels partitioned by |gt| using edges as inner cut points:
// (-inf,e0), [e0,e1), ..., [e_last,inf)
std::vector<MagnitudeBin> epe_by_magnitude(const Tensor<float>& pred_flow, const Tensor<float>& gt_flow,
                                           const Tensor<float>& valid_mask, const std::vector<double>& bin_edges);

// full report for one clip: normalizes coordinates internally
MetricReport evaluate_tracking(const Tensor<float>& pred_tracks, const Tensor<float>& pred_vis_prob,
                               const Tensor<float>& gt_tracks, const Tensor<float>& gt_visibility,
                               int64_t height, int64_t width);

// point-count-weighted aggregate of per-clip reports
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

}  // namespace warptrack
