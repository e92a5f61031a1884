#include "warptrack/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace warptrack {

Tensor<float> normalize_tracks(const Tensor<float>& tracks, int64_t height, int64_t width) {
  check_dim(tracks.rank() >= 1 && tracks.shape().back() == 2, "normalize_tracks: last axis must be 2");
  Tensor<float> out(tracks.shape());
  const float sx = 256.0f / float(width), sy = 256.0f / float(height);
  const int64_t pts = tracks.numel() / 2;
  for (int64_t i = 0; i < pts; ++i) {
    out.data()[2 * i] = tracks.data()[2 * i] * sx;
    out.data()[2 * i + 1] = tracks.data()[2 * i + 1] * sy;
  }
  return out;
}

namespace {

void check_point_args(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& vis) {
  check_dim(pred.rank() == 3 && pred.shape().back() == 2, "point metrics: tracks must be [t,n,2]");
  check_dim(pred.shape() == gt.shape(), "point metrics: pred/gt shape mismatch");
  check_dim(vis.rank() == 2 && vis.extent(0) == pred.extent(0) && vis.extent(1) == pred.extent(1),
            "point metrics: visibility must be [t,n]");
}

double dist(const float* a, const float* b) {
  const double dx = double(a[0]) - double(b[0]);
  const double dy = double(a[1]) - double(b[1]);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

DeltaResult delta_avg(const Tensor<float>& pred_tracks, const Tensor<float>& gt_tracks,
                      const Tensor<float>& gt_visibility) {
  check_point_args(pred_tracks, gt_tracks, gt_visibility);
  const int64_t t = pred_tracks.extent(0), n = pred_tracks.extent(1);
  const auto& th = metric_thresholds();
  std::vector<int64_t> within(th.size(), 0);
  int64_t visible = 0;
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      if (gt_visibility.data()[f * n + i] <= 0.5f) continue;
      ++visible;
      const double d = dist(pred_tracks.data() + (f * n + i) * 2, gt_tracks.data() + (f * n + i) * 2);
      for (size_t j = 0; j < th.size(); ++j)
        if (d < th[j]) ++within[j];
    }
  DeltaResult res;
  res.per_threshold.assign(th.size(), std::nullopt);
  if (visible == 0) return res;  // undefined without visible points
  double acc = 0.0;
  for (size_t j = 0; j < th.size(); ++j) {
    const double frac = double(within[j]) / double(visible);
    res.per_threshold[j] = frac;
    acc += frac;
  }
  res.delta_avg = acc / double(th.size());
  return res;
}

double occlusion_accuracy(const Tensor<float>& pred_vis_prob, const Tensor<float>& gt_visibility) {
  check_dim(pred_vis_prob.shape() == gt_visibility.shape() && pred_vis_prob.rank() == 2,
            "occlusion_accuracy: expected matching [t,n]");
  const int64_t t = pred_vis_prob.extent(0), n = pred_vis_prob.extent(1);
  int64_t correct = 0, total = 0;
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      const bool pv = pred_vis_prob.data()[f * n + i] > 0.5f;  // strict: 0.5 counts occluded
      const bool gv = gt_visibility.data()[f * n + i] > 0.5f;
      ++total;
      if (pv == gv) ++correct;
    }
  return total == 0 ? 0.0 : double(correct) / double(total);
}

std::optional<double> average_jaccard(const Tensor<float>& pred_tracks, const Tensor<float>& pred_vis_prob,
                                      const Tensor<float>& gt_tracks, const Tensor<float>& gt_visibility,
                                      std::vector<std::optional<double>>* per_threshold) {
  check_point_args(pred_tracks, gt_tracks, gt_visibility);
  const int64_t t = pred_tracks.extent(0), n = pred_tracks.extent(1);
  const auto& th = metric_thresholds();
  std::vector<int64_t> tp(th.size(), 0), fn(th.size(), 0), fp(th.size(), 0);
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      const bool pv = pred_vis_prob.data()[f * n + i] > 0.5f;
      const bool gv = gt_visibility.data()[f * n + i] > 0.5f;
      if (!gv) {
        if (pv)
          for (size_t j = 0; j < th.size(); ++j) ++fp[j];
        continue;
      }
      const double d = dist(pred_tracks.data() + (f * n + i) * 2, gt_tracks.data() + (f * n + i) * 2);
      for (size_t j = 0; j < th.size(); ++j) {
        if (pv && d < th[j])
          ++tp[j];
        else
          ++fn[j];
      }
    }
  if (per_threshold) per_threshold->assign(th.size(), std::nullopt);
  double acc = 0.0;
  int64_t counted = 0;
  for (size_t j = 0; j < th.size(); ++j) {
    const int64_t denom = tp[j] + fn[j] + fp[j];
    if (denom == 0) continue;  // threshold skipped from the mean
    const double jac = double(tp[j]) / double(denom);
    if (per_threshold) (*per_threshold)[j] = jac;
    acc += jac;
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return acc / double(counted);
}

FlowMetrics flow_metrics(const Tensor<float>& pred_flow, const Tensor<float>& gt_flow,
                         const Tensor<float>& valid_mask) {
  check_dim(pred_flow.rank() == 3 && pred_flow.extent(0) == 2, "flow_metrics: flow must be [2,h,w]");
  check_dim(pred_flow.shape() == gt_flow.shape(), "flow_metrics: pred/gt shape mismatch");
  const int64_t plane = pred_flow.extent(1) * pred_flow.extent(2);
  if (valid_mask.defined())
    check_dim(valid_mask.numel() == plane, "flow_metrics: mask shape mismatch");
  double epe_acc = 0.0;
  int64_t valid = 0, outliers = 0, over_one = 0;
  for (int64_t i = 0; i < plane; ++i) {
    if (valid_mask.defined() && valid_mask.data()[i] == 0.0f) continue;
    ++valid;
    const double dx = double(pred_flow.data()[i]) - double(gt_flow.data()[i]);
    const double dy = double(pred_flow.data()[plane + i]) - double(gt_flow.data()[plane + i]);
    const double e = std::sqrt(dx * dx + dy * dy);
    epe_acc += e;
    const double mag = std::sqrt(double(gt_flow.data()[i]) * double(gt_flow.data()[i]) +
                                 double(gt_flow.data()[plane + i]) * double(gt_flow.data()[plane + i]));
    if (e > 3.0 && e > 0.05 * mag) ++outliers;
    if (e > 1.0) ++over_one;
  }
  FlowMetrics m;
  if (valid == 0) return m;  // undefined on an empty mask
  m.epe = epe_acc / double(valid);
  m.fl_all = double(outliers) / double(valid);
  m.one_px = double(over_one) / double(valid);
  return m;
}

std::vector<MagnitudeBin> epe_by_magnitude(const Tensor<float>& pred_flow, const Tensor<float>& gt_flow,
                                           const Tensor<float>& valid_mask, const std::vector<double>& bin_edges) {
  check_dim(pred_flow.rank() == 3 && pred_flow.extent(0) == 2, "epe_by_magnitude: flow must be [2,h,w]");
  check_dim(pred_flow.shape() == gt_flow.shape(), "epe_by_magnitude: shape mismatch");
  for (size_t i = 1; i < bin_edges.size(); ++i)
    check_dim(bin_edges[i] > bin_edges[i - 1], "epe_by_magnitude: edges must increase");
  const int64_t plane = pred_flow.extent(1) * pred_flow.extent(2);
  std::vector<MagnitudeBin> bins(bin_edges.size() + 1);
  std::vector<double> acc(bins.size(), 0.0);
  for (size_t b = 0; b < bins.size(); ++b) {
    bins[b].lo = b == 0 ? -std::numeric_limits<double>::infinity() : bin_edges[b - 1];
    bins[b].hi = b == bin_edges.size() ? std::numeric_limits<double>::infinity() : bin_edges[b];
  }
  for (int64_t i = 0; i < plane; ++i) {
    if (valid_mask.defined() && valid_mask.data()[i] == 0.0f) continue;
    const double gx = double(gt_flow.data()[i]), gy = double(gt_flow.data()[plane + i]);
    const double mag = std::sqrt(gx * gx + gy * gy);
    size_t b = 0;
    while (b < bin_edges.size() && mag >= bin_edges[b]) ++b;
    const double dx = double(pred_flow.data()[i]) - gx;
    const double dy = double(pred_flow.data()[plane + i]) - gy;
    acc[b] += std::sqrt(dx * dx + dy * dy);
    ++bins[b].count;
  }
  for (size_t b = 0; b < bins.size(); ++b)
    if (bins[b].count > 0) bins[b].epe = acc[b] / double(bins[b].count);
  return bins;
}

MetricReport evaluate_tracking(const Tensor<float>& pred_tracks, const Tensor<float>& pred_vis_prob,
                               const Tensor<float>& gt_tracks, const Tensor<float>& gt_visibility,
                               int64_t height, int64_t width) {
  MetricReport r;
  const Tensor<float> pn = normalize_tracks(pred_tracks, height, width);
  const Tensor<float> gn = normalize_tracks(gt_tracks, height, width);
  DeltaResult d = delta_avg(pn, gn, gt_visibility);
  r.delta_avg = d.delta_avg;
  r.delta_per_threshold = d.per_threshold;
  r.occlusion_accuracy = occlusion_accuracy(pred_vis_prob, gt_visibility);
  r.average_jaccard = average_jaccard(pn, pred_vis_prob, gn, gt_visibility, &r.jaccard_per_threshold);
  const int64_t t = pred_tracks.extent(0), n = pred_tracks.extent(1);
  r.points_evaluated = (t - 1) * n;
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i)
      if (gt_visibility.data()[f * n + i] > 0.5f) ++r.visible_points;
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
  MetricReport agg;
  agg.delta_per_threshold.assign(metric_thresholds().size(), std::nullopt);
  agg.jaccard_per_threshold.assign(metric_thresholds().size(), std::nullopt);
  // weighted means of per-clip values: visible points for position metrics,
  // evaluated points for visibility-based ones
  double dsum = 0, dw = 0, osum = 0, ow = 0, jsum = 0, jw = 0;
  for (const auto& r : reports) {
    agg.points_evaluated += r.points_evaluated;
    agg.visible_points += r.visible_points;
    if (r.delta_avg) {
      dsum += *r.delta_avg * double(r.visible_points);
      dw += double(r.visible_points);
    }
    if (r.occlusion_accuracy) {
      osum += *r.occlusion_accuracy * double(r.points_evaluated);
      ow += double(r.points_evaluated);
    }
    if (r.average_jaccard) {
      jsum += *r.average_jaccard * double(r.points_evaluated);
      jw += double(r.points_evaluated);
    }
  }
  if (dw > 0) agg.delta_avg = dsum / dw;
  if (ow > 0) agg.occlusion_accuracy = osum / ow;
  if (jw > 0) agg.average_jaccard = jsum / jw;
  return agg;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("delta_avg", delta_avg);
  put("oa", occlusion_accuracy);
  put("aj", average_jaccard);
  put("epe", epe);
  put("fl_all", fl_all);
  put("one_px", one_px);
  const auto& th = metric_thresholds();
  for (size_t i = 0; i < delta_per_threshold.size(); ++i)
    if (delta_per_threshold[i]) j["delta_at"][std::to_string(int(th[i]))] = *delta_per_threshold[i];
  for (size_t i = 0; i < jaccard_per_threshold.size(); ++i)
    if (jaccard_per_threshold[i]) j["jaccard_at"][std::to_string(int(th[i]))] = *jaccard_per_threshold[i];
  j["points_evaluated"] = points_evaluated;
  j["visible_points"] = visible_points;
  return j.dump();
}

}  // namespace warptrack
