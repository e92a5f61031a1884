#pragma once

// Brute-force reference implementations of every metric, written as plain
// nested loops independent of src/metrics.cpp. Shared by the unit tests and
// the acceptance harness.

#include <cmath>
#include <optional>
#include <vector>

#include "warptrack/metrics.hpp"

namespace wtest {

using warptrack::Tensor;

struct OracleDelta {
  std::optional<double> delta_avg;
  std::vector<std::optional<double>> per_threshold;
};

inline OracleDelta oracle_delta_avg(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<float>& vis) {
  const int64_t t = pred.extent(0), n = pred.extent(1);
  OracleDelta out;
  std::vector<double> fracs;
  for (double th : warptrack::metric_thresholds()) {
    int64_t hit = 0, total = 0;
    for (int64_t f = 1; f < t; ++f)
      for (int64_t i = 0; i < n; ++i) {
        if (!(vis.data()[f * n + i] > 0.5f)) continue;
        ++total;
        const double dx = double(pred.data()[(f * n + i) * 2]) - double(gt.data()[(f * n + i) * 2]);
        const double dy = double(pred.data()[(f * n + i) * 2 + 1]) - double(gt.data()[(f * n + i) * 2 + 1]);
        if (std::sqrt(dx * dx + dy * dy) < th) ++hit;
      }
    if (total == 0) {
      out.per_threshold.push_back(std::nullopt);
      continue;
    }
    out.per_threshold.push_back(double(hit) / double(total));
    fracs.push_back(double(hit) / double(total));
  }
  if (!fracs.empty()) {
    double s = 0;
    for (double f : fracs) s += f;
    out.delta_avg = s / double(warptrack::metric_thresholds().size());
  }
  return out;
}

inline double oracle_occlusion_accuracy(const Tensor<float>& prob, const Tensor<float>& vis) {
  const int64_t t = prob.extent(0), n = prob.extent(1);
  int64_t ok = 0, total = 0;
  for (int64_t f = 1; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      ++total;
      const bool predicted_visible = prob.data()[f * n + i] > 0.5f;
      const bool actually_visible = vis.data()[f * n + i] > 0.5f;
      if (predicted_visible == actually_visible) ++ok;
    }
  return total == 0 ? 0.0 : double(ok) / double(total);
}

inline std::optional<double> oracle_average_jaccard(const Tensor<float>& pred, const Tensor<float>& prob,
                                                    const Tensor<float>& gt, const Tensor<float>& vis) {
  const int64_t t = pred.extent(0), n = pred.extent(1);
  double total = 0;
  int64_t counted = 0;
  for (double th : warptrack::metric_thresholds()) {
    int64_t tp = 0, fn = 0, fp = 0;
    for (int64_t f = 1; f < t; ++f)
      for (int64_t i = 0; i < n; ++i) {
        const bool pv = prob.data()[f * n + i] > 0.5f;
        const bool gv = vis.data()[f * n + i] > 0.5f;
        const double dx = double(pred.data()[(f * n + i) * 2]) - double(gt.data()[(f * n + i) * 2]);
        const double dy = double(pred.data()[(f * n + i) * 2 + 1]) - double(gt.data()[(f * n + i) * 2 + 1]);
        const bool close = std::sqrt(dx * dx + dy * dy) < th;
        if (gv && pv && close)
          ++tp;
        else if (gv)
          ++fn;
        else if (pv)
          ++fp;
      }
    if (tp + fn + fp == 0) continue;
    total += double(tp) / double(tp + fn + fp);
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return total / double(counted);
}

struct OracleFlow {
  std::optional<double> epe, fl_all, one_px;
};

inline OracleFlow oracle_flow_metrics(const Tensor<float>& pred, const Tensor<float>& gt,
                                      const Tensor<float>& mask) {
  const int64_t plane = pred.extent(1) * pred.extent(2);
  OracleFlow out;
  double acc = 0;
  int64_t valid = 0, fl = 0, px = 0;
  for (int64_t i = 0; i < plane; ++i) {
    if (mask.defined() && mask.data()[i] == 0.0f) continue;
    ++valid;
    const double dx = double(pred.data()[i]) - double(gt.data()[i]);
    const double dy = double(pred.data()[plane + i]) - double(gt.data()[plane + i]);
    const double e = std::sqrt(dx * dx + dy * dy);
    acc += e;
    const double gx = gt.data()[i], gy = gt.data()[plane + i];
    if (e > 3.0 && e > 0.05 * std::sqrt(gx * gx + gy * gy)) ++fl;
    if (e > 1.0) ++px;
  }
  if (valid == 0) return out;
  out.epe = acc / double(valid);
  out.fl_all = double(fl) / double(valid);
  out.one_px = double(px) / double(valid);
  return out;
}

inline std::vector<std::optional<double>> oracle_epe_by_magnitude(const Tensor<float>& pred,
                                                                  const Tensor<float>& gt,
                                                                  const Tensor<float>& mask,
                                                                  const std::vector<double>& edges) {
  const int64_t plane = pred.extent(1) * pred.extent(2);
  std::vector<double> acc(edges.size() + 1, 0.0);
  std::vector<int64_t> cnt(edges.size() + 1, 0);
  for (int64_t i = 0; i < plane; ++i) {
    if (mask.defined() && mask.data()[i] == 0.0f) continue;
    const double gx = gt.data()[i], gy = gt.data()[plane + i];
    const double mag = std::sqrt(gx * gx + gy * gy);
    size_t b = 0;
    for (double e : edges) {
      if (mag >= e)
        ++b;
      else
        break;
    }
    const double dx = double(pred.data()[i]) - gx;
    const double dy = double(pred.data()[plane + i]) - gy;
    acc[b] += std::sqrt(dx * dx + dy * dy);
    ++cnt[b];
  }
  std::vector<std::optional<double>> out(edges.size() + 1);
  for (size_t b = 0; b < out.size(); ++b)
    if (cnt[b] > 0) out[b] = acc[b] / double(cnt[b]);
  return out;
}

// random small instances for the oracle comparisons
struct RandomInstance {
  Tensor<float> pred_tracks, gt_tracks, pred_vis, gt_vis;
};

inline RandomInstance random_instance(warptrack::Rng& rng) {
  const int64_t t = rng.uniform_int(2, 8), n = rng.uniform_int(1, 20);
  RandomInstance ri;
  ri.pred_tracks = Tensor<float>({t, n, 2});
  ri.gt_tracks = Tensor<float>({t, n, 2});
  ri.pred_vis = Tensor<float>({t, n});
  ri.gt_vis = Tensor<float>({t, n});
  for (int64_t i = 0; i < t * n; ++i) {
    ri.gt_tracks.data()[2 * i] = float(rng.uniform(0, 256));
    ri.gt_tracks.data()[2 * i + 1] = float(rng.uniform(0, 256));
    // predictions concentrated near gt so every threshold bucket is exercised
    ri.pred_tracks.data()[2 * i] = ri.gt_tracks.data()[2 * i] + float(rng.uniform(-12, 12));
    ri.pred_tracks.data()[2 * i + 1] = ri.gt_tracks.data()[2 * i + 1] + float(rng.uniform(-12, 12));
    ri.pred_vis.data()[i] = float(rng.uniform(0, 1));
    ri.gt_vis.data()[i] = rng.bernoulli(0.75) ? 1.0f : 0.0f;
  }
  return ri;
}

}  // namespace wtest
