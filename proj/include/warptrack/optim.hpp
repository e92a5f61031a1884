#pragma once

#include "warptrack/tensor.hpp"

namespace warptrack {

struct OptimConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int64_t warmup_steps = 100;
  int64_t total_steps = 5000;
};

// adaptive moments with bias correction and decoupled weight decay
template <typename S>
struct OptimState {
  std::vector<Tensor<S>> m, v;  // aligned with the parameter list order
  int64_t step = 0;             // completed steps

  static OptimState init(const std::vector<Tensor<S>>& params) {
    OptimState s;
    for (const auto& p : params) {
      s.m.push_back(Tensor<S>::zeros(p.shape()));
      s.v.push_back(Tensor<S>::zeros(p.shape()));
    }
    return s;
  }
};

// linear warmup to the base rate, then cosine decay to zero
double lr_at(int64_t step, const OptimConfig& cfg);

// applies one update from the accumulated grads; skips (returns false)
// when any gradient is non-finite. Does not clear grads.
template <typename S>
bool optimizer_step(std::vector<Tensor<S>>& params, OptimState<S>& state, const OptimConfig& cfg);

}  // namespace warptrack
