#include "warptrack/optim.hpp"

#include <cmath>

namespace warptrack {

double lr_at(int64_t step, const OptimConfig& cfg) {
  check_dim(step >= 0 && step <= cfg.total_steps, "lr_at: step out of schedule range");
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) return cfg.lr * double(step) / double(cfg.warmup_steps);
  const double span = double(cfg.total_steps - cfg.warmup_steps);
  const double progress = span > 0 ? double(step - cfg.warmup_steps) / span : 1.0;
  return 0.5 * cfg.lr * (1.0 + std::cos(3.14159265358979323846 * progress));
}

template <typename S>
bool optimizer_step(std::vector<Tensor<S>>& params, OptimState<S>& state, const OptimConfig& cfg) {
  check_dim(params.size() == state.m.size(), "optimizer_step: state does not match parameter list");
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    const S* g = p.grad_cdata();
    for (int64_t i = 0; i < p.numel(); ++i)
      if (!std::isfinite(double(g[i]))) return false;  // skip the step, caller reports
  }
  const double lr = lr_at(state.step, cfg);
  const int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<S>& p = params[pi];
    const S* g = p.has_grad() ? p.grad_cdata() : nullptr;
    S* m = state.m[pi].data();
    S* v = state.v[pi].data();
    S* w = p.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g ? double(g[i]) : 0.0;
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = S(mi);
      v[i] = S(vi);
      const double mhat = mi / bc1, vhat = vi / bc2;
      w[i] = S(double(w[i]) - lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * double(w[i])));
    }
  }
  state.step = t;
  return true;
}

template bool optimizer_step<float>(std::vector<Tensor<float>>&, OptimState<float>&, const OptimConfig&);
template bool optimizer_step<double>(std::vector<Tensor<double>>&, OptimState<double>&, const OptimConfig&);

}  // namespace warptrack
