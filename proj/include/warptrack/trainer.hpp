#pragma once

#include "warptrack/checkpoint.hpp"
#include "warptrack/loss.hpp"
#include "warptrack/metrics.hpp"
#include "warptrack/optim.hpp"

namespace warptrack {

struct TrainConfig {
  int64_t steps = 5000;
  int batch = 8;
  uint64_t seed = 0;
  int threads = 1;
  bool fast_reduce = false;  // reduce per-worker sums instead of per-element buffers
  bool augment = true;       // random frame rate / length
  int64_t eval_every = 500;  // 0 disables held-out eval
  int eval_clips = 16;
  int64_t save_every = 0;  // 0: only the final checkpoint
  int64_t log_every = 50;
  LossWeights loss;
  OptimConfig optim;
};

struct TrainResult {
  std::string final_checkpoint;
  int64_t steps_run = 0;
  int64_t skipped_steps = 0;  // non-finite gradients
  double last_loss = 0;
};

// Batches are drawn per (seed, step, element), so a resumed run replays the
// exact remaining schedule. Batch-element forward/backward runs on worker
// threads into per-element gradient buffers reduced in element order; the
// result is byte-identical for any thread count.
TrainResult train(Model<float>& model, OptimState<float>& opt, const TrainConfig& cfg,
                  const std::string& train_dir, const std::string& holdout_dir, const std::string& out_dir,
                  const std::string& run_name, const std::string& config_hash);

// tracks every clip (bounded by max_clips, 0 = all) and aggregates metrics;
// pure given the model, parallel over clips
MetricReport evaluate_dataset(const Model<float>& model, const std::vector<std::string>& clip_files,
                              int max_clips, int iters, int threads,
                              std::vector<MetricReport>* per_clip = nullptr);

}  // namespace warptrack
