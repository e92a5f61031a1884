#include "warptrack/trainer.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "warptrack/synth.hpp"
#include "warptrack/tape.hpp"

namespace warptrack {

namespace {

struct ElementOutcome {
  LossParts parts;
  uint64_t clip_seed = 0;
  uint64_t aug_seed = 0;
  bool finite = true;
};

int64_t flat_param_count(std::vector<Tensor<float>*>& params) {
  int64_t n = 0;
  for (auto* p : params) n += p->numel();
  return n;
}

void append_jsonl(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::app);
  os << j.dump() << "\n";
}

}  // namespace

MetricReport evaluate_dataset(const Model<float>& model, const std::vector<std::string>& clip_files,
                              int max_clips, int iters, int threads,
                              std::vector<MetricReport>* per_clip) {
  const int64_t count = max_clips > 0 ? std::min<int64_t>(max_clips, int64_t(clip_files.size()))
                                      : int64_t(clip_files.size());
  std::vector<MetricReport> reports(static_cast<size_t>(count));
  const int workers = std::max(1, std::min<int>(threads, int(count)));
  std::atomic<int64_t> next{0};
  auto run = [&]() {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= count) return;
      auto [clip, gt] = read_clip(clip_files[size_t(i)]);
      auto result = track(model, clip, iters);
      auto sampled = sample_tracks_at(result, gt.query_points);
      reports[size_t(i)] = evaluate_tracking(sampled.tracks, sampled.visibility, gt.tracks, gt.visibility,
                                             clip.height(), clip.width());
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (per_clip) *per_clip = reports;
  return aggregate_reports(reports);
}

TrainResult train(Model<float>& model, OptimState<float>& opt, const TrainConfig& cfg,
                  const std::string& train_dir, const std::string& holdout_dir, const std::string& out_dir,
                  const std::string& run_name, const std::string& config_hash) {
  namespace fs = std::filesystem;
  check_dim(cfg.batch >= 1 && cfg.steps >= 0, "train: bad batch/step counts");
  fs::create_directories(out_dir);
  const std::vector<std::string> files = list_dataset(train_dir);
  check_dim(!files.empty(), "train: empty dataset " + train_dir);
  std::vector<std::string> holdout_files;
  if (!holdout_dir.empty() && cfg.eval_every > 0) holdout_files = list_dataset(holdout_dir);

  std::vector<Tensor<float>*> master_params;
  model.visit([&](const std::string&, Tensor<float>& t) { master_params.push_back(&t); });
  if (opt.m.empty()) {
    std::vector<Tensor<float>> plist;
    for (auto* p : master_params) plist.push_back(*p);
    opt = OptimState<float>::init(plist);
  }
  const int64_t flat_count = flat_param_count(master_params);

  const int workers = std::max(1, std::min<int>(cfg.threads, cfg.batch));
  std::vector<Model<float>> worker_models;
  worker_models.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) worker_models.push_back(model.clone());
  std::vector<std::vector<Tensor<float>*>> worker_params(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w)
    worker_models[size_t(w)].visit(
        [&](const std::string&, Tensor<float>& t) { worker_params[size_t(w)].push_back(&t); });

  const std::string log_path = (fs::path(out_dir) / (run_name + ".log.jsonl")).string();
  TrainResult result;

  // per-element buffers (or per-worker sums with --fast-reduce)
  const int slots = cfg.fast_reduce ? workers : cfg.batch;
  std::vector<std::vector<float>> grad_slots(static_cast<size_t>(slots));
  for (auto& s : grad_slots) s.assign(size_t(flat_count), 0.0f);

  for (int64_t step = opt.step; step < cfg.steps; ++step) {
    // refresh worker copies with the master values
    for (int w = 0; w < workers; ++w)
      for (size_t pi = 0; pi < master_params.size(); ++pi)
        std::memcpy(worker_params[size_t(w)][pi]->data(), master_params[pi]->data(),
                    size_t(master_params[pi]->numel()) * 4);
    for (auto& s : grad_slots) std::fill(s.begin(), s.end(), 0.0f);

    std::vector<ElementOutcome> outcomes(static_cast<size_t>(cfg.batch));
    auto worker_fn = [&](int w) {
      for (int i = w; i < cfg.batch; i += workers) {
        ElementOutcome& out = outcomes[size_t(i)];
        out.clip_seed = mix_seed(cfg.seed, uint64_t(step), uint64_t(i));
        out.aug_seed = mix_seed(cfg.seed ^ 0x5eedau, uint64_t(step), uint64_t(i));
        auto [clip, gt] = read_clip(files[size_t(out.clip_seed % files.size())]);
        if (cfg.augment && clip.frame_count() >= 3) std::tie(clip, gt) = temporal_augment(clip, gt, out.aug_seed);
        Model<float>& m = worker_models[size_t(w)];
        Tape<float> tape;
        auto res = track(m, clip, m.config.iters, true);
        auto [loss, parts] = total_loss(res, gt, cfg.loss, clip.height(), clip.width());
        out.parts = parts;
        out.finite = std::isfinite(parts.total);
        if (!out.finite) return;
        backward(scale(loss, 1.0f / float(cfg.batch)));
        float* dst = grad_slots[size_t(cfg.fast_reduce ? w : i)].data();
        for (auto* p : worker_params[size_t(w)]) {
          if (p->has_grad()) {
            const float* g = p->grad_cdata();
            if (cfg.fast_reduce) {
              for (int64_t j = 0; j < p->numel(); ++j) dst[j] += g[j];
            } else {
              std::memcpy(dst, g, size_t(p->numel()) * 4);
            }
            p->zero_grad();
          } else if (!cfg.fast_reduce) {
            std::memset(dst, 0, size_t(p->numel()) * 4);
          }
          dst += p->numel();
        }
      }
    };
    if (workers == 1) {
      worker_fn(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(worker_fn, w);
      for (auto& t : pool) t.join();
    }

    LossParts step_loss;
    for (int i = 0; i < cfg.batch; ++i) {
      const ElementOutcome& out = outcomes[size_t(i)];
      if (!out.finite) {
        nlohmann::json diag;
        diag["step"] = step;
        diag["element"] = i;
        diag["clip_seed"] = out.clip_seed;
        diag["aug_seed"] = out.aug_seed;
        diag["losses"] = {out.parts.total, out.parts.track, out.parts.vis_conf};
        atomic_write_file((fs::path(out_dir) / (run_name + ".diagnostic.json")).string(), diag.dump(2) + "\n");
        throw std::runtime_error("non-finite loss at step " + std::to_string(step) + ", element " +
                                 std::to_string(i) + " (diagnostic written)");
      }
      step_loss.total += out.parts.total / cfg.batch;
      step_loss.track += out.parts.track / cfg.batch;
      step_loss.vis_conf += out.parts.vis_conf / cfg.batch;
    }

    // fixed-order reduction into the master gradient buffers
    for (size_t pi = 0, off = 0; pi < master_params.size(); ++pi) {
      Tensor<float>* p = master_params[pi];
      float* g = p->grad();
      std::memset(g, 0, size_t(p->numel()) * 4);
      for (int s = 0; s < slots; ++s) {
        const float* src = grad_slots[size_t(s)].data() + off;
        for (int64_t j = 0; j < p->numel(); ++j) g[j] += src[j];
      }
      off += size_t(p->numel());
    }

    std::vector<Tensor<float>> plist;
    for (auto* p : master_params) plist.push_back(*p);
    const double lr = lr_at(opt.step, cfg.optim);
    const bool applied = optimizer_step(plist, opt, cfg.optim);
    if (!applied) {
      ++result.skipped_steps;
      opt.step += 1;  // the schedule still advances
      append_jsonl(log_path, {{"step", step}, {"event", "skipped_nonfinite_grads"}});
    }
    for (auto* p : master_params) p->zero_grad();
    result.last_loss = step_loss.total;
    ++result.steps_run;

    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      append_jsonl(log_path, {{"step", step},
                              {"lr", lr},
                              {"loss", step_loss.total},
                              {"loss_track", step_loss.track},
                              {"loss_vis_conf", step_loss.vis_conf}});
    }
    if (!holdout_files.empty() && cfg.eval_every > 0 &&
        ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
      auto report = evaluate_dataset(model, holdout_files, cfg.eval_clips, model.config.iters, cfg.threads);
      nlohmann::json j{{"step", step + 1}, {"event", "eval"}};
      if (report.delta_avg) j["delta_avg"] = *report.delta_avg;
      if (report.occlusion_accuracy) j["oa"] = *report.occlusion_accuracy;
      if (report.average_jaccard) j["aj"] = *report.average_jaccard;
      append_jsonl(log_path, j);
    }
    if (cfg.save_every > 0 && (step + 1) % cfg.save_every == 0 && step + 1 != cfg.steps) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "_step%06lld.wtc", static_cast<long long>(step + 1));
      save_checkpoint((fs::path(out_dir) / (run_name + buf)).string(), model, &opt, step + 1, config_hash);
    }
  }

  result.final_checkpoint = (fs::path(out_dir) / (run_name + "_final.wtc")).string();
  save_checkpoint(result.final_checkpoint, model, &opt, opt.step, config_hash);
  return result;
}

}  // namespace warptrack
