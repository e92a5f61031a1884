#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "warptrack/checkpoint.hpp"
#include "warptrack/metrics.hpp"
#include "warptrack/trainer.hpp"
#include "warptrack/viz.hpp"

namespace fs = std::filesystem;
using namespace warptrack;

namespace {

struct RunConfig {
  SceneSpec scene;
  ModelConfig model;
  TrainConfig train;
  int clips = 2000;
  uint64_t seed = 0;
  int threads = 1;
  int eval_iters = 0;  // 0: use the model's training K
  std::string out, data_dir, holdout_dir, checkpoint, resume, ablate, dump_tracks;
  int viz_stride = 4;
};

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["scene"] = {{"height", c.scene.height},
                {"width", c.scene.width},
                {"targets_min", c.scene.targets_min},
                {"targets_max", c.scene.targets_max},
                {"sprites_min", c.scene.sprites_min},
                {"sprites_max", c.scene.sprites_max},
                {"sprite_size_min", c.scene.sprite_size_min},
                {"sprite_size_max", c.scene.sprite_size_max},
                {"speed_max", c.scene.speed_max},
                {"sinusoid_prob", c.scene.sinusoid_prob},
                {"occluders", c.scene.occluders},
                {"texture", c.scene.texture},
                {"background", c.scene.background},
                {"camera_pan_prob", c.scene.camera_pan_prob},
                {"camera_speed_max", c.scene.camera_speed_max},
                {"query_stride", c.scene.query_stride},
                {"sparse_queries", c.scene.sparse_queries}};
  j["model"] = nlohmann::json::parse(model_config_to_json(c.model));
  j["train"] = {{"steps", c.train.steps},
                {"batch", c.train.batch},
                {"augment", c.train.augment},
                {"fast_reduce", c.train.fast_reduce},
                {"eval_every", c.train.eval_every},
                {"eval_clips", c.train.eval_clips},
                {"save_every", c.train.save_every},
                {"log_every", c.train.log_every},
                {"loss",
                 {{"gamma", c.train.loss.gamma},
                  {"lambda_occ", c.train.loss.lambda_occ},
                  {"lambda_vis", c.train.loss.lambda_vis},
                  {"lambda_conf", c.train.loss.lambda_conf},
                  {"huber_delta", c.train.loss.huber_delta},
                  {"conf_radius", c.train.loss.conf_radius},
                  {"margin", c.train.loss.margin}}},
                {"optim",
                 {{"lr", c.train.optim.lr},
                  {"beta1", c.train.optim.beta1},
                  {"beta2", c.train.optim.beta2},
                  {"eps", c.train.optim.eps},
                  {"weight_decay", c.train.optim.weight_decay},
                  {"warmup_steps", c.train.optim.warmup_steps}}}};
  j["clips"] = c.clips;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["eval_iters"] = c.eval_iters;
  return j;
}

void config_from_json(const nlohmann::json& j, RunConfig& c) {
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    c.scene.height = s.value("height", c.scene.height);
    c.scene.width = s.value("width", c.scene.width);
    c.scene.targets_min = s.value("targets_min", c.scene.targets_min);
    c.scene.targets_max = s.value("targets_max", c.scene.targets_max);
    c.scene.sprites_min = s.value("sprites_min", c.scene.sprites_min);
    c.scene.sprites_max = s.value("sprites_max", c.scene.sprites_max);
    c.scene.sprite_size_min = s.value("sprite_size_min", c.scene.sprite_size_min);
    c.scene.sprite_size_max = s.value("sprite_size_max", c.scene.sprite_size_max);
    c.scene.speed_max = s.value("speed_max", c.scene.speed_max);
    c.scene.sinusoid_prob = s.value("sinusoid_prob", c.scene.sinusoid_prob);
    c.scene.occluders = s.value("occluders", c.scene.occluders);
    c.scene.texture = s.value("texture", c.scene.texture);
    c.scene.background = s.value("background", c.scene.background);
    c.scene.camera_pan_prob = s.value("camera_pan_prob", c.scene.camera_pan_prob);
    c.scene.camera_speed_max = s.value("camera_speed_max", c.scene.camera_speed_max);
    c.scene.query_stride = s.value("query_stride", c.scene.query_stride);
    c.scene.sparse_queries = s.value("sparse_queries", c.scene.sparse_queries);
  }
  if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.steps = t.value("steps", c.train.steps);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.augment = t.value("augment", c.train.augment);
    c.train.fast_reduce = t.value("fast_reduce", c.train.fast_reduce);
    c.train.eval_every = t.value("eval_every", c.train.eval_every);
    c.train.eval_clips = t.value("eval_clips", c.train.eval_clips);
    c.train.save_every = t.value("save_every", c.train.save_every);
    c.train.log_every = t.value("log_every", c.train.log_every);
    if (t.contains("loss")) {
      const auto& l = t["loss"];
      c.train.loss.gamma = l.value("gamma", c.train.loss.gamma);
      c.train.loss.lambda_occ = l.value("lambda_occ", c.train.loss.lambda_occ);
      c.train.loss.lambda_vis = l.value("lambda_vis", c.train.loss.lambda_vis);
      c.train.loss.lambda_conf = l.value("lambda_conf", c.train.loss.lambda_conf);
      c.train.loss.huber_delta = l.value("huber_delta", c.train.loss.huber_delta);
      c.train.loss.conf_radius = l.value("conf_radius", c.train.loss.conf_radius);
      c.train.loss.margin = l.value("margin", c.train.loss.margin);
    }
    if (t.contains("optim")) {
      const auto& o = t["optim"];
      c.train.optim.lr = o.value("lr", c.train.optim.lr);
      c.train.optim.beta1 = o.value("beta1", c.train.optim.beta1);
      c.train.optim.beta2 = o.value("beta2", c.train.optim.beta2);
      c.train.optim.eps = o.value("eps", c.train.optim.eps);
      c.train.optim.weight_decay = o.value("weight_decay", c.train.optim.weight_decay);
      c.train.optim.warmup_steps = o.value("warmup_steps", c.train.optim.warmup_steps);
    }
  }
  c.clips = j.value("clips", c.clips);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.eval_iters = j.value("eval_iters", c.eval_iters);
}

// hash over the semantic run configuration: excludes threads, paths, and
// logging cadence, which cannot change the trained bytes
std::string run_config_hash(const RunConfig& c) {
  nlohmann::json j = config_to_json(c);
  j.erase("threads");
  j["train"].erase("eval_every");
  j["train"].erase("eval_clips");
  j["train"].erase("log_every");
  j["train"].erase("save_every");
  j.erase("eval_iters");
  return hash_hex(fnv1a64(j.dump()));
}

void echo_config(const RunConfig& c) {
  std::cout << "config: " << config_to_json(c).dump() << "\n";
  std::cout << "config_hash: " << run_config_hash(c) << "\n";
}

void apply_ablation(RunConfig& c) {
  if (c.ablate.empty()) return;
  if (c.ablate == "no-temporal")
    c.model.temporal_enabled = false;
  else if (c.ablate == "no-warp")
    c.model.warp_enabled = false;
  else if (c.ablate == "single-pass")
    c.model.iters = 1;
  else
    throw std::invalid_argument("unknown --ablate value: " + c.ablate + " (no-temporal|no-warp|single-pass)");
}

int resolve_threads(int flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("WARPTRACK_THREADS")) return std::max(1, std::atoi(env));
  return 1;
}

Tensor<float> load_frame(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".ppm") return read_ppm(path);
  Tensor<float> t = load_tensor(path);
  check_dim(t.rank() == 3 && t.extent(0) == 3, "frame tensor must be [3,h,w]: " + path);
  return t;
}

int cmd_synth(const RunConfig& cfg) {
  if (cfg.out.empty()) throw std::invalid_argument("synth: --out is required");
  SceneSpec spec = cfg.scene;
  spec.validate();
  echo_config(cfg);
  auto names = write_dataset(cfg.out, spec, cfg.clips, cfg.seed);
  std::cout << "wrote " << names.size() << " clips to " << cfg.out << "\n";
  return 0;
}

int cmd_train(RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw std::invalid_argument("train: --data is required");
  if (cfg.out.empty()) throw std::invalid_argument("train: --out is required");
  apply_ablation(cfg);
  cfg.model.validate();
  cfg.train.seed = cfg.seed;
  cfg.train.threads = cfg.threads;
  cfg.train.optim.total_steps = cfg.train.steps;
  const std::string hash = run_config_hash(cfg);
  echo_config(cfg);

  auto model = make_model<float>(cfg.model, cfg.seed);
  OptimState<float> opt;
  if (!cfg.resume.empty()) {
    auto ck = load_checkpoint(cfg.resume);
    restore_checkpoint(ck, model, &opt, hash);
    std::cout << "resumed from " << cfg.resume << " at step " << ck.step << "\n";
  }
  auto result = train(model, opt, cfg.train, cfg.data_dir, cfg.holdout_dir, cfg.out, "warptrack", hash);
  std::cout << "trained " << result.steps_run << " steps (skipped " << result.skipped_steps
            << "), final loss " << result.last_loss << "\n";
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";
  return 0;
}

void print_report_table(const MetricReport& agg, const std::vector<MetricReport>* per_clip) {
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof buf, "%7.4f", *v);
    else
      std::snprintf(buf, sizeof buf, "%7s", "-");
    return std::string(buf);
  };
  std::printf("%-12s %8s %8s %8s\n", "", "AJ", "d_avg", "OA");
  if (per_clip)
    for (size_t i = 0; i < per_clip->size(); ++i)
      std::printf("clip %-7zu %8s %8s %8s\n", i, cell((*per_clip)[i].average_jaccard).c_str(),
                  cell((*per_clip)[i].delta_avg).c_str(), cell((*per_clip)[i].occlusion_accuracy).c_str());
  std::printf("%-12s %8s %8s %8s\n", "aggregate", cell(agg.average_jaccard).c_str(), cell(agg.delta_avg).c_str(),
              cell(agg.occlusion_accuracy).c_str());
}

int cmd_eval(RunConfig& cfg, bool per_clip_rows, bool oracle) {
  if (cfg.data_dir.empty()) throw std::invalid_argument("eval: --data is required");
  if (cfg.checkpoint.empty() && !oracle) throw std::invalid_argument("eval: --checkpoint is required");
  auto files = list_dataset(cfg.data_dir);
  std::vector<MetricReport> reports;
  MetricReport agg;
  int iters = cfg.eval_iters;

  if (oracle) {
    // ground-truth tracks fed back as predictions: metric plumbing check
    for (const auto& f : files) {
      auto [clip, gt] = read_clip(f);
      reports.push_back(
          evaluate_tracking(gt.tracks, gt.visibility, gt.tracks, gt.visibility, clip.height(), clip.width()));
    }
    agg = aggregate_reports(reports);
  } else {
    auto ck = load_checkpoint(cfg.checkpoint);
    cfg.model = model_config_from_json(ck.model_config_json);
    auto model = make_model<float>(cfg.model, 0);
    restore_checkpoint(ck, model, nullptr, "");
    if (iters <= 0) iters = cfg.model.iters;
    agg = evaluate_dataset(model, files, 0, iters, cfg.threads, &reports);
    if (!cfg.dump_tracks.empty()) {
      fs::create_directories(cfg.dump_tracks);
      for (size_t i = 0; i < files.size(); ++i) {
        auto [clip, gt] = read_clip(files[size_t(i)]);
        auto res = track(model, clip, iters);
        char buf[32];
        std::snprintf(buf, sizeof buf, "tracks_%05zu.json", i);
        write_tracks_json((fs::path(cfg.dump_tracks) / buf).string(), res);
      }
    }
  }
  echo_config(cfg);
  std::cout << "eval: " << files.size() << " clips, K=" << (oracle ? 0 : iters) << "\n";
  print_report_table(agg, per_clip_rows ? &reports : nullptr);
  nlohmann::json out = nlohmann::json::parse(agg.to_json());
  out["clips"] = files.size();
  out["iters"] = iters;
  if (!cfg.out.empty()) {
    atomic_write_file(cfg.out, out.dump(2) + "\n");
    std::cout << "report: " << cfg.out << "\n";
  }
  return 0;
}

int cmd_track(RunConfig& cfg, const std::string& clip_path) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("track: --checkpoint is required");
  if (cfg.out.empty()) throw std::invalid_argument("track: --out is required");
  auto ck = load_checkpoint(cfg.checkpoint);
  cfg.model = model_config_from_json(ck.model_config_json);
  auto model = make_model<float>(cfg.model, 0);
  restore_checkpoint(ck, model, nullptr, "");
  const int iters = cfg.eval_iters > 0 ? cfg.eval_iters : cfg.model.iters;
  auto [clip, gt] = read_clip(clip_path);
  auto res = track(model, clip, iters);
  write_tracks_json(cfg.out, res);
  std::cout << "tracked " << res.u.extent(1) << " points over " << res.u.extent(0) << " frames (K=" << iters
            << ") -> " << cfg.out << "\n";
  return 0;
}

int cmd_flow(RunConfig& cfg, const std::string& a_path, const std::string& b_path, const std::string& gt_path) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("flow: --checkpoint is required");
  auto fa = load_frame(a_path);
  auto fb = load_frame(b_path);
  if (fa.shape() != fb.shape()) throw std::invalid_argument("flow: frames differ in size");
  auto ck = load_checkpoint(cfg.checkpoint);
  cfg.model = model_config_from_json(ck.model_config_json);
  auto model = make_model<float>(cfg.model, 0);
  restore_checkpoint(ck, model, nullptr, "");
  const int iters = cfg.eval_iters > 0 ? cfg.eval_iters : cfg.model.iters;

  const int64_t h = fa.extent(1), w = fa.extent(2);
  VideoClip clip;
  clip.frames = Tensor<float>({2, 3, h, w});
  std::memcpy(clip.frames.data(), fa.data(), size_t(fa.numel()) * 4);
  std::memcpy(clip.frames.data() + fa.numel(), fb.data(), size_t(fb.numel()) * 4);
  auto res = track(model, clip, iters);

  // dense per-pixel flow from the track field
  Tensor<float> pixels({h * w, 2});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      pixels.data()[(y * w + x) * 2] = float(x);
      pixels.data()[(y * w + x) * 2 + 1] = float(y);
    }
  auto sampled = sample_tracks_at(res, pixels);
  Tensor<float> flow({2, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    flow.data()[i] = sampled.tracks.data()[(h * w + i) * 2] - pixels.data()[2 * i];
    flow.data()[h * w + i] = sampled.tracks.data()[(h * w + i) * 2 + 1] - pixels.data()[2 * i + 1];
  }
  if (!cfg.out.empty()) {
    save_tensor(cfg.out, flow);
    std::cout << "flow (2x" << h << "x" << w << ", K=" << iters << ") -> " << cfg.out << "\n";
  }
  if (!gt_path.empty()) {
    auto gt = load_tensor(gt_path);
    check_dim(gt.shape() == flow.shape(), "flow: ground truth shape mismatch");
    auto m = flow_metrics(flow, gt, Tensor<float>{});
    std::printf("EPE %.4f  Fl-all %.4f  1px %.4f\n", m.epe.value_or(0), m.fl_all.value_or(0),
                m.one_px.value_or(0));
    auto bins = epe_by_magnitude(flow, gt, Tensor<float>{}, {1, 3, 8, 16});
    for (const auto& b : bins)
      if (b.epe)
        std::printf("  |gt| in [%g, %g): EPE %.4f over %lld px\n", b.lo, b.hi, *b.epe,
                    static_cast<long long>(b.count));
  }
  return 0;
}

int cmd_viz(RunConfig& cfg, const std::string& clip_path, const std::string& tracks_path) {
  if (cfg.out.empty()) throw std::invalid_argument("viz: --out is required");
  auto [clip, gt] = read_clip(clip_path);
  auto tf = read_tracks_json(tracks_path);
  if (tf.t_plus_1 != clip.frame_count())
    throw std::runtime_error("viz: tracks cover " + std::to_string(tf.t_plus_1) + " frames, clip has " +
                             std::to_string(clip.frame_count()));
  auto paths = write_track_overlays(cfg.out, clip, tf, cfg.viz_stride);
  std::cout << "wrote " << paths.size() << " overlay frames to " << cfg.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  // pass 1: pick up --config so file values become the defaults flags override
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") {
      std::ifstream is(argv[i + 1]);
      if (!is) {
        std::cerr << "cannot open config file " << argv[i + 1] << "\n";
        return 2;
      }
      try {
        config_from_json(nlohmann::json::parse(is), cfg);
      } catch (const std::exception& e) {
        std::cerr << "bad config file: " << e.what() << "\n";
        return 2;
      }
    }

  CLI::App app{"warping-based dense point tracker"};
  app.require_subcommand(1);
  std::string config_path, clip_path, tracks_path, frame_a, frame_b, gt_path;
  bool per_clip_rows = false, oracle = false;
  int stride_ratio = 0;
  app.add_option("--config", config_path, "JSON config file (flags override file values)");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", cfg.seed, "run seed");
    sub->add_option("--threads", cfg.threads, "worker threads (env WARPTRACK_THREADS as fallback)");
    sub->add_option("--out", cfg.out, "output path");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic clip dataset");
  add_common(synth);
  synth->add_option("--clips", cfg.clips, "number of clips");
  synth->add_option("--frames", cfg.scene.targets_max, "target frames per clip")
      ->each([&](const std::string& v) { cfg.scene.targets_min = std::stoi(v); });
  synth->add_option("--canvas-height", cfg.scene.height);
  synth->add_option("--canvas-width", cfg.scene.width);
  synth->add_option("--sprites-min", cfg.scene.sprites_min);
  synth->add_option("--sprites-max", cfg.scene.sprites_max);
  synth->add_option("--speed-max", cfg.scene.speed_max);
  synth->add_option("--occluders", cfg.scene.occluders);
  synth->add_option("--camera-pan-prob", cfg.scene.camera_pan_prob);
  synth->add_option("--camera-speed-max", cfg.scene.camera_speed_max);
  synth->add_option("--query-stride", cfg.scene.query_stride);
  synth->add_option("--sparse-queries", cfg.scene.sparse_queries);

  auto* tr = app.add_subcommand("train", "train the tracker");
  add_common(tr);
  tr->add_option("--data", cfg.data_dir, "training dataset directory")->required();
  tr->add_option("--holdout", cfg.holdout_dir, "held-out dataset for periodic eval");
  tr->add_option("--steps", cfg.train.steps);
  tr->add_option("--batch", cfg.train.batch);
  tr->add_option("--iters", cfg.model.iters, "refinement iterations K");
  tr->add_option("--lr", cfg.train.optim.lr);
  tr->add_option("--warmup", cfg.train.optim.warmup_steps);
  tr->add_option("--weight-decay", cfg.train.optim.weight_decay);
  tr->add_option("--stride-ratio", stride_ratio, "indexing stride (2, 4, 8, 16)");
  tr->add_option("--ablate", cfg.ablate, "no-temporal | no-warp | single-pass");
  tr->add_option("--resume", cfg.resume, "checkpoint to resume from");
  tr->add_option("--save-every", cfg.train.save_every);
  tr->add_option("--eval-every", cfg.train.eval_every);
  tr->add_option("--eval-clips", cfg.train.eval_clips);
  tr->add_flag("--fast-reduce", cfg.train.fast_reduce, "per-worker gradient reduction");
  tr->add_flag("--no-augment", [&](int64_t) { cfg.train.augment = false; }, "disable frame-rate augmentation");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(ev);
  ev->add_option("--data", cfg.data_dir)->required();
  ev->add_option("--checkpoint", cfg.checkpoint);
  ev->add_option("--iters", cfg.eval_iters, "refinement iterations at eval time");
  ev->add_option("--dump-tracks", cfg.dump_tracks, "directory for per-clip track JSON");
  ev->add_flag("--per-clip", per_clip_rows, "print per-clip rows");
  ev->add_flag("--oracle", oracle, "score ground truth against itself (plumbing check)");

  auto* tk = app.add_subcommand("track", "track one clip and write the track field JSON");
  add_common(tk);
  tk->add_option("--checkpoint", cfg.checkpoint)->required();
  tk->add_option("--clip", clip_path)->required();
  tk->add_option("--iters", cfg.eval_iters);

  auto* fl = app.add_subcommand("flow", "two-frame optical flow mode");
  add_common(fl);
  fl->add_option("--checkpoint", cfg.checkpoint)->required();
  fl->add_option("frame_a", frame_a, "first frame (.ppm or WTT1 [3,h,w])")->required();
  fl->add_option("frame_b", frame_b, "second frame")->required();
  fl->add_option("--gt", gt_path, "ground-truth flow (WTT1 [2,h,w])");
  fl->add_option("--iters", cfg.eval_iters);

  auto* vz = app.add_subcommand("viz", "render track overlays as PPM frames");
  add_common(vz);
  vz->add_option("--clip", clip_path)->required();
  vz->add_option("--tracks", tracks_path)->required();
  vz->add_option("--viz-stride", cfg.viz_stride, "point subsampling for the overlay");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    cfg.threads = resolve_threads(cfg.threads, sub->count("--threads") > 0);
    if (stride_ratio > 0) {
      cfg.model.stride = stride_ratio;
      cfg.model.patch = patch_for_stride(stride_ratio);
    }
    if (sub == synth) return cmd_synth(cfg);
    if (sub == tr) return cmd_train(cfg);
    if (sub == ev) return cmd_eval(cfg, per_clip_rows, oracle);
    if (sub == tk) return cmd_track(cfg, clip_path);
    if (sub == fl) return cmd_flow(cfg, frame_a, frame_b, gt_path);
    if (sub == vz) return cmd_viz(cfg, clip_path, tracks_path);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
