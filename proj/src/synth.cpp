#include "warptrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace warptrack {

namespace {

constexpr char kClipMagic[8] = {'W', 'T', 'V', 'I', 'D', 'E', 'O', '1'};

int texture_id(const std::string& name, Rng& rng) {
  if (name == "checker") return 0;
  if (name == "noise") return 1;
  if (name == "gradient") return 2;
  if (name == "mixed") return int(rng.uniform_int(0, 2));
  throw std::invalid_argument("unknown texture type: " + name);
}

// deterministic value noise on integer cells
double cell_noise(int64_t x, int64_t y, uint64_t salt) {
  uint64_t v = splitmix64(salt ^ (uint64_t(x) * 0x9ddfea08eb382d69ull) ^ (uint64_t(y) + 0x7f4a7c15ull));
  return double(v >> 11) * 0x1.0p-53;
}

void texture_color(int tex, double lx, double ly, double w, double h, double cell, const float* ca, const float* cb,
                   uint64_t salt, float* rgb) {
  double t;
  switch (tex) {
    case 0: {  // checker
      const int64_t ix = int64_t(std::floor(lx / cell)), iy = int64_t(std::floor(ly / cell));
      t = double((ix + iy) & 1);
      break;
    }
    case 1:  // blocky value noise, 3px cells
      t = cell_noise(int64_t(std::floor(lx / 3.0)), int64_t(std::floor(ly / 3.0)), salt);
      break;
    default:  // diagonal gradient across the extent
      t = 0.5 * (lx / std::max(w, 1.0) + ly / std::max(h, 1.0));
      t -= std::floor(t);
      break;
  }
  for (int c = 0; c < 3; ++c) rgb[c] = float(double(ca[c]) + (double(cb[c]) - double(ca[c])) * t);
}

bool layer_covers(const SceneLayer& l, double sx, double sy, double px, double py) {
  const double lx = px - sx, ly = py - sy;
  if (lx < 0 || ly < 0 || lx >= l.w || ly >= l.h) return false;
  if (!l.ellipse) return true;
  const double nx = 2.0 * lx / l.w - 1.0, ny = 2.0 * ly / l.h - 1.0;
  return nx * nx + ny * ny <= 1.0;
}

}  // namespace

void SceneSpec::validate() const {
  if (height < 8 || width < 8) throw std::invalid_argument("scene: canvas too small");
  if (targets_min < 1 || targets_max < targets_min) throw std::invalid_argument("scene: bad target-frame range");
  if (sprites_min < 1 || sprites_max < sprites_min) throw std::invalid_argument("scene: bad sprite count range");
  if (sprite_size_min <= 1 || sprite_size_max < sprite_size_min)
    throw std::invalid_argument("scene: bad sprite size range");
  if (speed_max < 0 || camera_speed_max < 0) throw std::invalid_argument("scene: negative speed bound");
  if (speed_max > std::min(height, width) / 4.0)
    throw std::invalid_argument("scene: speed bound too large for the canvas");
  if (occluders < 0) throw std::invalid_argument("scene: negative occluder count");
  if (query_stride < 1) throw std::invalid_argument("scene: bad query stride");
  if (sparse_queries < 0) throw std::invalid_argument("scene: bad sparse query count");
}

void SceneLayer::pos(double t, double& x, double& y) const {
  x = x0 + vx * t;
  y = y0 + vy * t;
  if (sinusoid) {
    x += amp_x * (std::sin(omega * t + phase) - std::sin(phase));
    y += amp_y * (std::sin(omega * t + phase * 1.7) - std::sin(phase * 1.7));
  }
}

void Scene::camera(double t, double& cx, double& cy) const {
  cx = cam_vx * t;
  cy = cam_vy * t;
}

int Scene::winner_at(double t, int64_t px, int64_t py) const {
  double cx, cy;
  camera(t, cx, cy);
  int best = -1;
  double best_depth = 1e30;
  for (size_t i = 0; i < layers.size(); ++i) {
    const SceneLayer& l = layers[i];
    if (l.depth >= best_depth) continue;
    double lx, ly;
    l.pos(t, lx, ly);
    if (layer_covers(l, lx - cx, ly - cy, double(px), double(py))) {
      best = int(i);
      best_depth = l.depth;
    }
  }
  return best;
}

Scene build_scene(const SceneSpec& spec) {
  spec.validate();
  Scene s;
  s.spec = spec;
  Rng rng(mix_seed(spec.seed, 0xa11ce5cell));
  s.target_frames = int(rng.uniform_int(spec.targets_min, spec.targets_max));

  auto pick_color = [&](float* c, double lo, double hi) {
    for (int i = 0; i < 3; ++i) c[i] = float(rng.uniform(lo, hi));
  };

  s.bg_texture = texture_id(spec.background, rng);
  pick_color(s.bg_color_a, 0.05, 0.45);
  pick_color(s.bg_color_b, 0.25, 0.6);
  s.bg_cell = rng.uniform(6.0, 14.0);
  s.bg_salt = rng.next_u64();
  if (rng.bernoulli(spec.camera_pan_prob)) {
    const double ang = rng.uniform(0.0, 6.283185307179586);
    const double v = rng.uniform(0.5, spec.camera_speed_max);
    s.cam_vx = v * std::cos(ang);
    s.cam_vy = v * std::sin(ang);
  } else {
    s.cam_vx = s.cam_vy = 0.0;
  }

  const int sprites = int(rng.uniform_int(spec.sprites_min, spec.sprites_max));
  const int total = sprites + spec.occluders;
  for (int i = 0; i < total; ++i) {
    const bool occ = i >= sprites;
    SceneLayer l{};
    l.w = rng.uniform(spec.sprite_size_min, spec.sprite_size_max);
    l.h = rng.uniform(spec.sprite_size_min, spec.sprite_size_max);
    l.x0 = rng.uniform(-l.w * 0.25, spec.width - l.w * 0.75);
    l.y0 = rng.uniform(-l.h * 0.25, spec.height - l.h * 0.75);
    l.ellipse = rng.bernoulli(0.35);
    l.texture = texture_id(spec.texture, rng);
    l.cell = rng.uniform(3.0, 7.0);
    pick_color(l.color_a, 0.2, 1.0);
    pick_color(l.color_b, 0.0, 0.8);
    l.noise_salt = rng.next_u64();
    if (occ) {
      l.vx = l.vy = 0.0;
      l.sinusoid = false;
    } else {
      const double ang = rng.uniform(0.0, 6.283185307179586);
      const double v = rng.uniform(0.0, spec.speed_max);
      l.vx = v * std::cos(ang);
      l.vy = v * std::sin(ang);
      l.sinusoid = rng.bernoulli(spec.sinusoid_prob);
      if (l.sinusoid) {
        l.amp_x = rng.uniform(-4.0, 4.0);
        l.amp_y = rng.uniform(-4.0, 4.0);
        l.omega = rng.uniform(0.3, 1.2);
        l.phase = rng.uniform(0.0, 6.283185307179586);
      }
    }
    // occluders nearest; strictly distinct depths throughout
    l.depth = occ ? double(i - sprites) : double(spec.occluders + 1 + i) + rng.uniform(0.0, 0.5);
    s.layers.push_back(l);
  }
  return s;
}

namespace {

void render_frame(const Scene& s, double t, float* rgb, int* winner) {
  const int64_t h = s.spec.height, w = s.spec.width;
  double cx, cy;
  s.camera(t, cx, cy);
  std::vector<double> sx(s.layers.size()), sy(s.layers.size());
  for (size_t i = 0; i < s.layers.size(); ++i) {
    double lx, ly;
    s.layers[i].pos(t, lx, ly);
    sx[i] = lx - cx;
    sy[i] = ly - cy;
  }
  const int64_t plane = h * w;
  for (int64_t py = 0; py < h; ++py)
    for (int64_t px = 0; px < w; ++px) {
      int best = -1;
      double best_depth = 1e30;
      for (size_t i = 0; i < s.layers.size(); ++i) {
        if (s.layers[i].depth < best_depth &&
            layer_covers(s.layers[i], sx[i], sy[i], double(px), double(py))) {
          best = int(i);
          best_depth = s.layers[i].depth;
        }
      }
      float c[3];
      if (best < 0) {
        const double wx = double(px) + cx, wy = double(py) + cy;
        texture_color(s.bg_texture, wx, wy, double(w), double(h), s.bg_cell, s.bg_color_a, s.bg_color_b, s.bg_salt,
                      c);
      } else {
        const SceneLayer& l = s.layers[size_t(best)];
        texture_color(l.texture, double(px) - sx[size_t(best)], double(py) - sy[size_t(best)], l.w, l.h, l.cell,
                      l.color_a, l.color_b, l.noise_salt, c);
      }
      const int64_t at = py * w + px;
      winner[at] = best;
      for (int ch = 0; ch < 3; ++ch) rgb[ch * plane + at] = std::min(std::max(c[ch], 0.0f), 1.0f);
    }
}

}  // namespace

std::pair<VideoClip, GroundTruth> generate_clip(const SceneSpec& spec) {
  return generate_from_scene(build_scene(spec));
}

std::pair<VideoClip, GroundTruth> generate_from_scene(const Scene& scene) {
  const SceneSpec& spec = scene.spec;
  const int64_t h = spec.height, w = spec.width;
  const int64_t tplus = scene.target_frames + 1;
  const int64_t plane = h * w;

  VideoClip clip;
  clip.frames = Tensor<float>({tplus, 3, h, w});
  std::vector<int> winners(size_t(tplus * plane));
  for (int64_t t = 0; t < tplus; ++t)
    render_frame(scene, double(t), clip.frames.data() + t * 3 * plane, winners.data() + t * plane);

  // queries: dense stride grid at cell centers, or random sparse points
  std::vector<double> qx, qy;
  if (spec.sparse_queries > 0) {
    Rng qrng(mix_seed(spec.seed, 0x51ee7));
    for (int i = 0; i < spec.sparse_queries; ++i) {
      qx.push_back(qrng.uniform(0.0, double(w - 1)));
      qy.push_back(qrng.uniform(0.0, double(h - 1)));
    }
  } else {
    const int q = spec.query_stride;
    const double off = (q - 1) * 0.5;
    for (int64_t iy = 0; iy * q < h; ++iy)
      for (int64_t ix = 0; ix * q < w; ++ix) {
        qx.push_back(double(ix * q) + off);
        qy.push_back(double(iy * q) + off);
      }
  }
  const int64_t n = int64_t(qx.size());

  GroundTruth gt;
  gt.query_points = Tensor<float>({n, 2});
  gt.tracks = Tensor<float>({tplus, n, 2});
  gt.visibility = Tensor<float>({tplus, n});

  // ownership: compositing winner at the rounded query pixel in frame 0
  std::vector<int> owner(static_cast<size_t>(n), -1);
  for (int64_t i = 0; i < n; ++i) {
    gt.query_points.data()[2 * i] = float(qx[size_t(i)]);
    gt.query_points.data()[2 * i + 1] = float(qy[size_t(i)]);
    const int64_t rx = std::lround(qx[size_t(i)]), ry = std::lround(qy[size_t(i)]);
    const int64_t cx = std::min(std::max(rx, int64_t(0)), w - 1);
    const int64_t cy = std::min(std::max(ry, int64_t(0)), h - 1);
    owner[size_t(i)] = winners[size_t(cy * w + cx)];
  }

  for (int64_t t = 0; t < tplus; ++t) {
    double camx, camy;
    scene.camera(double(t), camx, camy);
    for (int64_t i = 0; i < n; ++i) {
      double x, y;
      if (owner[size_t(i)] < 0) {
        x = qx[size_t(i)] - camx;
        y = qy[size_t(i)] - camy;
      } else {
        const SceneLayer& l = scene.layers[size_t(owner[size_t(i)])];
        double p0x, p0y, ptx, pty;
        l.pos(0.0, p0x, p0y);
        l.pos(double(t), ptx, pty);
        x = qx[size_t(i)] + (ptx - p0x) - camx;
        y = qy[size_t(i)] + (pty - p0y) - camy;
      }
      gt.tracks.data()[(t * n + i) * 2] = float(x);
      gt.tracks.data()[(t * n + i) * 2 + 1] = float(y);
      const int64_t rx = std::lround(x), ry = std::lround(y);
      bool vis = rx >= 0 && rx < w && ry >= 0 && ry < h;
      if (vis) vis = winners[size_t(t * plane + ry * w + rx)] == owner[size_t(i)];
      gt.visibility.data()[t * n + i] = vis ? 1.0f : 0.0f;
    }
  }
  return {std::move(clip), std::move(gt)};
}

std::pair<VideoClip, GroundTruth> subsample_frames(const VideoClip& clip, const GroundTruth& gt, int64_t stride,
                                                   int64_t len) {
  const int64_t t = clip.frame_count() - 1;
  check_dim(stride >= 1 && len >= 1 && len * stride <= t, "subsample_frames: selection exceeds the clip");
  std::vector<int64_t> keep{0};
  for (int64_t i = 1; i <= len; ++i) keep.push_back(i * stride);

  const int64_t h = clip.height(), w = clip.width(), n = gt.point_count();
  const int64_t plane = 3 * h * w;
  VideoClip out_clip;
  out_clip.frames = Tensor<float>({int64_t(keep.size()), 3, h, w});
  GroundTruth out_gt;
  out_gt.tracks = Tensor<float>({int64_t(keep.size()), n, 2});
  out_gt.visibility = Tensor<float>({int64_t(keep.size()), n});
  out_gt.query_points = gt.query_points.clone();
  for (size_t j = 0; j < keep.size(); ++j) {
    const int64_t src = keep[j];
    std::memcpy(out_clip.frames.data() + int64_t(j) * plane, clip.frames.data() + src * plane,
                size_t(plane) * sizeof(float));
    std::memcpy(out_gt.tracks.data() + int64_t(j) * n * 2, gt.tracks.data() + src * n * 2,
                size_t(n) * 2 * sizeof(float));
    std::memcpy(out_gt.visibility.data() + int64_t(j) * n, gt.visibility.data() + src * n,
                size_t(n) * sizeof(float));
  }
  return {std::move(out_clip), std::move(out_gt)};
}

std::pair<VideoClip, GroundTruth> temporal_augment(const VideoClip& clip, const GroundTruth& gt, uint64_t seed) {
  const int64_t tplus = clip.frame_count();
  check_dim(tplus >= 3, "temporal_augment: need at least 3 frames");
  const int64_t t = tplus - 1;
  Rng rng(mix_seed(seed, 0x7a6e));
  const int64_t stride = rng.uniform_int(1, std::min<int64_t>(3, t));
  const int64_t avail = t / stride;
  const int64_t len = rng.uniform_int(std::min<int64_t>(2, avail), avail);
  return subsample_frames(clip, gt, stride, len);
}

std::pair<VideoClip, GroundTruth> generate_uniform_shift_pair(uint64_t seed, double shift_x, double shift_y,
                                                              const SceneSpec& base) {
  SceneSpec spec = base;
  spec.seed = seed;
  spec.targets_min = spec.targets_max = 1;
  spec.speed_max = 0.0;      // sprites static in world space
  spec.sinusoid_prob = 0.0;
  spec.camera_pan_prob = 0.0;  // pan injected directly below
  Scene scene = build_scene(spec);
  scene.cam_vx = -shift_x;  // screen motion is minus the camera motion
  scene.cam_vy = -shift_y;

  const int64_t h = spec.height, w = spec.width, plane = h * w;
  VideoClip clip;
  clip.frames = Tensor<float>({2, 3, h, w});
  std::vector<int> winners(size_t(2 * plane));
  for (int64_t t = 0; t < 2; ++t)
    render_frame(scene, double(t), clip.frames.data() + t * 3 * plane, winners.data() + t * plane);

  // dense per-pixel ground truth: every pixel moves by exactly (shift_x, shift_y)
  const int64_t n = plane;
  GroundTruth gt;
  gt.query_points = Tensor<float>({n, 2});
  gt.tracks = Tensor<float>({2, n, 2});
  gt.visibility = Tensor<float>({2, n});
  for (int64_t py = 0; py < h; ++py)
    for (int64_t px = 0; px < w; ++px) {
      const int64_t i = py * w + px;
      gt.query_points.data()[2 * i] = float(px);
      gt.query_points.data()[2 * i + 1] = float(py);
      gt.tracks.data()[2 * i] = float(px);
      gt.tracks.data()[2 * i + 1] = float(py);
      gt.tracks.data()[(n + i) * 2] = float(px + shift_x);
      gt.tracks.data()[(n + i) * 2 + 1] = float(py + shift_y);
      gt.visibility.data()[i] = 1.0f;
      const double tx = px + shift_x, ty = py + shift_y;
      gt.visibility.data()[n + i] =
          (tx >= -0.5 && tx < w - 0.5 && ty >= -0.5 && ty < h - 0.5) ? 1.0f : 0.0f;
    }
  return {std::move(clip), std::move(gt)};
}

void write_clip(const std::string& path, const VideoClip& clip, const GroundTruth& gt) {
  nlohmann::json hdr;
  hdr["T"] = clip.targets();
  hdr["H"] = clip.height();
  hdr["W"] = clip.width();
  hdr["C"] = 3;
  const std::string h = hdr.dump();
  std::ostringstream os(std::ios::binary);
  os.write(kClipMagic, 8);
  uint32_t len = uint32_t(h.size());
  os.write(reinterpret_cast<const char*>(&len), 4);
  os.write(h.data(), std::streamsize(h.size()));
  write_wtt1(os, clip.frames);
  write_wtt1(os, gt.tracks);
  write_wtt1(os, gt.visibility);
  write_wtt1(os, gt.query_points);
  atomic_write_file(path, os.str());
}

std::pair<VideoClip, GroundTruth> read_clip(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open clip " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kClipMagic, 8) != 0)
    throw std::runtime_error("WTV1 format error at byte 0: bad magic in " + path);
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 4);
  if (is.gcount() != 4) throw std::runtime_error("WTV1 format error at byte 8: truncated header length");
  std::string h(len, '\0');
  is.read(h.data(), std::streamsize(len));
  if (is.gcount() != std::streamsize(len))
    throw std::runtime_error("WTV1 format error at byte 12: truncated header");
  nlohmann::json hdr = nlohmann::json::parse(h, nullptr, false);
  if (hdr.is_discarded()) throw std::runtime_error("WTV1 format error at byte 12: malformed JSON header");
  const int64_t base = 12 + int64_t(len);
  VideoClip clip;
  GroundTruth gt;
  clip.frames = read_wtt1(is, base);
  gt.tracks = read_wtt1(is, base);
  gt.visibility = read_wtt1(is, base);
  gt.query_points = read_wtt1(is, base);
  const int64_t t = hdr.value("T", int64_t(-1)), hh = hdr.value("H", int64_t(-1)), ww = hdr.value("W", int64_t(-1));
  if (clip.frames.extent(0) != t + 1 || clip.frames.extent(2) != hh || clip.frames.extent(3) != ww)
    throw std::runtime_error("WTV1 format error: header does not match payload shapes in " + path);
  return {std::move(clip), std::move(gt)};
}

std::vector<std::string> write_dataset(const std::string& dir, const SceneSpec& base, int clips, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> names;
  for (int i = 0; i < clips; ++i) {
    SceneSpec spec = base;
    spec.seed = mix_seed(seed, uint64_t(i));
    auto [clip, gt] = generate_clip(spec);
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%05d.wtv", i);
    write_clip((fs::path(dir) / buf).string(), clip, gt);
    names.emplace_back(buf);
  }
  nlohmann::json manifest;
  manifest["clips"] = names;
  manifest["count"] = clips;
  manifest["seed"] = seed;
  manifest["spec"] = {{"height", base.height},       {"width", base.width},
                      {"targets_min", base.targets_min}, {"targets_max", base.targets_max},
                      {"query_stride", base.query_stride}};
  atomic_write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  return names;
}

std::vector<std::string> list_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(is);
  std::vector<std::string> out;
  for (const auto& name : manifest["clips"]) out.push_back((fs::path(dir) / name.get<std::string>()).string());
  return out;
}

}  // namespace warptrack
