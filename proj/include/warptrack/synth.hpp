#pragma once

#include <optional>
#include <string>
#include <vector>

#include "warptrack/tensor.hpp"

namespace warptrack {

// Frame 0 is the query frame; frames 1..T are targets.
struct VideoClip {
  Tensor<float> frames;  // [(T+1),3,H,W], values in [0,1]
  int64_t frame_count() const { return frames.extent(0); }
  int64_t targets() const { return frames.extent(0) - 1; }
  int64_t height() const { return frames.extent(2); }
  int64_t width() const { return frames.extent(3); }
};

struct GroundTruth {
  Tensor<float> tracks;      // [(T+1),N,2] pixel positions, tracks[0] == query_points
  Tensor<float> visibility;  // [(T+1),N], 0/1
  Tensor<float> query_points;  // [N,2]
  int64_t point_count() const { return query_points.extent(0); }
};

struct SceneSpec {
  uint64_t seed = 0;
  int height = 64;
  int width = 96;
  int targets_min = 7;  // T range (number of target frames)
  int targets_max = 7;
  int sprites_min = 2;
  int sprites_max = 4;
  double sprite_size_min = 12.0;
  double sprite_size_max = 28.0;
  double speed_max = 5.0;  // px/frame
  double sinusoid_prob = 0.4;
  int occluders = 1;
  std::string texture = "mixed";     // checker|noise|gradient|mixed
  std::string background = "mixed";  // same choices
  double camera_pan_prob = 0.5;
  double camera_speed_max = 4.0;
  int query_stride = 2;    // dense query grid stride (cell centers)
  int sparse_queries = 0;  // >0: random query points instead of the dense grid

  void validate() const;
};

// Layered scene: occluders sit nearer than sprites, background behind all.
// Everything translates rigidly; the camera pan shifts the whole scene.
struct SceneLayer {
  double x0, y0, w, h;
  bool ellipse;
  int texture;  // 0 checker, 1 noise, 2 gradient
  double cell;
  float color_a[3], color_b[3];
  uint64_t noise_salt;
  double vx, vy;
  bool sinusoid;
  double amp_x, amp_y, omega, phase;
  double depth;  // strictly distinct; smaller = nearer

  // world-space top-left at frame t (equals screen space at t=0, camera at origin)
  void pos(double t, double& x, double& y) const;
};

struct Scene {
  SceneSpec spec;
  int target_frames;
  std::vector<SceneLayer> layers;
  int bg_texture;
  float bg_color_a[3], bg_color_b[3];
  double bg_cell;
  uint64_t bg_salt;
  double cam_vx, cam_vy;

  void camera(double t, double& cx, double& cy) const;
  // nearest covering layer at an integer pixel, -1 for background
  int winner_at(double t, int64_t px, int64_t py) const;
};

Scene build_scene(const SceneSpec& spec);

// Render + ground truth for an explicit scene (layer order is irrelevant:
// compositing picks the nearest covering layer).
std::pair<VideoClip, GroundTruth> generate_from_scene(const Scene& scene);

std::pair<VideoClip, GroundTruth> generate_clip(const SceneSpec& spec);

// Keep frame 0 plus target frames {stride, 2*stride, ..., len*stride};
// tracks/visibility rows are re-indexed identically.
std::pair<VideoClip, GroundTruth> subsample_frames(const VideoClip& clip, const GroundTruth& gt, int64_t stride,
                                                   int64_t len);

// Frame-rate/length augmentation: random stride and truncation via
// subsample_frames, deterministic in the seed.
std::pair<VideoClip, GroundTruth> temporal_augment(const VideoClip& clip, const GroundTruth& gt, uint64_t seed);

// Whole-scene uniform shift pair (static sprites + camera pan): a T=1 clip
// whose dense flow is exactly (-shift_x, -shift_y) everywhere.
std::pair<VideoClip, GroundTruth> generate_uniform_shift_pair(uint64_t seed, double shift_x, double shift_y,
                                                              const SceneSpec& base);

// --- WTV1 clip container ----------------------------------------------------
// magic "WTVIDEO1" | u32 LE header length | JSON {"T","H","W","C"} | WTT1
// blobs: frames, tracks, visibility, query points.
void write_clip(const std::string& path, const VideoClip& clip, const GroundTruth& gt);
std::pair<VideoClip, GroundTruth> read_clip(const std::string& path);

// Dataset directory: clip_%05d.wtv plus manifest.json.
std::vector<std::string> write_dataset(const std::string& dir, const SceneSpec& base, int clips, uint64_t seed);
std::vector<std::string> list_dataset(const std::string& dir);

}  // namespace warptrack
