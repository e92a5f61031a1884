#include "warptrack/viz.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace warptrack {

void write_ppm(const std::string& path, const Tensor<float>& image) {
  check_dim(image.rank() == 3 && image.extent(0) == 3, "write_ppm: expected [3,h,w]");
  const int64_t h = image.extent(1), w = image.extent(2), plane = h * w;
  std::ostringstream os(std::ios::binary);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t i = 0; i < plane; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      const float v = image.data()[c * plane + i];
      os.put(char(std::lround(std::min(std::max(v, 0.0f), 1.0f) * 255.0f)));
    }
  atomic_write_file(path, os.str());
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 ppm: " + path);
  int64_t w = 0, h = 0, maxv = 0;
  is >> w >> h >> maxv;
  is.get();
  if (w <= 0 || h <= 0 || maxv != 255) throw std::runtime_error("unsupported ppm header in " + path);
  Tensor<float> img({3, h, w});
  const int64_t plane = h * w;
  std::vector<char> row(size_t(plane) * 3);
  is.read(row.data(), std::streamsize(row.size()));
  if (is.gcount() != std::streamsize(row.size())) throw std::runtime_error("truncated ppm " + path);
  for (int64_t i = 0; i < plane; ++i)
    for (int64_t c = 0; c < 3; ++c)
      img.data()[c * plane + i] = float(uint8_t(row[size_t(i * 3 + c)])) / 255.0f;
  return img;
}

namespace {

// stable point color from the normalized frame-0 position
void point_color(float nx, float ny, float* rgb) {
  rgb[0] = 0.25f + 0.75f * nx;
  rgb[1] = 0.25f + 0.75f * ny;
  rgb[2] = 0.9f - 0.6f * 0.5f * (nx + ny);
}

void put_dot(Tensor<float>& img, int64_t cx, int64_t cy, const float* rgb, float intensity) {
  const int64_t h = img.extent(1), w = img.extent(2), plane = h * w;
  // plus-shaped 5-pixel dot centered on the rounded position
  const int64_t offs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (auto& o : offs) {
    const int64_t x = cx + o[0], y = cy + o[1];
    if (x < 0 || x >= w || y < 0 || y >= h) continue;
    for (int64_t c = 0; c < 3; ++c) img.data()[c * plane + y * w + x] = rgb[c] * intensity;
  }
}

}  // namespace

std::vector<std::string> write_track_overlays(const std::string& dir, const VideoClip& clip,
                                              const TrackFile& tracks, int point_stride) {
  namespace fs = std::filesystem;
  check_dim(tracks.t_plus_1 == clip.frame_count(), "overlays: frame count mismatch");
  check_dim(point_stride >= 1, "overlays: bad point stride");
  fs::create_directories(dir);
  const int64_t h = clip.height(), w = clip.width(), plane = 3 * h * w, n = tracks.n;
  std::vector<std::string> paths;
  for (int64_t f = 0; f < tracks.t_plus_1; ++f) {
    Tensor<float> img({3, h, w});
    std::memcpy(img.data(), clip.frames.data() + f * plane, size_t(plane) * 4);
    for (int64_t i = 0; i < n; i += point_stride) {
      const float x0 = tracks.tracks[size_t(2 * i)], y0 = tracks.tracks[size_t(2 * i + 1)];
      float rgb[3];
      point_color(x0 / float(w), y0 / float(h), rgb);
      const float x = tracks.tracks[size_t((f * n + i) * 2)];
      const float y = tracks.tracks[size_t((f * n + i) * 2 + 1)];
      // occluded points render dimmed at 40% intensity
      const float intensity = tracks.visibility[size_t(f * n + i)] > 0.5f ? 1.0f : 0.4f;
      put_dot(img, std::lround(x), std::lround(y), rgb, intensity);
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03lld.ppm", static_cast<long long>(f));
    const std::string p = (fs::path(dir) / buf).string();
    write_ppm(p, img);
    paths.push_back(p);
  }
  return paths;
}

}  // namespace warptrack
