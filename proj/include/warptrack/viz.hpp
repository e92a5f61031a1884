#pragma once

#include <string>

#include "warptrack/model.hpp"
#include "warptrack/synth.hpp"

namespace warptrack {

// binary PPM (P6), values scaled from [0,1]
void write_ppm(const std::string& path, const Tensor<float>& image);  // [3,h,w]
Tensor<float> read_ppm(const std::string& path);

// One image per frame with track dots color-coded by their frame-0 position;
// dots predicted occluded (visibility <= 0.5) render at 40% intensity.
// point_stride subsamples the dense grid. Returns the written paths.
std::vector<std::string> write_track_overlays(const std::string& dir, const VideoClip& clip,
                                              const TrackFile& tracks, int point_stride);

}  // namespace warptrack
