#pragma once

#include <map>

#include "warptrack/model.hpp"
#include "warptrack/optim.hpp"

namespace warptrack {

// 64-bit FNV-1a, used to fingerprint the effective run configuration
uint64_t fnv1a64(const std::string& s);
std::string hash_hex(uint64_t h);

// --- WTC1 checkpoint container ----------------------------------------------
// magic "WTCHKPT1" | u32 LE manifest length | JSON manifest {"step",
// "config_hash", "tensors":[{"name","shape","offset"}...]} | concatenated
// WTT1 blobs (offsets relative to the end of the manifest). Tensor order is
// the model visitation order followed by optimizer moments, so identical
// states serialize to identical bytes.

void save_checkpoint(const std::string& path, Model<float>& model, const OptimState<float>* opt, int64_t step,
                     const std::string& config_hash);

struct LoadedCheckpoint {
  int64_t step = 0;
  std::string config_hash;
  std::string model_config_json;  // architecture recorded alongside the weights
  std::map<std::string, Tensor<float>> tensors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// restores parameters (and optimizer state when present); throws on a
// config-hash mismatch or missing/mis-shaped tensors
void restore_checkpoint(const LoadedCheckpoint& ck, Model<float>& model, OptimState<float>* opt,
                        const std::string& expect_hash);

}  // namespace warptrack
