#pragma once

#include <functional>
#include <string>
#include <vector>

#include "warptrack/ops.hpp"
#include "warptrack/synth.hpp"

namespace warptrack {

struct ModelConfig {
  int channels = 32;           // C: feature channels after the upsampler
  int backbone_channels = 64;  // C_b: low-res channels at stride 8
  int hidden_dim = 64;         // D_h
  int token_dim = 64;          // transformer width
  int heads = 4;
  int mlp_ratio = 4;
  std::string blocks = "SSTSST";  // S: spatial attention, T: temporal attention
  int patch = 4;                  // head patch size in cells
  int stride = 2;                 // indexing stride s'
  int iters = 4;                  // refinement iterations K (training default)
  bool warp_enabled = true;       // --ablate no-warp
  bool temporal_enabled = true;   // --ablate no-temporal

  int token_channels() const { return 2 * channels + hidden_dim + 2; }
  void validate() const;
};

// indexing-stride -> head patch size pairing
int patch_for_stride(int stride);

// JSON round trip for the model configuration (stored in checkpoints)
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

template <typename S>
struct ConvLayer {
  Tensor<S> w, b;
  int stride = 1, pad = 1;
};

template <typename S>
struct NormLayer {
  Tensor<S> g, b;
};

template <typename S>
struct LinearLayer {
  Tensor<S> w, b;
};

template <typename S>
struct HeadBlock {
  bool temporal = false;
  NormLayer<S> ln1, ln2;
  LinearLayer<S> qkv, proj, fc1, fc2;
};

template <typename S>
struct Encoder {
  ConvLayer<S> c1, c2, c3;        // stride-2 stack down to C_b at 1/8
  ConvLayer<S> up1, up2;          // transposed convs (weights in [ci,co,k,k])
  ConvLayer<S> skip1, skip2;      // fuse skip connections
  ConvLayer<S> u1, u2, u3, uup, ufuse;  // raw-image branch
  ConvLayer<S> proj;              // concat -> C at stride 2
};

template <typename S>
struct Head {
  LinearLayer<S> phi;  // 2C -> D_h
  NormLayer<S> phi_norm;
  LinearLayer<S> patch_embed;  // patch^2 * token_channels -> token_dim
  std::vector<HeadBlock<S>> blocks;
  LinearLayer<S> unpatch;  // token_dim -> patch^2 * D_h
  Tensor<S> w_u, w_v, w_tau;  // readout matrices, bias-free
};

template <typename S>
struct Model {
  ModelConfig config;
  Encoder<S> encoder;
  Head<S> head;

  // stable naming for checkpoints and the optimizer
  void visit(const std::function<void(const std::string&, Tensor<S>&)>& cb);
  Model<S> clone() const;
};

template <typename S>
Model<S> make_model(const ModelConfig& config, uint64_t seed);

// dense per-frame features; cells are laid out row-major over the grid
template <typename S>
struct FeatureField {
  Tensor<S> features;  // [t+1, c, hc, wc]
  int stride = 2;
  int64_t hc() const { return features.extent(2); }
  int64_t wc() const { return features.extent(3); }
};

// low-res conv features at stride 8 plus the skip activations
template <typename S>
struct EncodeActs {
  Tensor<S> a1, a2, a3;
};

template <typename S>
EncodeActs<S> encode_lowres(const Encoder<S>& enc, const Tensor<S>& frames);

template <typename S>
FeatureField<S> upsample(const Encoder<S>& enc, const EncodeActs<S>& acts, const Tensor<S>& frames);

// full feature path at the model's indexing stride
template <typename S>
FeatureField<S> encode(const Model<S>& model, const Tensor<S>& frames);

// head state and per-iteration outputs
template <typename S>
struct TrackResult {
  Tensor<S> u;                    // [t+1,n,2], final displacements (pixels)
  Tensor<S> visibility;           // [t+1,n]
  Tensor<S> confidence;           // [t+1,n]
  std::vector<Tensor<S>> u_iters;  // u after each refinement step
  std::vector<Tensor<S>> v_iters;
  std::vector<Tensor<S>> tau_iters;
  Tensor<S> queries;  // [n,2] pixel positions of the tracked grid
  int64_t hc = 0, wc = 0;
  int stride = 2;
};

template <typename S>
std::pair<Tensor<S>, Tensor<S>> init_state(const Head<S>& head, const Tensor<S>& cells, const ModelConfig& cfg);

template <typename S>
Tensor<S> warp(const FeatureField<S>& field, const Tensor<S>& u, const Tensor<S>& query_base);

template <typename S>
std::pair<Tensor<S>, Tensor<S>> update_state(const Model<S>& model, const FeatureField<S>& field,
                                             const Tensor<S>& cells0, const Tensor<S>& u, const Tensor<S>& h,
                                             const Tensor<S>& query_base, const Tensor<S>& pos_embed);

template <typename S>
std::pair<Tensor<S>, Tensor<S>> readout(const Head<S>& head, const Tensor<S>& h);

// full pipeline: encode -> init -> K x (warp, assemble, update) -> readout.
// `with_iter_readouts` also evaluates v/tau after every iteration (training).
template <typename S>
TrackResult<S> track(const Model<S>& model, const VideoClip& clip, int iters, bool with_iter_readouts = false);

// same pipeline on an already-encoded field (timing/memory probes)
template <typename S>
TrackResult<S> track_field(const Model<S>& model, const FeatureField<S>& field, int iters,
                           bool with_iter_readouts = false);

// sinusoidal spatial+temporal token embeddings, [t, np, dim]
template <typename S>
Tensor<S> positional_embedding(int64_t t, int64_t hp, int64_t wp, int64_t dim);

// query pixel positions (cell centers) for a grid at the given stride
template <typename S>
Tensor<S> query_grid(int64_t hc, int64_t wc, int stride);

// Track-field JSON: {"T","N","stride","tracks","visibility","confidence"},
// tracks flattened t-major in input-pixel coordinates.
void write_tracks_json(const std::string& path, const TrackResult<float>& result);
struct TrackFile {
  int64_t t_plus_1 = 0, n = 0;
  int stride = 2;
  std::vector<float> tracks;      // (t+1)*n*2
  std::vector<float> visibility;  // (t+1)*n
  std::vector<float> confidence;
};
TrackFile read_tracks_json(const std::string& path);

// bilinear interpolation of the dense track output at arbitrary query points
// (non-differentiable; evaluation path)
struct SampledTracks {
  Tensor<float> tracks;      // [t+1,m,2]
  Tensor<float> visibility;  // [t+1,m] probabilities
};
SampledTracks sample_tracks_at(const TrackResult<float>& result, const Tensor<float>& points);

}  // namespace warptrack
