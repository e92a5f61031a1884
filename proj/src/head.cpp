#include <cmath>
#include <fstream>

#include <json.hpp>

#include "warptrack/model.hpp"

namespace warptrack {

template <typename S>
Tensor<S> query_grid(int64_t hc, int64_t wc, int stride) {
  Tensor<S> q({hc * wc, 2});
  const S off = S(stride - 1) * S(0.5);
  for (int64_t iy = 0; iy < hc; ++iy)
    for (int64_t ix = 0; ix < wc; ++ix) {
      q.data()[(iy * wc + ix) * 2] = S(ix * stride) + off;
      q.data()[(iy * wc + ix) * 2 + 1] = S(iy * stride) + off;
    }
  return q;
}

template <typename S>
Tensor<S> positional_embedding(int64_t t, int64_t hp, int64_t wp, int64_t dim) {
  check_dim(dim % 4 == 0, "positional_embedding: dim must be a multiple of 4");
  const int64_t np = hp * wp;
  Tensor<S> e({t, np, dim});
  const int64_t quarter = dim / 4;
  auto angle = [](double pos, int64_t i, int64_t span) {
    return pos / std::pow(10000.0, 2.0 * double(i) / double(2 * span));
  };
  // spatial: first half y, second half x (sin/cos pairs); temporal summed on top
  for (int64_t f = 0; f < t; ++f)
    for (int64_t py = 0; py < hp; ++py)
      for (int64_t px = 0; px < wp; ++px) {
        S* row = e.data() + (f * np + py * wp + px) * dim;
        for (int64_t i = 0; i < quarter; ++i) {
          const double ay = angle(double(py), i, quarter);
          const double ax = angle(double(px), i, quarter);
          const double at = angle(double(f), i, quarter);
          row[2 * i] = S(std::sin(ay) + std::sin(at));
          row[2 * i + 1] = S(std::cos(ay) + std::cos(at));
          row[2 * quarter + 2 * i] = S(std::sin(ax));
          row[2 * quarter + 2 * i + 1] = S(std::cos(ax));
        }
      }
  return e;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> init_state(const Head<S>& head, const Tensor<S>& cells, const ModelConfig& cfg) {
  check_dim(cells.rank() == 3 && cells.extent(2) == cfg.channels, "init_state: cells must be [t,n,c]");
  const int64_t t = cells.extent(0), n = cells.extent(1);
  Tensor<S> u = Tensor<S>::zeros({t, n, 2});
  auto paired = concat_channels<S>({broadcast_row0(cells), cells});  // F0 (+) F_t
  auto h = layer_norm(linear(paired, head.phi.w, head.phi.b), head.phi_norm.g, head.phi_norm.b, S(1e-5));
  return {std::move(u), std::move(h)};
}

template <typename S>
Tensor<S> warp(const FeatureField<S>& field, const Tensor<S>& u, const Tensor<S>& query_base) {
  if (!u.all_finite()) fail_numeric("warp: non-finite displacement field");
  auto coords = warp_coords(u, query_base, S(1) / S(field.stride));
  return warp_gather(field.features, coords);
}

namespace {

template <typename S>
Tensor<S> run_block(const HeadBlock<S>& blk, Tensor<S> tok, int heads) {
  const int64_t d = tok.shape().back();
  // attention sublayer (pre-norm); temporal blocks attend over frames per cell
  {
    auto x = layer_norm(tok, blk.ln1.g, blk.ln1.b, S(1e-5));
    if (blk.temporal) x = swap_axes01(x);
    auto qkv = linear(x, blk.qkv.w, blk.qkv.b);
    auto att = attention(slice_channels(qkv, 0, d), slice_channels(qkv, d, d), slice_channels(qkv, 2 * d, d), heads);
    if (blk.temporal) att = swap_axes01(att);
    tok = add(tok, linear(att, blk.proj.w, blk.proj.b));
  }
  {
    auto x = layer_norm(tok, blk.ln2.g, blk.ln2.b, S(1e-5));
    tok = add(tok, linear(gelu(linear(x, blk.fc1.w, blk.fc1.b)), blk.fc2.w, blk.fc2.b));
  }
  return tok;
}

}  // namespace

template <typename S>
std::pair<Tensor<S>, Tensor<S>> update_state(const Model<S>& model, const FeatureField<S>& field,
                                             const Tensor<S>& cells0, const Tensor<S>& u, const Tensor<S>& h,
                                             const Tensor<S>& query_base, const Tensor<S>& pos_embed) {
  const ModelConfig& cfg = model.config;
  const int64_t hc = field.hc(), wc = field.wc();
  Tensor<S> tok;
  {
    Tensor<S> z;
    {
      // no-warp ablation always reads the un-warped feature cells
      Tensor<S> g = cfg.warp_enabled ? warp(field, u, query_base) : channels_last(field.features);
      z = assemble_tokens(g, cells0, u, h);
    }
    tok = add(patchify_project(z, model.head.patch_embed.w, model.head.patch_embed.b, int(hc), int(wc), cfg.patch),
              pos_embed);
  }
  for (const auto& blk : model.head.blocks) {
    if (blk.temporal && !cfg.temporal_enabled) continue;
    tok = run_block(blk, tok, cfg.heads);
  }
  auto h_next = unpatchify_project(tok, model.head.unpatch.w, model.head.unpatch.b, int(hc), int(wc), cfg.patch,
                                   cfg.hidden_dim);
  auto du = linear(h_next, model.head.w_u);
  auto u_next = zero_row0(add(u, du));
  return {std::move(u_next), std::move(h_next)};
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> readout(const Head<S>& head, const Tensor<S>& h) {
  const int64_t t = h.extent(0), n = h.extent(1);
  auto v = reshape(sigmoid(linear(h, head.w_v)), {t, n});
  auto tau = reshape(sigmoid(linear(h, head.w_tau)), {t, n});
  return {std::move(v), std::move(tau)};
}

template <typename S>
TrackResult<S> track_field(const Model<S>& model, const FeatureField<S>& field, int iters, bool with_iter_readouts) {
  check_dim(iters >= 1, "track: need at least one iteration");
  const ModelConfig& cfg = model.config;
  const int64_t hc = field.hc(), wc = field.wc(), t = field.features.extent(0);
  check_dim(hc % cfg.patch == 0 && wc % cfg.patch == 0, "track: cell grid not divisible by the head patch size");

  TrackResult<S> result;
  result.hc = hc;
  result.wc = wc;
  result.stride = field.stride;
  result.queries = query_grid<S>(hc, wc, field.stride);

  auto cells = channels_last(field.features);
  auto cells0 = take_row0(cells);
  auto pos_embed = positional_embedding<S>(t, hc / cfg.patch, wc / cfg.patch, cfg.token_dim);
  // cell indices: the query grid mapped into the feature lattice
  Tensor<S> base({hc * wc, 2});
  for (int64_t iy = 0; iy < hc; ++iy)
    for (int64_t ix = 0; ix < wc; ++ix) {
      base.data()[(iy * wc + ix) * 2] = S(ix);
      base.data()[(iy * wc + ix) * 2 + 1] = S(iy);
    }

  auto [u, h] = init_state(model.head, cells, cfg);
  for (int k = 0; k < iters; ++k) {
    std::tie(u, h) = update_state(model, field, cells0, u, h, base, pos_embed);
    result.u_iters.push_back(u);
    if (with_iter_readouts) {
      auto [v, tau] = readout(model.head, h);
      result.v_iters.push_back(v);
      result.tau_iters.push_back(tau);
    }
  }
  if (with_iter_readouts) {
    result.visibility = result.v_iters.back();
    result.confidence = result.tau_iters.back();
  } else {
    auto [v, tau] = readout(model.head, h);
    result.visibility = v;
    result.confidence = tau;
  }
  result.u = u;
  return result;
}

template <typename S>
TrackResult<S> track(const Model<S>& model, const VideoClip& clip, int iters, bool with_iter_readouts) {
  const ModelConfig& cfg = model.config;
  Tensor<S> frames = cast<S>(clip.frames);
  // pad right/bottom so the encoder stride and head patch grid divide evenly
  const int64_t unit = std::max<int64_t>(8, int64_t(cfg.stride) * cfg.patch);
  const int64_t h = frames.extent(2), w = frames.extent(3);
  const int pad_b = int((unit - h % unit) % unit), pad_r = int((unit - w % unit) % unit);
  if (pad_b || pad_r) frames = reflect_pad2d(frames, 0, pad_r, 0, pad_b);
  FeatureField<S> field = encode(model, frames);
  return track_field(model, field, iters, with_iter_readouts);
}

void write_tracks_json(const std::string& path, const TrackResult<float>& result) {
  nlohmann::json j;
  const int64_t t = result.u.extent(0), n = result.u.extent(1);
  j["T"] = t - 1;
  j["N"] = n;
  j["stride"] = result.stride;
  std::vector<std::vector<float>> tracks;
  tracks.reserve(size_t(t * n));
  for (int64_t f = 0; f < t; ++f)
    for (int64_t i = 0; i < n; ++i)
      tracks.push_back({result.queries.data()[2 * i] + result.u.data()[(f * n + i) * 2],
                        result.queries.data()[2 * i + 1] + result.u.data()[(f * n + i) * 2 + 1]});
  j["tracks"] = tracks;
  j["visibility"] = std::vector<float>(result.visibility.data(), result.visibility.data() + t * n);
  j["confidence"] = std::vector<float>(result.confidence.data(), result.confidence.data() + t * n);
  atomic_write_file(path, j.dump() + "\n");
}

TrackFile read_tracks_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open tracks file " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  TrackFile f;
  f.t_plus_1 = j.at("T").get<int64_t>() + 1;
  f.n = j.at("N").get<int64_t>();
  f.stride = j.at("stride").get<int>();
  for (const auto& xy : j.at("tracks")) {
    f.tracks.push_back(xy[0].get<float>());
    f.tracks.push_back(xy[1].get<float>());
  }
  f.visibility = j.at("visibility").get<std::vector<float>>();
  f.confidence = j.at("confidence").get<std::vector<float>>();
  if (int64_t(f.visibility.size()) != f.t_plus_1 * f.n || int64_t(f.tracks.size()) != f.t_plus_1 * f.n * 2)
    throw std::runtime_error("tracks file is inconsistent: " + path);
  return f;
}

SampledTracks sample_tracks_at(const TrackResult<float>& result, const Tensor<float>& points) {
  check_dim(points.rank() == 2 && points.extent(1) == 2, "sample_tracks_at: points must be [m,2]");
  const int64_t t = result.u.extent(0), m = points.extent(0);
  const int64_t hc = result.hc, wc = result.wc;
  const float inv = 1.0f / float(result.stride);
  const float off = float(result.stride - 1) * 0.5f;
  SampledTracks out;
  out.tracks = Tensor<float>({t, m, 2});
  out.visibility = Tensor<float>({t, m});
  for (int64_t f = 0; f < t; ++f) {
    // lay the u/v fields out as [2,hc,wc] / [1,hc,wc] planes for sampling
    Tensor<float> uplane({2, hc, wc});
    Tensor<float> vplane({1, hc, wc});
    for (int64_t i = 0; i < hc * wc; ++i) {
      uplane.data()[i] = result.u.data()[(f * hc * wc + i) * 2];
      uplane.data()[hc * wc + i] = result.u.data()[(f * hc * wc + i) * 2 + 1];
      vplane.data()[i] = result.visibility.data()[f * hc * wc + i];
    }
    Tensor<float> cellpos({m, 2});
    for (int64_t i = 0; i < m; ++i) {
      cellpos.data()[2 * i] = (points.data()[2 * i] - off) * inv;
      cellpos.data()[2 * i + 1] = (points.data()[2 * i + 1] - off) * inv;
    }
    auto su = bilinear_sample(uplane, cellpos);
    auto sv = bilinear_sample(vplane, cellpos);
    for (int64_t i = 0; i < m; ++i) {
      out.tracks.data()[(f * m + i) * 2] = points.data()[2 * i] + su.data()[2 * i];
      out.tracks.data()[(f * m + i) * 2 + 1] = points.data()[2 * i + 1] + su.data()[2 * i + 1];
      out.visibility.data()[f * m + i] = sv.data()[i];
    }
  }
  return out;
}

#define WT_INSTANTIATE_HEAD(S)                                                                               \
  template Tensor<S> query_grid<S>(int64_t, int64_t, int);                                                   \
  template Tensor<S> positional_embedding<S>(int64_t, int64_t, int64_t, int64_t);                            \
  template std::pair<Tensor<S>, Tensor<S>> init_state<S>(const Head<S>&, const Tensor<S>&, const ModelConfig&); \
  template Tensor<S> warp<S>(const FeatureField<S>&, const Tensor<S>&, const Tensor<S>&);                    \
  template std::pair<Tensor<S>, Tensor<S>> update_state<S>(const Model<S>&, const FeatureField<S>&,          \
                                                           const Tensor<S>&, const Tensor<S>&,               \
                                                           const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template std::pair<Tensor<S>, Tensor<S>> readout<S>(const Head<S>&, const Tensor<S>&);                     \
  template TrackResult<S> track_field<S>(const Model<S>&, const FeatureField<S>&, int, bool);                \
  template TrackResult<S> track<S>(const Model<S>&, const VideoClip&, int, bool);

WT_INSTANTIATE_HEAD(float)
WT_INSTANTIATE_HEAD(double)

}  // namespace warptrack
