#include <cmath>

#include <json.hpp>

#include "warptrack/model.hpp"

namespace warptrack {

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["channels"] = c.channels;
  j["backbone_channels"] = c.backbone_channels;
  j["hidden_dim"] = c.hidden_dim;
  j["token_dim"] = c.token_dim;
  j["heads"] = c.heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["blocks"] = c.blocks;
  j["patch"] = c.patch;
  j["stride"] = c.stride;
  j["iters"] = c.iters;
  j["warp_enabled"] = c.warp_enabled;
  j["temporal_enabled"] = c.temporal_enabled;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.channels = j.value("channels", c.channels);
  c.backbone_channels = j.value("backbone_channels", c.backbone_channels);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.blocks = j.value("blocks", c.blocks);
  c.patch = j.value("patch", c.patch);
  c.stride = j.value("stride", c.stride);
  c.iters = j.value("iters", c.iters);
  c.warp_enabled = j.value("warp_enabled", c.warp_enabled);
  c.temporal_enabled = j.value("temporal_enabled", c.temporal_enabled);
  return c;
}

int patch_for_stride(int stride) {
  switch (stride) {
    case 2: return 4;
    case 4: return 2;
    case 8: return 1;
    case 16: return 1;
    default: throw std::invalid_argument("indexing stride must be one of 2, 4, 8, 16");
  }
}

void ModelConfig::validate() const {
  patch_for_stride(stride);
  if (channels < 1 || backbone_channels < 1 || hidden_dim < 1 || token_dim < 1)
    throw std::invalid_argument("model: channel widths must be positive");
  if (token_dim % heads != 0) throw std::invalid_argument("model: token_dim must divide into heads");
  if (token_dim % 4 != 0) throw std::invalid_argument("model: token_dim must be a multiple of 4");
  if (patch < 1 || iters < 1 || mlp_ratio < 1) throw std::invalid_argument("model: bad patch/iters/mlp_ratio");
  for (char c : blocks)
    if (c != 'S' && c != 'T') throw std::invalid_argument("model: block pattern must be S/T characters");
}

namespace {

template <typename S>
ConvLayer<S> make_conv(Rng& rng, int ci, int co, int k, int stride, int pad) {
  ConvLayer<S> l;
  const S bound = S(std::sqrt(1.0 / double(ci * k * k)));
  l.w = Tensor<S>::uniform({co, ci, k, k}, rng, -bound, bound, true);
  l.b = Tensor<S>::zeros({co}, true);
  l.stride = stride;
  l.pad = pad;
  return l;
}

// transposed conv weights live as [ci,co,k,k]
template <typename S>
ConvLayer<S> make_convt(Rng& rng, int ci, int co, int k, int stride, int pad) {
  ConvLayer<S> l;
  const S bound = S(std::sqrt(1.0 / double(ci * k * k)));
  l.w = Tensor<S>::uniform({ci, co, k, k}, rng, -bound, bound, true);
  l.b = Tensor<S>::zeros({co}, true);
  l.stride = stride;
  l.pad = pad;
  return l;
}

template <typename S>
LinearLayer<S> make_linear(Rng& rng, int64_t di, int64_t dout) {
  LinearLayer<S> l;
  const S bound = S(std::sqrt(1.0 / double(di)));
  l.w = Tensor<S>::uniform({di, dout}, rng, -bound, bound, true);
  l.b = Tensor<S>::zeros({dout}, true);
  return l;
}

template <typename S>
NormLayer<S> make_norm(int64_t d) {
  NormLayer<S> l;
  l.g = Tensor<S>::full({d}, S(1), true);
  l.b = Tensor<S>::zeros({d}, true);
  return l;
}

}  // namespace

template <typename S>
Model<S> make_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x30de1));
  Model<S> m;
  m.config = config;
  const int cb = config.backbone_channels, c = config.channels;

  m.encoder.c1 = make_conv<S>(rng, 3, 16, 3, 2, 1);
  m.encoder.c2 = make_conv<S>(rng, 16, 32, 3, 2, 1);
  m.encoder.c3 = make_conv<S>(rng, 32, cb, 3, 2, 1);
  m.encoder.up1 = make_convt<S>(rng, cb, 32, 4, 2, 1);
  m.encoder.skip1 = make_conv<S>(rng, 32 + 32, 32, 3, 1, 1);
  m.encoder.up2 = make_convt<S>(rng, 32, 32, 4, 2, 1);
  m.encoder.skip2 = make_conv<S>(rng, 32 + 16, 32, 1, 1, 0);
  m.encoder.u1 = make_conv<S>(rng, 3, 16, 3, 1, 1);
  m.encoder.u2 = make_conv<S>(rng, 16, 24, 3, 2, 1);
  m.encoder.u3 = make_conv<S>(rng, 24, 32, 3, 2, 1);
  m.encoder.uup = make_convt<S>(rng, 32, 24, 4, 2, 1);
  m.encoder.ufuse = make_conv<S>(rng, 24 + 24, 24, 1, 1, 0);
  m.encoder.proj = make_conv<S>(rng, 32 + 24, c, 1, 1, 0);

  m.head.phi = make_linear<S>(rng, 2 * c, config.hidden_dim);
  m.head.phi_norm = make_norm<S>(config.hidden_dim);
  m.head.patch_embed = make_linear<S>(rng, int64_t(config.patch) * config.patch * config.token_channels(),
                                      config.token_dim);
  for (char kind : config.blocks) {
    HeadBlock<S> blk;
    blk.temporal = kind == 'T';
    blk.ln1 = make_norm<S>(config.token_dim);
    blk.qkv = make_linear<S>(rng, config.token_dim, 3 * config.token_dim);
    blk.proj = make_linear<S>(rng, config.token_dim, config.token_dim);
    blk.ln2 = make_norm<S>(config.token_dim);
    blk.fc1 = make_linear<S>(rng, config.token_dim, int64_t(config.mlp_ratio) * config.token_dim);
    blk.fc2 = make_linear<S>(rng, int64_t(config.mlp_ratio) * config.token_dim, config.token_dim);
    m.head.blocks.push_back(std::move(blk));
  }
  m.head.unpatch = make_linear<S>(rng, config.token_dim, int64_t(config.patch) * config.patch * config.hidden_dim);
  // zero-initialized readouts: the first update starts from the stationary
  // field and v = tau = 0.5
  m.head.w_u = Tensor<S>::zeros({config.hidden_dim, 2}, true);
  m.head.w_v = Tensor<S>::zeros({config.hidden_dim, 1}, true);
  m.head.w_tau = Tensor<S>::zeros({config.hidden_dim, 1}, true);
  return m;
}

template <typename S>
void Model<S>::visit(const std::function<void(const std::string&, Tensor<S>&)>& cb) {
  auto conv = [&](const std::string& name, ConvLayer<S>& l) {
    cb(name + ".w", l.w);
    cb(name + ".b", l.b);
  };
  auto lin = [&](const std::string& name, LinearLayer<S>& l) {
    cb(name + ".w", l.w);
    cb(name + ".b", l.b);
  };
  auto norm = [&](const std::string& name, NormLayer<S>& l) {
    cb(name + ".g", l.g);
    cb(name + ".b", l.b);
  };
  conv("encoder.c1", encoder.c1);
  conv("encoder.c2", encoder.c2);
  conv("encoder.c3", encoder.c3);
  conv("encoder.up1", encoder.up1);
  conv("encoder.skip1", encoder.skip1);
  conv("encoder.up2", encoder.up2);
  conv("encoder.skip2", encoder.skip2);
  conv("encoder.u1", encoder.u1);
  conv("encoder.u2", encoder.u2);
  conv("encoder.u3", encoder.u3);
  conv("encoder.uup", encoder.uup);
  conv("encoder.ufuse", encoder.ufuse);
  conv("encoder.proj", encoder.proj);
  lin("head.phi", head.phi);
  norm("head.phi_norm", head.phi_norm);
  lin("head.patch_embed", head.patch_embed);
  for (size_t i = 0; i < head.blocks.size(); ++i) {
    const std::string p = "head.block" + std::to_string(i);
    norm(p + ".ln1", head.blocks[i].ln1);
    lin(p + ".qkv", head.blocks[i].qkv);
    lin(p + ".proj", head.blocks[i].proj);
    norm(p + ".ln2", head.blocks[i].ln2);
    lin(p + ".fc1", head.blocks[i].fc1);
    lin(p + ".fc2", head.blocks[i].fc2);
  }
  lin("head.unpatch", head.unpatch);
  cb("head.w_u", head.w_u);
  cb("head.w_v", head.w_v);
  cb("head.w_tau", head.w_tau);
}

template <typename S>
Model<S> Model<S>::clone() const {
  Model<S> out = *this;  // copy metadata and shared handles
  out.visit([](const std::string&, Tensor<S>& t) { t = t.clone(); });
  return out;
}

template Model<float> make_model<float>(const ModelConfig&, uint64_t);
template Model<double> make_model<double>(const ModelConfig&, uint64_t);
template struct Model<float>;
template struct Model<double>;

}  // namespace warptrack
