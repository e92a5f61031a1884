#include <doctest.h>

#include "testutil.hpp"
#include "warptrack/model.hpp"

using namespace warptrack;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.backbone_channels = 16;
  cfg.hidden_dim = 8;
  cfg.token_dim = 8;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.blocks = "SST";
  cfg.patch = 4;
  cfg.stride = 2;
  cfg.iters = 2;
  return cfg;
}

VideoClip tiny_clip(uint64_t seed, int targets = 2, int h = 16, int w = 24) {
  SceneSpec spec;
  spec.seed = seed;
  spec.height = h;
  spec.width = w;
  spec.targets_min = spec.targets_max = targets;
  spec.sprites_min = 1;
  spec.sprites_max = 2;
  spec.sprite_size_min = 5;
  spec.sprite_size_max = 9;
  spec.speed_max = 3.0;
  spec.occluders = 0;
  return generate_clip(spec).first;
}

template <typename S>
FeatureField<S> random_field(uint64_t seed, int64_t t, int64_t c, int64_t hc, int64_t wc, bool rg = false) {
  Rng rng(seed);
  FeatureField<S> f;
  f.features = Tensor<S>::uniform({t, c, hc, wc}, rng, -1, 1, rg);
  f.stride = 2;
  return f;
}

}  // namespace

TEST_CASE("init_state: zero displacement, frame-symmetric hidden state, shapes") {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg, 3);
  auto field = random_field<double>(1, 3, cfg.channels, 8, 12);
  // make frame 2 identical to frame 0
  std::memcpy(field.features.data() + 2 * cfg.channels * 96, field.features.data(),
              size_t(cfg.channels * 96) * sizeof(double));
  auto cells = channels_last(field.features);
  auto [u, h] = init_state(model.head, cells, cfg);
  REQUIRE(u.shape() == Shape{3, 96, 2});
  REQUIRE(h.shape() == Shape{3, 96, cfg.hidden_dim});
  for (int64_t i = 0; i < u.numel(); ++i) CHECK(u.data()[i] == 0.0);
  // h(0) built from F0 (+) F0 equals h(2) built from F0 (+) F2 = F0 (+) F0
  for (int64_t i = 0; i < 96 * cfg.hidden_dim; ++i)
    CHECK(h.data()[i] == h.data()[2 * 96 * cfg.hidden_dim + i]);
}

TEST_CASE("warp: identity displacement reproduces the feature cells bit-exactly") {
  auto field = random_field<float>(5, 3, 4, 6, 8);
  auto base = Tensor<float>({48, 2});
  for (int64_t iy = 0; iy < 6; ++iy)
    for (int64_t ix = 0; ix < 8; ++ix) {
      base.data()[(iy * 8 + ix) * 2] = float(ix);
      base.data()[(iy * 8 + ix) * 2 + 1] = float(iy);
    }
  auto u = Tensor<float>::zeros({3, 48, 2});
  auto g = warp(field, u, base);
  auto cells = channels_last(field.features);
  REQUIRE(g.shape() == cells.shape());
  CHECK(std::memcmp(g.data(), cells.data(), size_t(g.numel()) * 4) == 0);
}

TEST_CASE("warp: constant integer displacement shifts cells exactly on the interior") {
  auto field = random_field<float>(6, 2, 3, 5, 7);
  auto base = Tensor<float>({35, 2});
  for (int64_t iy = 0; iy < 5; ++iy)
    for (int64_t ix = 0; ix < 7; ++ix) {
      base.data()[(iy * 7 + ix) * 2] = float(ix);
      base.data()[(iy * 7 + ix) * 2 + 1] = float(iy);
    }
  // displacement of s'*k pixels = k cells; k=2 here, stride 2 -> u = 4
  auto u = Tensor<float>::full({2, 35, 2}, 0.0f);
  for (int64_t i = 0; i < 2 * 35; ++i) u.data()[2 * i] = 4.0f;
  auto g = warp(field, u, base);
  auto cells = channels_last(field.features);
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t iy = 0; iy < 5; ++iy)
      for (int64_t ix = 0; ix < 5; ++ix)  // interior: shifted cell stays in range
        for (int64_t c = 0; c < 3; ++c)
          CHECK(g.data()[(t * 35 + iy * 7 + ix) * 3 + c] ==
                cells.data()[(t * 35 + iy * 7 + ix + 2) * 3 + c]);
}

TEST_CASE("warp: fractional displacements match a per-point bilinear oracle") {
  auto field = random_field<double>(7, 2, 3, 6, 9);
  Rng rng(8);
  const int64_t n = 54;
  auto base = query_grid<double>(6, 9, 2);  // pixel units
  Tensor<double> u({2, n, 2});
  for (int64_t i = 0; i < u.numel(); ++i) u.data()[i] = rng.uniform(-6.0, 6.0);
  // pixel-space query + displacement mapped into the cell lattice
  Tensor<double> cellbase({n, 2});
  for (int64_t iy = 0; iy < 6; ++iy)
    for (int64_t ix = 0; ix < 9; ++ix) {
      cellbase.data()[(iy * 9 + ix) * 2] = double(ix);
      cellbase.data()[(iy * 9 + ix) * 2 + 1] = double(iy);
    }
  auto g = warp(field, u, cellbase);
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t i = 0; i < n; ++i) {
      const double cx = cellbase.data()[2 * i] + u.data()[(t * n + i) * 2] / 2.0;
      const double cy = cellbase.data()[2 * i + 1] + u.data()[(t * n + i) * 2 + 1] / 2.0;
      // clamp-to-edge bilinear, independent arithmetic
      const double xc = std::min(std::max(cx, 0.0), 8.0), yc = std::min(std::max(cy, 0.0), 5.0);
      const int64_t x0 = std::min<int64_t>(int64_t(std::floor(xc)), 8), y0 = std::min<int64_t>(int64_t(std::floor(yc)), 5);
      const int64_t x1 = std::min<int64_t>(x0 + 1, 8), y1 = std::min<int64_t>(y0 + 1, 5);
      const double fx = xc - double(x0), fy = yc - double(y0);
      for (int64_t c = 0; c < 3; ++c) {
        const double* p = field.features.data() + (t * 3 + c) * 54;
        const double ref = (1 - fx) * (1 - fy) * p[y0 * 9 + x0] + fx * (1 - fy) * p[y0 * 9 + x1] +
                           (1 - fx) * fy * p[y1 * 9 + x0] + fx * fy * p[y1 * 9 + x1];
        CHECK(std::abs(g.data()[(t * n + i) * 3 + c] - ref) < 1e-6);
      }
    }
}

TEST_CASE("update_state: zero residual head leaves the displacement unchanged") {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg, 9);
  // w_u is zero-initialized
  auto field = random_field<double>(10, 3, cfg.channels, 8, 12);
  auto cells = channels_last(field.features);
  auto cells0 = take_row0(cells);
  auto pos = positional_embedding<double>(3, 2, 3, cfg.token_dim);
  Tensor<double> base({96, 2});
  for (int64_t iy = 0; iy < 8; ++iy)
    for (int64_t ix = 0; ix < 12; ++ix) {
      base.data()[(iy * 12 + ix) * 2] = double(ix);
      base.data()[(iy * 12 + ix) * 2 + 1] = double(iy);
    }
  auto [u0, h0] = init_state(model.head, cells, cfg);
  Rng rng(4);
  for (int64_t i = 0; i < u0.numel(); ++i) u0.data()[i] = rng.uniform(-2, 2);
  for (int64_t i = 0; i < 96 * 2; ++i) u0.data()[i] = 0.0;  // keep frame 0 pinned
  auto [u1, h1] = update_state(model, field, cells0, u0, h0, base, pos);
  REQUIRE(u1.shape() == u0.shape());
  REQUIRE(h1.shape() == h0.shape());
  for (int64_t i = 0; i < u0.numel(); ++i) CHECK(u1.data()[i] == doctest::Approx(u0.data()[i]).epsilon(1e-12));
}

TEST_CASE("update_state: permuting target frames permutes outputs (temporal embeddings disabled)") {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg, 21);
  Rng rng(31);
  // give the zero-initialized readout a nonzero residual head so u changes
  for (int64_t i = 0; i < model.head.w_u.numel(); ++i) model.head.w_u.data()[i] = rng.uniform(-0.1, 0.1);
  const int64_t t = 4, hc = 8, wc = 12, n = hc * wc;
  auto field = random_field<double>(32, t, cfg.channels, hc, wc);
  auto pos = broadcast_row0(positional_embedding<double>(t, hc / 4, wc / 4, cfg.token_dim));
  Tensor<double> base({n, 2});
  for (int64_t iy = 0; iy < hc; ++iy)
    for (int64_t ix = 0; ix < wc; ++ix) {
      base.data()[(iy * wc + ix) * 2] = double(ix);
      base.data()[(iy * wc + ix) * 2 + 1] = double(iy);
    }
  auto cells = channels_last(field.features);
  auto [u0, h0] = init_state(model.head, cells, cfg);
  for (int64_t i = n * 2; i < u0.numel(); ++i) u0.data()[i] = rng.uniform(-2, 2);
  auto [u1, h1] = update_state(model, field, take_row0(cells), u0, h0, base, pos);

  // permutation of frames 1..3: {0, 3, 1, 2}
  const int64_t perm[4] = {0, 3, 1, 2};
  FeatureField<double> pf;
  pf.stride = 2;
  pf.features = Tensor<double>({t, cfg.channels, hc, wc});
  Tensor<double> pu({t, n, 2}), ph({t, n, cfg.hidden_dim});
  const int64_t fsz = cfg.channels * n;
  for (int64_t f = 0; f < t; ++f) {
    std::memcpy(pf.features.data() + f * fsz, field.features.data() + perm[f] * fsz, size_t(fsz) * 8);
    std::memcpy(pu.data() + f * n * 2, u0.data() + perm[f] * n * 2, size_t(n) * 16);
    std::memcpy(ph.data() + f * n * cfg.hidden_dim, h0.data() + perm[f] * n * cfg.hidden_dim,
                size_t(n * cfg.hidden_dim) * 8);
  }
  auto [u2, h2] = update_state(model, pf, take_row0(cells), pu, ph, base, pos);
  for (int64_t f = 0; f < t; ++f)
    for (int64_t i = 0; i < n * 2; ++i)
      CHECK(u2.data()[f * n * 2 + i] == doctest::Approx(u1.data()[perm[f] * n * 2 + i]).epsilon(1e-9));
}

TEST_CASE("readout: zero weights give 0.5, outputs in (0,1), heads are independent") {
  auto cfg = tiny_config();
  auto model = make_model<double>(cfg, 40);
  Rng rng(41);
  auto h = Tensor<double>::uniform({3, 20, cfg.hidden_dim}, rng, -2, 2);
  auto [v, tau] = readout(model.head, h);  // zero-init readout matrices
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(v.data()[i] == 0.5);

  for (int64_t i = 0; i < model.head.w_v.numel(); ++i) model.head.w_v.data()[i] = rng.uniform(-1, 1);
  auto [v1, t1] = readout(model.head, h);
  for (int64_t i = 0; i < v1.numel(); ++i) {
    CHECK(v1.data()[i] > 0.0);
    CHECK(v1.data()[i] < 1.0);
  }
  // perturbing w_tau must not move v
  for (int64_t i = 0; i < model.head.w_tau.numel(); ++i) model.head.w_tau.data()[i] = rng.uniform(-1, 1);
  auto [v2, t2] = readout(model.head, h);
  CHECK(std::memcmp(v1.data(), v2.data(), size_t(v1.numel()) * 8) == 0);
  CHECK(std::memcmp(t1.data(), t2.data(), size_t(t1.numel()) * 8) != 0);
}

TEST_CASE("track: degenerate all-zero parameters give u=0 and 0.5 readouts") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 50);
  model.visit([](const std::string&, Tensor<float>& t) {
    std::memset(t.data(), 0, size_t(t.numel()) * 4);
  });
  auto clip = tiny_clip(51);
  auto res = track(model, clip, 1);
  for (int64_t i = 0; i < res.u.numel(); ++i) CHECK(res.u.data()[i] == 0.0f);
  for (int64_t i = 0; i < res.visibility.numel(); ++i) {
    CHECK(res.visibility.data()[i] == 0.5f);
    CHECK(res.confidence.data()[i] == 0.5f);
  }
}

TEST_CASE("track: frame-pair clip runs and yields a dense field with pinned frame 0") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 60);
  Rng rng(61);
  for (int64_t i = 0; i < model.head.w_u.numel(); ++i) model.head.w_u.data()[i] = float(rng.uniform(-0.05, 0.05));
  auto clip = tiny_clip(62, /*targets=*/1);
  auto res = track(model, clip, 3, true);
  const int64_t n = (16 / 2) * (24 / 2);
  REQUIRE(res.u.shape() == Shape{2, n, 2});
  CHECK(res.u_iters.size() == 3);
  CHECK(res.v_iters.size() == 3);
  for (const auto& u : res.u_iters)
    for (int64_t i = 0; i < n * 2; ++i) CHECK(u.data()[i] == 0.0f);  // frame-0 row stays zero
  bool moved = false;
  for (int64_t i = n * 2; i < res.u.numel(); ++i) moved = moved || res.u.data()[i] != 0.0f;
  CHECK(moved);
}

TEST_CASE("track: gradients reach encoder, init projection, blocks, and readout") {
  auto cfg = tiny_config();
  cfg.iters = 2;
  auto model = make_model<double>(cfg, 70);
  Rng rng(71);
  for (int64_t i = 0; i < model.head.w_u.numel(); ++i) model.head.w_u.data()[i] = rng.uniform(-0.05, 0.05);
  auto clip = tiny_clip(72);

  std::vector<Tensor<double>> picked;
  model.visit([&](const std::string& name, Tensor<double>& t) {
    if (name == "encoder.c1.w" || name == "head.phi.w" || name == "head.block0.qkv.w" || name == "head.w_u" ||
        name == "encoder.u2.w" || name == "head.patch_embed.w")
      picked.push_back(t);
  });
  REQUIRE(picked.size() == 6);
  auto loss_fn = [&]() {
    auto res = track(model, clip, cfg.iters, true);
    return add(sum(mul(res.u, res.u)), sum(res.visibility));
  };
  {
    Tape<double> tape;
    auto loss = loss_fn();
    warptrack::backward(loss);
  }
  for (auto& t : picked) {
    REQUIRE(t.has_grad());
    double norm = 0;
    for (int64_t i = 0; i < t.numel(); ++i) norm += std::abs(t.grad_cdata()[i]);
    CHECK(norm > 0.0);
    t.zero_grad();
  }
  // finite-difference spot check on a few entries of each picked tensor
  auto res = wtest::grad_check(picked, loss_fn, 1e-5, 3);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("encoder: shape contract, purity, shift equivariance") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 80);
  auto clip = tiny_clip(81, 2, 16, 24);
  auto frames = cast<float>(clip.frames);
  auto acts = encode_lowres(model.encoder, frames);
  REQUIRE(acts.a3.shape() == Shape{3, cfg.backbone_channels, 2, 3});
  auto field = upsample(model.encoder, acts, frames);
  REQUIRE(field.features.shape() == Shape{3, cfg.channels, 8, 12});

  // identical frames -> identical feature slices
  Tensor<float> rep({2, 3, 16, 24});
  std::memcpy(rep.data(), frames.data(), size_t(3 * 16 * 24) * 4);
  std::memcpy(rep.data() + 3 * 16 * 24, frames.data(), size_t(3 * 16 * 24) * 4);
  auto f2 = encode(model, rep);
  CHECK(std::memcmp(f2.features.data(), f2.features.data() + f2.features.numel() / 2,
                    size_t(f2.features.numel() / 2) * 4) == 0);

  // two crops of one "world" image, 8 px apart: interior responses translate
  // by 4 cells (stride 2); margins cover the conv stack's receptive field
  const int64_t h = 64, w = 96, shift = 8;
  Rng rng(82);
  auto world = Tensor<float>::uniform({1, 3, h, w + shift}, rng, 0, 1);
  Tensor<float> img({1, 3, h, w}), shifted({1, 3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        img.data()[(c * h + y) * w + x] = world.data()[(c * h + y) * (w + shift) + x];
        shifted.data()[(c * h + y) * w + x] = world.data()[(c * h + y) * (w + shift) + x + shift];
      }
  auto fa = encode(model, img), fb = encode(model, shifted);
  const int64_t hcells = h / 2, wcells = w / 2, margin = 14;
  for (int64_t c = 0; c < cfg.channels; ++c)
    for (int64_t y = margin; y < hcells - margin; ++y)
      for (int64_t x = margin; x < wcells - margin - 4; ++x)
        CHECK(std::abs(fb.features.data()[(c * hcells + y) * wcells + x] -
                       fa.features.data()[(c * hcells + y) * wcells + x + 4]) < 1e-5f);
}

TEST_CASE("upsample: zeroed raw-image branch is insensitive to the raw frames") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 90);
  for (auto* l : {&model.encoder.u1, &model.encoder.u2, &model.encoder.u3, &model.encoder.uup, &model.encoder.ufuse}) {
    std::memset(l->w.data(), 0, size_t(l->w.numel()) * 4);
    std::memset(l->b.data(), 0, size_t(l->b.numel()) * 4);
  }
  auto clip = tiny_clip(91, 1, 16, 24);
  auto frames = cast<float>(clip.frames);
  auto acts = encode_lowres(model.encoder, frames);
  auto f1 = upsample(model.encoder, acts, frames);
  frames.data()[100] += 0.25f;  // perturb a raw pixel, keep acts fixed
  auto f2 = upsample(model.encoder, acts, frames);
  CHECK(std::memcmp(f1.features.data(), f2.features.data(), size_t(f1.features.numel()) * 4) == 0);
}

TEST_CASE("track output json round trip") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 95);
  auto clip = tiny_clip(96);
  auto res = track(model, clip, 2);
  const std::string path = "/tmp/wt_test_tracks.json";
  write_tracks_json(path, res);
  auto tf = read_tracks_json(path);
  CHECK(tf.t_plus_1 == res.u.extent(0));
  CHECK(tf.n == res.u.extent(1));
  CHECK(tf.stride == 2);
  const int64_t n = tf.n;
  for (int64_t i = 0; i < n; ++i)
    CHECK(tf.tracks[size_t(2 * i)] == doctest::Approx(res.queries.data()[2 * i]).epsilon(1e-6));
  std::remove(path.c_str());
}

TEST_CASE("sample_tracks_at: interpolation agrees with the grid at cell centers") {
  auto cfg = tiny_config();
  auto model = make_model<float>(cfg, 97);
  Rng rng(98);
  for (int64_t i = 0; i < model.head.w_u.numel(); ++i) model.head.w_u.data()[i] = float(rng.uniform(-0.05, 0.05));
  auto clip = tiny_clip(99);
  auto res = track(model, clip, 2);
  auto sampled = sample_tracks_at(res, res.queries);
  const int64_t t = res.u.extent(0), n = res.u.extent(1);
  for (int64_t f = 0; f < t; ++f)
    for (int64_t i = 0; i < n; ++i) {
      const float px = res.queries.data()[2 * i] + res.u.data()[(f * n + i) * 2];
      CHECK(sampled.tracks.data()[(f * n + i) * 2] == doctest::Approx(px).epsilon(1e-5));
      CHECK(sampled.visibility.data()[f * n + i] ==
            doctest::Approx(res.visibility.data()[f * n + i]).epsilon(1e-5));
    }
}
