#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "rin/fdcheck.hpp"

#include "rin/model.hpp"
#include "rin/tensor.hpp"
#include "test_util.hpp"

using namespace rin;
using namespace rintest;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.input_shape = {8, 8, 3};
  cfg.patch = {4, 4};
  cfg.blocks = 2;
  cfg.layers_per_block = 1;
  cfg.latents = 2;
  cfg.latent_dim = 8;
  cfg.interface_dim = 8;
  cfg.heads = 2;
  cfg.dtype = Dtype::f64;
  return cfg;
}

Tensor ln_ref(const Tensor& x, const Tensor& g, const Tensor& b) {
  return layer_norm(x, g, b);
}

Tensor ffn_ref(const RinModel& mdl, const std::string& prefix,
               const Tensor& x) {
  Tensor h = add_bias(matmul(x, mdl.param(prefix + ".ffn.w1")),
                      mdl.param(prefix + ".ffn.b1"));
  return add_bias(matmul(gelu(h), mdl.param(prefix + ".ffn.w2")),
                  mdl.param(prefix + ".ffn.b2"));
}

AttentionParams attn_of(const RinModel& mdl, const std::string& prefix) {
  AttentionParams p;
  p.wq = mdl.param(prefix + ".attn.wq");
  p.bq = mdl.param(prefix + ".attn.bq");
  p.wk = mdl.param(prefix + ".attn.wk");
  p.bk = mdl.param(prefix + ".attn.bk");
  p.wv = mdl.param(prefix + ".attn.wv");
  p.bv = mdl.param(prefix + ".attn.bv");
  p.wo = mdl.param(prefix + ".attn.wo");
  p.bo = mdl.param(prefix + ".attn.bo");
  return p;
}

Tensor pre_ln(const RinModel& mdl, const std::string& prefix,
              const Tensor& x) {
  return ln_ref(x, mdl.param(prefix + ".attn.ln.g"),
                mdl.param(prefix + ".attn.ln.b"));
}

Tensor pre_ffn_ln(const RinModel& mdl, const std::string& prefix,
                  const Tensor& x) {
  return ln_ref(x, mdl.param(prefix + ".ffn.ln.g"),
                mdl.param(prefix + ".ffn.ln.b"));
}

// sinusoidal time features: geometric frequencies, sin block then cos block
std::vector<double> time_feature_ref(double t) {
  std::vector<double> f(kTimeFeatures);
  const int half = kTimeFeatures / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(i) / (half - 1));
    f[i] = std::sin(freq * t);
    f[half + i] = std::cos(freq * t);
  }
  return f;
}

}  // namespace

// ---- configuration ----

TEST_CASE("config geometry helpers") {
  ModelConfig cfg = tiny_cfg();
  CHECK(cfg.tokens() == 4);
  CHECK(cfg.patch_volume() == 48);
  CHECK(cfg.token_grid() == Shape{2, 2});
  CHECK(cfg.channels() == 3);

  cfg.input_shape = {64, 64, 3};
  CHECK(cfg.tokens() == 256);

  ModelConfig vid = tiny_cfg();
  vid.input_shape = {16, 64, 64, 3};
  vid.patch = {2, 4, 4};
  CHECK(vid.tokens() == 2048);
  CHECK(vid.patch_volume() == 96);
  CHECK(vid.token_grid() == Shape{8, 16, 16});
}

TEST_CASE("config validation rejects bad geometry") {
  ModelConfig cfg = tiny_cfg();
  cfg.validate();

  ModelConfig bad = cfg;
  bad.input_shape = {7, 8, 3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.patch = {4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.latent_dim = 9;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.interface_dim = 9;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.blocks = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.latents = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.input_shape = {8, 8};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

// ---- tokenize ----

TEST_CASE("tokenize emits one token per patch") {
  ModelConfig cfg = tiny_cfg();
  cfg.input_shape = {64, 64, 3};
  RinModel mdl(cfg, 1);
  Tensor x = leaf({64, 64, 3}, 1000, 0.5);
  CHECK(mdl.tokenize(x).shape() == Shape{256, 8});

  ModelConfig vid = tiny_cfg();
  vid.input_shape = {16, 64, 64, 3};
  vid.patch = {2, 4, 4};
  RinModel vmdl(vid, 1);
  Tensor v = leaf({16, 64, 64, 3}, 1001, 0.5);
  CHECK(vmdl.tokenize(v).shape() == Shape{2048, 8});

  CHECK_THROWS_AS(mdl.tokenize(leaf({8, 8, 3}, 1002)), ShapeError);
}

TEST_CASE("tokenize equals a strided-convolution reference") {
  // unfold+linear must agree with a direct stride-p convolution over the
  // image, followed by normalization and the positional table
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 7);
  Tensor x = leaf({8, 8, 3}, 1010, 0.7);
  Tensor got = mdl.tokenize(x);
  REQUIRE(got.shape() == Shape{4, 8});

  const Tensor w = mdl.param("tokenize.proj.w");   // [48, 8]
  const Tensor b = mdl.param("tokenize.proj.b");
  const Tensor g = mdl.param("tokenize.ln.g");
  const Tensor lb = mdl.param("tokenize.ln.b");
  const Tensor pos = mdl.param("tokenize.pos");

  for (int64_t gy = 0; gy < 2; ++gy)
    for (int64_t gx = 0; gx < 2; ++gx) {
      const int64_t tok = gy * 2 + gx;
      // convolution with kernel = patch, stride = patch
      std::vector<double> proj(8, 0.0);
      for (int64_t dy = 0; dy < 4; ++dy)
        for (int64_t dx = 0; dx < 4; ++dx)
          for (int64_t c = 0; c < 3; ++c) {
            const double pix = x.at(((4 * gy + dy) * 8 + (4 * gx + dx)) * 3 + c);
            const int64_t krow = (dy * 4 + dx) * 3 + c;
            for (int64_t o = 0; o < 8; ++o) proj[o] += pix * w.at(krow * 8 + o);
          }
      for (int64_t o = 0; o < 8; ++o) proj[o] += b.at(o);
      double mu = 0;
      for (double v : proj) mu += v;
      mu /= 8;
      double var = 0;
      for (double v : proj) var += (v - mu) * (v - mu);
      var /= 8;
      for (int64_t o = 0; o < 8; ++o) {
        const double want = (proj[o] - mu) / std::sqrt(var + 1e-5) * g.at(o) +
                            lb.at(o) + pos.at(tok * 8 + o);
        CHECK(std::abs(got.at(tok * 8 + o) - want) <= 1e-10);
      }
    }
}

// ---- init_latents ----

TEST_CASE("fresh latents are the learned table exactly") {
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 3);
  Tensor z = mdl.init_latents(0.5, std::nullopt, Tensor{});
  REQUIRE(z.shape() == Shape{cfg.latents + kCondTokens, cfg.latent_dim});
  Tensor zi = mdl.param("latents.init");
  for (int64_t i = 0; i < zi.numel(); ++i) CHECK(z.at(i) == zi.at(i));
}

TEST_CASE("zero-initialized gate ignores the warm start") {
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 3);
  Tensor prev = leaf({cfg.latents, cfg.latent_dim}, 1020);
  Tensor with = mdl.init_latents(0.25, std::nullopt, prev);
  Tensor without = mdl.init_latents(0.25, std::nullopt, Tensor{});
  CHECK(bitwise_equal(with, without));

  // opening the gate makes the warm start matter
  Tensor gate = mdl.param("selfcond.ln.g");
  auto gv = gate.mutable_data<double>();
  for (double& v : gv) v = 1.0;
  Tensor with2 = mdl.init_latents(0.25, std::nullopt, prev);
  Tensor without2 = mdl.init_latents(0.25, std::nullopt, Tensor{});
  CHECK(max_abs_diff(with2, without2) > 1e-6);
}

TEST_CASE("conditioning rows carry time and class") {
  ModelConfig cfg = tiny_cfg();
  cfg.num_classes = 3;
  RinModel mdl(cfg, 5);
  const int64_t m = cfg.latents, dp = cfg.latent_dim;

  Tensor z = mdl.init_latents(0.75, 1, Tensor{});
  Tensor table = mdl.param("class.table");
  for (int64_t j = 0; j < dp; ++j)
    CHECK(z.at((m + 1) * dp + j) == table.at(1 * dp + j));
  Tensor znull = mdl.init_latents(0.75, std::nullopt, Tensor{});
  for (int64_t j = 0; j < dp; ++j)
    CHECK(znull.at((m + 1) * dp + j) == table.at(3 * dp + j));  // null row

  // time token: sinusoidal features through the learned projection
  const auto feat = time_feature_ref(0.75);
  Tensor tw = mdl.param("time.proj.w");
  Tensor tb = mdl.param("time.proj.b");
  for (int64_t j = 0; j < dp; ++j) {
    double want = tb.at(j);
    for (int64_t i = 0; i < kTimeFeatures; ++i)
      want += feat[static_cast<size_t>(i)] * tw.at(i * dp + j);
    CHECK(std::abs(z.at(m * dp + j) - want) <= 1e-12);
  }

  CHECK_THROWS_AS(mdl.init_latents(1.5, std::nullopt, Tensor{}),
                  ContractError);
  CHECK_THROWS_AS(mdl.init_latents(0.5, 3, Tensor{}), ContractError);
  CHECK_THROWS_AS(mdl.init_latents(0.5, std::nullopt, leaf({m, dp + 1}, 1)),
                  ShapeError);
}

// ---- block and forward composition ----

TEST_CASE("forward equals the hand-composed block pipeline") {
  // m=1, n=2, d=d'=4: every sub-op is hand-sized
  ModelConfig cfg;
  cfg.input_shape = {2, 4, 1};
  cfg.patch = {1, 4};
  cfg.blocks = 1;
  cfg.latents = 1;
  cfg.latent_dim = 4;
  cfg.interface_dim = 4;
  cfg.heads = 1;
  cfg.dtype = Dtype::f64;

  for (int K : {0, 1}) {
    cfg.layers_per_block = K;
    RinModel mdl(cfg, 11);
    Tensor x_img = leaf({2, 4, 1}, 1030 + K, 0.6);
    const double t = 0.4;

    Tensor got = mdl.forward(x_img, t, std::nullopt, Tensor{}).eps;

    // tokenize
    Tensor x = add(layer_norm(add_bias(matmul(reshape(space_to_depth(
                                                  x_img, cfg.patch),
                                              {2, 4}),
                                       mdl.param("tokenize.proj.w")),
                                       mdl.param("tokenize.proj.b")),
                              mdl.param("tokenize.ln.g"),
                              mdl.param("tokenize.ln.b")),
                   mdl.param("tokenize.pos"));
    // latents: fresh start, zero gate leaves the learned rows alone
    Tensor z0 = mdl.param("latents.init");
    const auto feat = time_feature_ref(t);
    Tensor tf = Tensor::from_span({1, kTimeFeatures}, feat, Dtype::f64);
    Tensor ttok = add_bias(matmul(tf, mdl.param("time.proj.w")),
                           mdl.param("time.proj.b"));
    Tensor ctok = slice(mdl.param("class.table"), 0, 0, 1);
    Tensor z = concat({z0, ttok, ctok}, 0);

    // read
    z = add(z, multihead_attention(pre_ln(mdl, "block0.read", z), x, 1,
                                   attn_of(mdl, "block0.read")));
    z = add(z, ffn_ref(mdl, "block0.read", pre_ffn_ln(mdl, "block0.read", z)));
    // compute: the normalized latents are both queries and keys/values
    for (int k = 0; k < K; ++k) {
      Tensor zn = pre_ln(mdl, "block0.self0", z);
      z = add(z, multihead_attention(zn, zn, 1, attn_of(mdl, "block0.self0")));
      z = add(z,
              ffn_ref(mdl, "block0.self0", pre_ffn_ln(mdl, "block0.self0", z)));
    }
    // write
    x = add(x, multihead_attention(pre_ln(mdl, "block0.write", x), z, 1,
                                   attn_of(mdl, "block0.write")));
    x = add(x,
            ffn_ref(mdl, "block0.write", pre_ffn_ln(mdl, "block0.write", x)));
    // readout
    Tensor y = add_bias(matmul(layer_norm(x, mdl.param("readout.ln.g"),
                                          mdl.param("readout.ln.b")),
                               mdl.param("readout.w")),
                        mdl.param("readout.b"));
    Tensor want = depth_to_space(reshape(y, {2, 1, 4}), cfg.patch);

    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) <= 1e-10);
  }
}

TEST_CASE("zeroed residual branches leave the streams unchanged") {
  // all attention and MLP output projections zero: interface tokens pass
  // through every block untouched, so the prediction is the readout of the
  // tokenization alone
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 13);
  for (const auto& [name, p] : mdl.parameters()) {
    const bool out_proj = name.find(".attn.wo") != std::string::npos ||
                          name.find(".attn.bo") != std::string::npos ||
                          name.find(".ffn.w2") != std::string::npos ||
                          name.find(".ffn.b2") != std::string::npos;
    if (!out_proj) continue;
    Tensor t = p;
    auto v = t.mutable_data<double>();
    for (double& e : v) e = 0.0;
  }
  Tensor x_img = leaf({8, 8, 3}, 1040, 0.6);
  Tensor got = mdl.forward(x_img, 0.3, std::nullopt, Tensor{}).eps;

  Tensor x = mdl.tokenize(x_img);
  Tensor y = add_bias(matmul(layer_norm(x, mdl.param("readout.ln.g"),
                                        mdl.param("readout.ln.b")),
                             mdl.param("readout.w")),
                      mdl.param("readout.b"));
  Tensor want = depth_to_space(reshape(y, {2, 2, 48}), cfg.patch);
  CHECK(max_abs_diff(got, want) <= 1e-12);
}

TEST_CASE("forward preserves shape across configurations") {
  struct Row {
    Shape shape;
    std::vector<int> patch;
  };
  const std::vector<Row> rows = {
      {{8, 8, 3}, {4, 4}},
      {{16, 16, 1}, {2, 2}},
      {{4, 16, 16, 3}, {2, 4, 4}},
  };
  for (const Row& r : rows) {
    ModelConfig cfg = tiny_cfg();
    cfg.input_shape = r.shape;
    cfg.patch = r.patch;
    cfg.dtype = Dtype::f32;
    RinModel mdl(cfg, 17);
    Tensor x = normal_init(r.shape, 99, RngStream::kDataset, 1, Dtype::f32);
    auto out = mdl.forward(x, 0.5, std::nullopt, Tensor{});
    CHECK(out.eps.shape() == r.shape);
    CHECK(out.latents.shape() == Shape{cfg.latents, cfg.latent_dim});
  }
}

TEST_CASE("zero readout weights give a zero prediction") {
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 19);
  for (const char* name : {"readout.w", "readout.b"}) {
    Tensor t = mdl.param(name);
    auto v = t.mutable_data<double>();
    for (double& e : v) e = 0.0;
  }
  Tensor out = mdl.forward(leaf({8, 8, 3}, 1050), 0.9, std::nullopt,
                           Tensor{}).eps;
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == 0.0);
}

TEST_CASE("forward is bitwise independent of the warm start at init") {
  ModelConfig cfg = tiny_cfg();
  RinModel mdl(cfg, 23);
  Tensor x = leaf({8, 8, 3}, 1060, 0.5);
  Tensor prev = leaf({cfg.latents, cfg.latent_dim}, 1061);
  Tensor a = mdl.forward(x, 0.6, std::nullopt, prev).eps;
  Tensor b = mdl.forward(x, 0.6, std::nullopt, Tensor{}).eps;
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("self-conditioning off ignores the carried latents entirely") {
  ModelConfig cfg = tiny_cfg();
  cfg.self_cond = false;
  RinModel mdl(cfg, 29);
  // scramble every parameter: the invariance is structural, not init-only
  uint64_t k = 0;
  for (const auto& [name, p] : mdl.parameters()) {
    Tensor t = p;
    auto v = t.mutable_data<double>();
    for (size_t i = 0; i < v.size(); ++i)
      v[i] = 0.25 * rng::normal(555, RngStream::kDataset, k, i);
    ++k;
  }
  Tensor x = leaf({8, 8, 3}, 1070, 0.5);
  Tensor prev = leaf({cfg.latents, cfg.latent_dim}, 1071);
  Tensor a = mdl.forward(x, 0.1, std::nullopt, prev).eps;
  Tensor b = mdl.forward(x, 0.1, std::nullopt, Tensor{}).eps;
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("patch permutation with matching positions permutes the output") {
  ModelConfig cfg = tiny_cfg();
  cfg.dtype = Dtype::f64;
  const int64_t n = cfg.tokens(), pv = cfg.patch_volume();
  const std::vector<int64_t> perm{2, 0, 3, 1};

  RinModel a(cfg, 31);
  RinModel b(cfg, 31);
  // permute b's positional rows to follow the patches
  {
    Tensor pa = a.param("tokenize.pos");
    Tensor pb = b.param("tokenize.pos");
    auto dst = pb.mutable_data<double>();
    for (int64_t p = 0; p < n; ++p)
      for (int64_t j = 0; j < 8; ++j)
        dst[perm[static_cast<size_t>(p)] * 8 + j] = pa.at(p * 8 + j);
  }

  Tensor x = leaf({8, 8, 3}, 1080, 0.5);
  Tensor patches = reshape(space_to_depth(x, cfg.patch), {n, pv});
  Tensor xp;
  {
    Tensor t = Tensor::zeros({n, pv}, Dtype::f64);
    auto dst = t.mutable_data<double>();
    for (int64_t p = 0; p < n; ++p)
      for (int64_t j = 0; j < pv; ++j)
        dst[perm[static_cast<size_t>(p)] * pv + j] = patches.at(p * pv + j);
    xp = depth_to_space(reshape(t, {2, 2, pv}), cfg.patch);
  }

  Tensor ya = a.forward(x, 0.45, std::nullopt, Tensor{}).eps;
  Tensor yb = b.forward(xp, 0.45, std::nullopt, Tensor{}).eps;
  Tensor sa = reshape(space_to_depth(ya, cfg.patch), {n, pv});
  Tensor sb = reshape(space_to_depth(yb, cfg.patch), {n, pv});
  for (int64_t p = 0; p < n; ++p)
    for (int64_t j = 0; j < pv; ++j)
      CHECK(std::abs(sb.at(perm[static_cast<size_t>(p)] * pv + j) -
                     sa.at(p * pv + j)) <= 1e-10);
}

// ---- attention-entry accounting ----

TEST_CASE("attention entry count follows the closed form") {
  ModelConfig cfg = tiny_cfg();
  cfg.blocks = 1;
  cfg.layers_per_block = 0;
  cfg.latents = 1;
  // m' = m + 2 conditioning tokens = 3, n = 4
  CHECK(count_attention_entries(cfg) == 2 * 4 * 3);

  cfg.blocks = 3;
  cfg.layers_per_block = 2;
  cfg.latents = 6;  // m' = 8
  CHECK(count_attention_entries(cfg) ==
        3ull * (2 * 4 * 8 + 2 * 8 * 8));

  // read and write scale linearly in n; self-attention is n-independent
  ModelConfig wide = cfg;
  wide.input_shape = {8, 16, 3};
  CHECK(count_attention_entries(wide) - count_attention_entries(cfg) ==
        3ull * 2 * 4 * 8);

  ModelConfig rw = cfg;
  rw.layers_per_block = 0;
  ModelConfig rw_wide = wide;
  rw_wide.layers_per_block = 0;
  CHECK(count_attention_entries(rw_wide) == 2 * count_attention_entries(rw));
}

TEST_CASE("traced forward reproduces the attention entry count") {
  // the 128px table row's geometry (B=6, K=4, m=128, n=1024) at thin widths
  ModelConfig cfg;
  cfg.input_shape = {128, 128, 3};
  cfg.patch = {4, 4};
  cfg.blocks = 6;
  cfg.layers_per_block = 4;
  cfg.latents = 128;
  cfg.latent_dim = 8;
  cfg.interface_dim = 8;
  cfg.heads = 2;
  cfg.dtype = Dtype::f32;
  REQUIRE(cfg.tokens() == 1024);

  RinModel mdl(cfg, 37);
  Tensor x = normal_init(cfg.input_shape, 77, RngStream::kDataset, 0,
                         Dtype::f32);
  AttentionProbe probe;
  mdl.forward(x, 0.5, std::nullopt, Tensor{}, &probe);
  CHECK(probe.map_entries == count_attention_entries(cfg));
  REQUIRE(probe.reads.size() == 6);
  for (const auto& r : probe.reads)
    CHECK(r.attn.shape() == Shape{2, 130, 1024});
}

// ---- parameter accounting and determinism ----

TEST_CASE("every learned tensor is reachable from the loss") {
  ModelConfig cfg = tiny_cfg();
  cfg.num_classes = 2;
  RinModel mdl(cfg, 41);
  Tensor x = leaf({8, 8, 3}, 1090, 0.5);
  Tensor prev = leaf({cfg.latents, cfg.latent_dim}, 1091);
  Tensor out = mdl.forward(x, 0.2, 1, prev).eps;
  Gradients g = backward(mean_all(mul(out, out)));
  CHECK(g.leaf_count() == mdl.parameters().size());
  for (const auto& [name, p] : mdl.parameters()) {
    INFO(name);
    CHECK(g.contains(p));
  }
}

TEST_CASE("end-to-end gradients agree with finite differences") {
  ModelConfig cfg;
  cfg.input_shape = {8, 8, 3};
  cfg.patch = {2, 2};
  cfg.blocks = 2;
  cfg.layers_per_block = 1;
  cfg.latents = 4;
  cfg.latent_dim = 32;
  cfg.interface_dim = 32;
  cfg.heads = 4;
  cfg.num_classes = 2;
  cfg.dtype = Dtype::f64;
  RinModel mdl(cfg, 47);

  Tensor x = leaf({8, 8, 3}, 1110, 0.5);
  Tensor prev = leaf({4, 32}, 1111, 0.5);
  Tensor w = probe_weights({8, 8, 3}, 1112);
  auto loss_value = [&]() {
    NoGradGuard off;
    return weighted_sum(mdl.forward(x, 0.35, 1, prev).eps, w).item();
  };
  Gradients g = backward(weighted_sum(mdl.forward(x, 0.35, 1, prev).eps, w));

  const auto& params = mdl.parameters();
  std::mt19937_64 pick(2024);
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const auto& [name, p] =
        params[pick() % params.size()];
    const int64_t idx = static_cast<int64_t>(
        pick() % static_cast<uint64_t>(p.numel()));
    const double fd = central_diff(p, idx, 1e-5, loss_value);
    const double an = g.at(p).at(idx);
    INFO(name, "[", idx, "] analytic ", an, " fd ", fd);
    const double err = rel_error(an, fd);
    CHECK(err < 1e-4);
    worst = std::max(worst, err);
  }
  MESSAGE("worst relative error over 20 probes: ", worst);
}

TEST_CASE("identical seeds build identical models") {
  ModelConfig cfg = tiny_cfg();
  RinModel a(cfg, 43);
  RinModel b(cfg, 43);
  RinModel c(cfg, 44);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool any_differs = false;
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].first == b.parameters()[i].first);
    CHECK(bitwise_equal(a.parameters()[i].second, b.parameters()[i].second));
    if (!bitwise_equal(a.parameters()[i].second, c.parameters()[i].second))
      any_differs = true;
  }
  CHECK(any_differs);

  Tensor x = leaf({8, 8, 3}, 1100, 0.5);
  CHECK(bitwise_equal(a.forward(x, 0.7, std::nullopt, Tensor{}).eps,
                      b.forward(x, 0.7, std::nullopt, Tensor{}).eps));
  CHECK(a.forward_calls() == 1);
}
