#include "rin/model.hpp"

#include <cmath>
#include <sstream>

namespace rin {

int64_t ModelConfig::tokens() const {
  int64_t n = 1;
  for (int i = 0; i < spatial_rank(); ++i) n *= input_shape[i] / patch[i];
  return n;
}

int64_t ModelConfig::patch_volume() const {
  int64_t v = channels();
  for (int p : patch) v *= p;
  return v;
}

Shape ModelConfig::token_grid() const {
  Shape g(spatial_rank());
  for (int i = 0; i < spatial_rank(); ++i) g[i] = input_shape[i] / patch[i];
  return g;
}

void ModelConfig::validate() const {
  if (input_shape.size() != 3 && input_shape.size() != 4)
    throw ConfigError("model: input_shape must be h,w,c or frames,h,w,c, got " +
                      shape_str(input_shape));
  for (int64_t d : input_shape)
    if (d < 1) throw ConfigError("model: non-positive input extent in " +
                                 shape_str(input_shape));
  if (static_cast<int>(patch.size()) != spatial_rank())
    throw ConfigError("model: patch has " + std::to_string(patch.size()) +
                      " extents for " + std::to_string(spatial_rank()) +
                      " spatial axes");
  for (int i = 0; i < spatial_rank(); ++i) {
    if (patch[i] < 1) throw ConfigError("model: patch extent < 1");
    if (input_shape[i] % patch[i] != 0)
      throw ConfigError("model: spatial extent " +
                        std::to_string(input_shape[i]) +
                        " not divisible by patch " + std::to_string(patch[i]));
  }
  if (blocks < 1) throw ConfigError("model: blocks must be >= 1");
  if (layers_per_block < 0) throw ConfigError("model: negative depth");
  if (latents < 1) throw ConfigError("model: latents must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (latent_dim < 1 || latent_dim % heads != 0)
    throw ConfigError("model: latent_dim " + std::to_string(latent_dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (interface_dim < 1 || interface_dim % heads != 0)
    throw ConfigError("model: interface_dim " + std::to_string(interface_dim) +
                      " not divisible by " + std::to_string(heads) + " heads");
  if (ffn_expansion < 1) throw ConfigError("model: ffn_expansion must be >= 1");
  if (num_classes < 0) throw ConfigError("model: negative num_classes");
}

uint64_t count_attention_entries(const ModelConfig& cfg) {
  const uint64_t n = static_cast<uint64_t>(cfg.tokens());
  const uint64_t mp = static_cast<uint64_t>(cfg.latents) + kCondTokens;
  const uint64_t per_block =
      2 * n * mp + static_cast<uint64_t>(cfg.layers_per_block) * mp * mp;
  return static_cast<uint64_t>(cfg.blocks) * per_block;
}

// ---- construction ----

Tensor RinModel::add_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

Tensor RinModel::weight(const std::string& name, Shape shape) {
  Tensor t = truncated_normal_init(std::move(shape), 0.02, seed_,
                                   RngStream::kParamInit, init_counter_++,
                                   cfg_.dtype);
  return add_param(name, std::move(t));
}

Tensor RinModel::zeros_param(const std::string& name, Shape shape) {
  ++init_counter_;  // keep keys stable whether or not a tensor draws
  return add_param(name, Tensor::zeros(std::move(shape), cfg_.dtype));
}

Tensor RinModel::ones_param(const std::string& name, Shape shape) {
  ++init_counter_;
  return add_param(name, Tensor::full(std::move(shape), 1.0, cfg_.dtype));
}

RinModel::LayerParams RinModel::make_layer(const std::string& prefix,
                                           int64_t dq, int64_t dkv) {
  LayerParams lp;
  lp.ln_g = ones_param(prefix + ".attn.ln.g", {dq});
  lp.ln_b = zeros_param(prefix + ".attn.ln.b", {dq});
  lp.attn.wq = weight(prefix + ".attn.wq", {dq, dq});
  lp.attn.bq = zeros_param(prefix + ".attn.bq", {dq});
  lp.attn.wk = weight(prefix + ".attn.wk", {dkv, dq});
  lp.attn.bk = zeros_param(prefix + ".attn.bk", {dq});
  lp.attn.wv = weight(prefix + ".attn.wv", {dkv, dq});
  lp.attn.bv = zeros_param(prefix + ".attn.bv", {dq});
  lp.attn.wo = weight(prefix + ".attn.wo", {dq, dq});
  lp.attn.bo = zeros_param(prefix + ".attn.bo", {dq});
  const int64_t hidden = static_cast<int64_t>(cfg_.ffn_expansion) * dq;
  lp.ffn_ln_g = ones_param(prefix + ".ffn.ln.g", {dq});
  lp.ffn_ln_b = zeros_param(prefix + ".ffn.ln.b", {dq});
  lp.w1 = weight(prefix + ".ffn.w1", {dq, hidden});
  lp.b1 = zeros_param(prefix + ".ffn.b1", {hidden});
  lp.w2 = weight(prefix + ".ffn.w2", {hidden, dq});
  lp.b2 = zeros_param(prefix + ".ffn.b2", {dq});
  return lp;
}

RinModel::RinModel(ModelConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  const int64_t d = cfg_.interface_dim;
  const int64_t dp = cfg_.latent_dim;
  const int64_t pv = cfg_.patch_volume();
  const int64_t n = cfg_.tokens();
  const int64_t m = cfg_.latents;

  tok_w_ = weight("tokenize.proj.w", {pv, d});
  tok_b_ = zeros_param("tokenize.proj.b", {d});
  tok_ln_g_ = ones_param("tokenize.ln.g", {d});
  tok_ln_b_ = zeros_param("tokenize.ln.b", {d});
  pos_ = weight("tokenize.pos", {n, d});

  latent_init_ = weight("latents.init", {m, dp});

  if (cfg_.self_cond) {
    const int64_t hidden = static_cast<int64_t>(cfg_.ffn_expansion) * dp;
    sc_w1_ = weight("selfcond.mlp.w1", {dp, hidden});
    sc_b1_ = zeros_param("selfcond.mlp.b1", {hidden});
    sc_w2_ = weight("selfcond.mlp.w2", {hidden, dp});
    sc_b2_ = zeros_param("selfcond.mlp.b2", {dp});
    // Zero affine: a fresh model is independent of whatever warm start it
    // is handed, and gradients teach it to open the gate.
    sc_ln_g_ = zeros_param("selfcond.ln.g", {dp});
    sc_ln_b_ = zeros_param("selfcond.ln.b", {dp});
  }

  time_w_ = weight("time.proj.w", {kTimeFeatures, dp});
  time_b_ = zeros_param("time.proj.b", {dp});
  class_table_ = weight("class.table", {cfg_.num_classes + 1, dp});

  blocks_.reserve(cfg_.blocks);
  for (int b = 0; b < cfg_.blocks; ++b) {
    BlockParams bp;
    const std::string base = "block" + std::to_string(b);
    bp.read = make_layer(base + ".read", dp, d);
    bp.self_layers.reserve(cfg_.layers_per_block);
    for (int k = 0; k < cfg_.layers_per_block; ++k)
      bp.self_layers.push_back(
          make_layer(base + ".self" + std::to_string(k), dp, dp));
    bp.write = make_layer(base + ".write", d, dp);
    blocks_.push_back(std::move(bp));
  }

  out_ln_g_ = ones_param("readout.ln.g", {d});
  out_ln_b_ = zeros_param("readout.ln.b", {d});
  out_w_ = weight("readout.w", {d, pv});
  out_b_ = zeros_param("readout.b", {pv});
}

Tensor RinModel::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ContractError("unknown parameter: " + name);
  return params_[it->second].second;
}

bool RinModel::has_param(const std::string& name) const {
  return index_.count(name) > 0;
}

// ---- forward pieces ----

namespace {

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1,
           const Tensor& w2, const Tensor& b2) {
  return add_bias(matmul(gelu(add_bias(matmul(x, w1), b1)), w2), b2);
}

// Sinusoidal features of the continuous time in [0, 1]; geometric
// frequencies, then sin/cos pairs.
Tensor time_features(double t, Dtype dtype) {
  const int half = kTimeFeatures / 2;
  std::vector<double> f(kTimeFeatures);
  for (int i = 0; i < half; ++i) {
    const double freq =
        std::pow(10000.0, static_cast<double>(i) / (half - 1));
    f[i] = std::sin(freq * t);
    f[half + i] = std::cos(freq * t);
  }
  return Tensor::from_span({1, kTimeFeatures}, f, dtype);
}

}  // namespace

Tensor RinModel::tokenize(const Tensor& x) const {
  if (x.shape() != cfg_.input_shape)
    throw ShapeError("tokenize: input " + shape_str(x.shape()) +
                     " does not match configured " +
                     shape_str(cfg_.input_shape));
  Tensor patches = space_to_depth(x, cfg_.patch);
  Tensor flat = reshape(patches, {cfg_.tokens(), cfg_.patch_volume()});
  Tensor proj = add_bias(matmul(flat, tok_w_), tok_b_);
  return add(layer_norm(proj, tok_ln_g_, tok_ln_b_), pos_);
}

Tensor RinModel::init_latents(double t, std::optional<int> label,
                              const Tensor& prev) const {
  if (t < 0.0 || t > 1.0)
    throw ContractError("init_latents: t=" + std::to_string(t) +
                        " outside [0,1]");
  if (label && (*label < 0 || *label >= cfg_.num_classes))
    throw ContractError("init_latents: class " + std::to_string(*label) +
                        " outside [0," + std::to_string(cfg_.num_classes) +
                        ")");
  const int64_t m = cfg_.latents;
  const int64_t dp = cfg_.latent_dim;

  Tensor z = latent_init_;
  if (cfg_.self_cond) {
    Tensor p = prev.defined() ? prev : Tensor::zeros({m, dp}, cfg_.dtype);
    if (p.shape() != Shape{m, dp})
      throw ShapeError("init_latents: warm start " + shape_str(p.shape()) +
                       " vs latents [" + std::to_string(m) + "," +
                       std::to_string(dp) + "]");
    Tensor h = add(p, ffn(p, sc_w1_, sc_b1_, sc_w2_, sc_b2_));
    z = add(z, layer_norm(h, sc_ln_g_, sc_ln_b_));
  }

  Tensor t_tok = add_bias(matmul(time_features(t, cfg_.dtype), time_w_),
                          time_b_);
  const int64_t row = label ? *label : cfg_.num_classes;  // last row = null
  Tensor c_tok = slice(class_table_, 0, row, 1);
  return concat({z, t_tok, c_tok}, 0);
}

RinModel::Forward RinModel::forward(const Tensor& x_t, double t,
                                    std::optional<int> label,
                                    const Tensor& prev_latents,
                                    AttentionProbe* probe) const {
  forward_calls_.fetch_add(1, std::memory_order_relaxed);
  Tensor x = tokenize(x_t);
  Tensor z = init_latents(t, label, prev_latents);

  const int64_t n = cfg_.tokens();
  const int64_t mp = cfg_.latents + kCondTokens;
  for (int b = 0; b < cfg_.blocks; ++b) {
    const BlockParams& bp = blocks_[b];
    // latents read the interface
    {
      Tensor attn;
      Tensor zq = layer_norm(z, bp.read.ln_g, bp.read.ln_b);
      z = add(z, multihead_attention(zq, x, cfg_.heads, bp.read.attn,
                                     probe ? &attn : nullptr));
      if (probe) {
        probe->reads.push_back({b, attn});
        probe->map_entries += static_cast<uint64_t>(mp) * n;
      }
      z = add(z, ffn(layer_norm(z, bp.read.ffn_ln_g, bp.read.ffn_ln_b),
                     bp.read.w1, bp.read.b1, bp.read.w2, bp.read.b2));
    }
    // latent-only computation
    for (const LayerParams& lp : bp.self_layers) {
      Tensor zn = layer_norm(z, lp.ln_g, lp.ln_b);
      z = add(z, multihead_attention(zn, zn, cfg_.heads, lp.attn));
      if (probe) probe->map_entries += static_cast<uint64_t>(mp) * mp;
      z = add(z, ffn(layer_norm(z, lp.ffn_ln_g, lp.ffn_ln_b), lp.w1, lp.b1,
                     lp.w2, lp.b2));
    }
    // latents write back to the interface
    {
      Tensor xq = layer_norm(x, bp.write.ln_g, bp.write.ln_b);
      x = add(x, multihead_attention(xq, z, cfg_.heads, bp.write.attn));
      if (probe) probe->map_entries += static_cast<uint64_t>(n) * mp;
      x = add(x, ffn(layer_norm(x, bp.write.ffn_ln_g, bp.write.ffn_ln_b),
                     bp.write.w1, bp.write.b1, bp.write.w2, bp.write.b2));
    }
  }

  Tensor y = add_bias(matmul(layer_norm(x, out_ln_g_, out_ln_b_), out_w_),
                      out_b_);
  Shape grid = cfg_.token_grid();
  grid.push_back(cfg_.patch_volume());
  Tensor eps = depth_to_space(reshape(y, std::move(grid)), cfg_.patch);

  Forward out;
  out.eps = std::move(eps);
  out.latents = slice(z, 0, 0, cfg_.latents);
  return out;
}

}  // namespace rin
