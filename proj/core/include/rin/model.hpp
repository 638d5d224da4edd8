#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rin/tensor.hpp"

namespace rin {

// Two conditioning tokens ride along with the latents: time and class.
inline constexpr int kCondTokens = 2;
inline constexpr int kTimeFeatures = 128;

struct ModelConfig {
  Shape input_shape;       // {h, w, c} or {frames, h, w, c}, channels last
  std::vector<int> patch;  // per spatial axis
  int blocks = 2;
  int layers_per_block = 2;  // latent self-attention layers per block
  int latents = 8;
  int latent_dim = 64;
  int interface_dim = 32;
  int heads = 4;
  int ffn_expansion = 4;
  int num_classes = 0;  // 0 keeps only the unconditional table row
  bool self_cond = true;
  Dtype dtype = Dtype::f32;

  int spatial_rank() const { return static_cast<int>(input_shape.size()) - 1; }
  int64_t channels() const { return input_shape.back(); }
  int64_t tokens() const;        // interface length n
  int64_t patch_volume() const;  // prod(patch) * channels
  Shape token_grid() const;      // spatial extents divided by the patch
  void validate() const;         // throws ConfigError
};

// Collects per-forward attention maps when passed to forward().
struct AttentionProbe {
  struct ReadMap {
    int block;
    Tensor attn;  // post-softmax [heads, m + kCondTokens, n]
  };
  std::vector<ReadMap> reads;
  // Total attention-map entries (queries x keys summed over every
  // attention instance, heads counted once).
  uint64_t map_entries = 0;
};

// Closed-form size of all attention maps in one forward pass:
// blocks * (2*n*m' + K*m'^2) with m' = latents + conditioning tokens.
uint64_t count_attention_entries(const ModelConfig& cfg);

// Interface/latent denoiser. Interface tokens are patch projections of the
// noisy input; a small set of latents does the bulk of the computation and
// reads/writes the interface once per block. Latents can be warm-started
// from the previous step's output through a zero-initialized gate, so an
// untouched model starts exactly at its learned initial latents.
class RinModel {
 public:
  RinModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Learned tensors in a fixed, documented order.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  Tensor param(const std::string& name) const;
  bool has_param(const std::string& name) const;

  // Noisy input -> interface tokens [n, d]: patchify, project, normalize,
  // add learned positions.
  Tensor tokenize(const Tensor& x) const;

  // Initial latent stack [m + kCondTokens, latent_dim]. prev may be an
  // undefined tensor (no warm start; treated as zeros). When self_cond is
  // off, prev is ignored entirely.
  Tensor init_latents(double t, std::optional<int> label,
                      const Tensor& prev) const;

  struct Forward {
    Tensor eps;      // predicted noise, same shape as the input
    Tensor latents;  // final latents [m, latent_dim], conditioning rows dropped
  };
  Forward forward(const Tensor& x_t, double t, std::optional<int> label,
                  const Tensor& prev_latents,
                  AttentionProbe* probe = nullptr) const;

  // Forward invocations since construction.
  uint64_t forward_calls() const {
    return forward_calls_.load(std::memory_order_relaxed);
  }

 private:
  struct LayerParams {
    Tensor ln_g, ln_b;          // pre-attention norm (query side)
    AttentionParams attn;
    Tensor ffn_ln_g, ffn_ln_b;  // pre-ffn norm
    Tensor w1, b1, w2, b2;
  };
  struct BlockParams {
    LayerParams read;
    std::vector<LayerParams> self_layers;
    LayerParams write;
  };

  Tensor add_param(const std::string& name, Tensor t);
  Tensor weight(const std::string& name, Shape shape);
  Tensor zeros_param(const std::string& name, Shape shape);
  Tensor ones_param(const std::string& name, Shape shape);
  LayerParams make_layer(const std::string& prefix, int64_t dq, int64_t dkv);

  ModelConfig cfg_;
  uint64_t seed_;
  uint64_t init_counter_ = 0;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, size_t> index_;

  // structured views over params_
  Tensor tok_w_, tok_b_, tok_ln_g_, tok_ln_b_, pos_;
  Tensor latent_init_;
  Tensor sc_w1_, sc_b1_, sc_w2_, sc_b2_, sc_ln_g_, sc_ln_b_;
  Tensor time_w_, time_b_;
  Tensor class_table_;
  std::vector<BlockParams> blocks_;
  Tensor out_ln_g_, out_ln_b_, out_w_, out_b_;

  mutable std::atomic<uint64_t> forward_calls_{0};
};

}  // namespace rin
