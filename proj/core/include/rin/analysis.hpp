#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rin/diffusion.hpp"
#include "rin/model.hpp"
#include "rin/tensor.hpp"

namespace rin {

// One architectural component's forward cost, split into the share that
// scales with the interface length n and the share that does not.
struct ComponentCost {
  uint64_t flops_token = 0;  // linear in n
  uint64_t flops_fixed = 0;  // independent of n
  uint64_t total() const { return flops_token + flops_fixed; }
};

// Closed-form cost model for one forward pass of one example.
// Conventions (also printed by to_text): a multiply-accumulate counts as
// 2 FLOPs; layer_norm, gelu and softmax count 5 FLOPs per element; bias,
// residual and scaling adds count 1 FLOP per element; data movement
// (patchify, reshape, concat) is free.
struct CostReport {
  uint64_t params = 0;
  ComponentCost tokenize, latent_init, read, compute, write, readout;
  uint64_t attention_entries = 0;

  uint64_t flops_total() const;
  uint64_t flops_token_scaling() const;  // sum of the linear-in-n parts
  std::string to_text() const;
  std::string to_csv() const;
};

// Learned scalar count; mirrors the model's parameter enumeration exactly.
uint64_t count_params(const ModelConfig& cfg);
CostReport count_flops(const ModelConfig& cfg);

// Read attention averaged over heads, conditioning query rows dropped:
// [blocks, latents, tokens], each (block, latent) row summing to 1.
struct AttentionTrace {
  int blocks = 0;
  int64_t latents = 0;
  int64_t tokens = 0;
  std::vector<double> values;

  double value(int block, int64_t latent, int64_t token) const {
    return values[(static_cast<size_t>(block) * latents + latent) * tokens +
                  token];
  }
};

AttentionTrace trace_from_probe(const AttentionProbe& probe,
                                const ModelConfig& cfg);

// One gradient-free forward at (x_t, t), returning the read-attention trace.
AttentionTrace export_read_attention(const RinModel& model, const Tensor& x_t,
                                     double t, std::optional<int> label);

// Shannon entropy in nats of one traced attention row.
double attention_row_entropy(const AttentionTrace& trace, int block,
                             int64_t latent);

// eps predictor under test: x_t, t -> eps_pred.
using Predictor = std::function<Tensor(const Tensor& x_t, double t)>;

Predictor model_predictor(const RinModel& model);
// The closed-form optimum for standard normal data: eps = sqrt(1-gamma)*x_t.
Predictor optimal_gaussian_predictor(const ScheduleSpec& sched);

// E_t[gamma(t)] over t ~ U(0,1), composite Simpson quadrature.
double expected_gamma(const ScheduleSpec& sched, int points = 1001);

struct OracleReport {
  double measured = 0;    // Monte Carlo denoising loss of the predictor
  double std_error = 0;   // standard error of the estimate
  double analytic = 0;    // quadrature value of E_t[gamma]
  double gap() const { return measured - analytic; }
};

// Monte Carlo loss of `pred` on i.i.d. standard normal data against the
// analytic optimum. The optimum is exact for this data distribution, so the
// gap isolates how far the predictor is from ideal.
OracleReport eval_oracle_gap(const Predictor& pred, const Shape& data_shape,
                             const ScheduleSpec& sched, int trials,
                             uint64_t seed, Dtype dtype = Dtype::f32);

}  // namespace rin
