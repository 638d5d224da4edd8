#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rin/tensor.hpp"

namespace rin {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct LambConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
};

// Layerwise-adaptive Adam: bias-corrected moments, decoupled weight decay
// folded into the update direction, and each tensor's step rescaled by
// ||w|| / ||update||. Robust to gradient scale by construction.
class Lamb {
 public:
  Lamb(LambConfig cfg, const NamedParams& params);

  // Applies one update in place. lr comes from the schedule.
  void step(const Gradients& grads, double lr);

  int64_t steps_done() const { return t_; }
  const LambConfig& config() const { return cfg_; }
  const std::vector<Tensor>& moments1() const { return m_; }
  const std::vector<Tensor>& moments2() const { return v_; }
  // Checkpoint restore; shapes must match the tracked parameters.
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t);

 private:
  LambConfig cfg_;
  NamedParams params_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

// Shadow copy of the parameters, pulled toward them each update:
// shadow = beta * shadow + (1 - beta) * param. Initialized as a copy.
class Ema {
 public:
  Ema(double beta, const NamedParams& params);

  void update();  // reads the tracked parameters' current values
  double beta() const { return beta_; }
  const NamedParams& shadow() const { return shadow_; }
  void restore(const NamedParams& shadow);

 private:
  double beta_;
  NamedParams params_;
  NamedParams shadow_;
};

struct LrSchedule {
  double base = 1e-3;
  int64_t warmup = 1000;
  int64_t total = 100000;
};

// Linear warmup to base over `warmup` steps, then cosine decay to zero at
// `total`. lr_at(0) = base/warmup, lr_at(total and beyond) = 0.
double lr_at(const LrSchedule& s, int64_t step);

}  // namespace rin
