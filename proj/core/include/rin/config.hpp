#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rin/data.hpp"
#include "rin/diffusion.hpp"
#include "rin/model.hpp"
#include "rin/optim.hpp"

namespace rin {

// Everything one training run needs. Text form is flat key=value with dotted
// section prefixes (model.blocks=2); '#' starts a comment.
struct RunConfig {
  ModelConfig model;
  ScheduleSpec schedule;                          // training noise schedule
  ScheduleSpec sample_schedule{ScheduleKind::kCosine};  // sampling default
  SamplerSpec sampler;
  LambConfig optim;
  double lr = 1e-3;
  int64_t warmup = 100;
  double ema_beta = 0.9999;
  double self_cond_rate = 0.9;
  int batch_size = 8;
  int64_t total_updates = 100;
  int64_t checkpoint_every = 1000;
  int context_frames = 0;
  uint64_t seed = 0;
  DatasetSpec dataset;
  std::string out_dir = "out";

  LrSchedule lr_schedule() const { return {lr, warmup, total_updates}; }
  void validate() const;  // throws ConfigError
};

// "8x8x3" -> {8, 8, 3}
Shape parse_shape(const std::string& text);

// Raw key=value lines; duplicate keys and malformed lines are errors.
std::map<std::string, std::string> parse_kv(const std::string& text);

RunConfig run_config_from_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical dump: every key, fixed order, round-trips through the parser.
std::string serialize_run_config(const RunConfig& cfg);

uint64_t fnv1a64(std::string_view bytes);

// Digest of the canonical serialization; checkpoints store it so a resume
// against a different architecture fails loudly.
uint64_t config_digest(const RunConfig& cfg);

}  // namespace rin
