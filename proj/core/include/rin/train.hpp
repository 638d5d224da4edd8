#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rin/config.hpp"

namespace rin {

struct StepLog {
  uint64_t step = 0;  // 1-based, updates completed after this step
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
  double wall_ms = 0;
};

struct TrainResult {
  uint64_t steps_done = 0;
  uint64_t resumed_from = 0;  // 0 for a fresh run
  double first_loss = 0;      // loss at the first step this call ran
  double final_loss = 0;
  std::string last_checkpoint;
  std::string metrics_path;
};

// Runs (or resumes) the configured loop: sample a batch, take the denoising
// loss, backpropagate, LAMB step, EMA update. Appends one CSV line per step
// to <out_dir>/metrics.csv (step,loss,lr,grad_norm,wall_ms; no header) and
// writes <out_dir>/ckpt_<step>.rin on the checkpoint cadence and at the end.
// Resume picks the newest checkpoint in out_dir and continues bit-exactly;
// a config digest mismatch or a non-finite loss raises, keeping the last
// checkpoint in place. on_step, when set, observes every completed step.
TrainResult train(const RunConfig& cfg,
                  const std::function<void(const StepLog&)>& on_step = {});

// Newest checkpoint path in a run directory, empty string when none exists.
std::string latest_checkpoint(const std::string& out_dir);

}  // namespace rin
