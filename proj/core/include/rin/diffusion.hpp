#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "rin/model.hpp"
#include "rin/tensor.hpp"

namespace rin {

enum class ScheduleKind { kCosine, kSigmoid };

// Noise level gamma(t): fraction of signal variance kept at time t in [0,1].
// Cosine: cos(((t+ns)/(1+ds)) * pi/2)^2. Sigmoid: a sigmoid in t rescaled to
// hit 1 at t=0, clipped below at clip_min.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kSigmoid;
  // cosine shape
  double ns = 2e-4;
  double ds = 2.5e-4;
  // sigmoid shape
  double start = -3.0;
  double end = 3.0;
  double tau = 0.9;
  double clip_min = 1e-9;
};

double gamma(const ScheduleSpec& s, double t);  // t outside [0,1] -> error
double log_snr(const ScheduleSpec& s, double t);
void write_schedule_csv(const ScheduleSpec& s, std::ostream& os,
                        int points = 1001);

// x_t = sqrt(gamma) * x0 + sqrt(1-gamma) * eps. Pure value computation; the
// result is a constant leaf.
Tensor noisify(const Tensor& x0, double t, const Tensor& eps,
               const ScheduleSpec& s);

enum class SamplerRule { kDdim, kDdpm };

struct SamplerSpec {
  SamplerRule rule = SamplerRule::kDdim;
  int steps = 100;
  // x0 estimates are clamped to [-clip_scale, clip_scale]; <= 0 disables.
  double clip_scale = 1.0;
};

// One deterministic update x_t -> x_{t_next}. The x0 estimate is clipped and
// the noise direction recomputed from the clipped estimate before stepping.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, double t_now,
                 double t_next, const ScheduleSpec& s, double clip_scale);

// Stochastic ancestral update; z is the injected standard normal.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, double t_now,
                 double t_next, const ScheduleSpec& s, double clip_scale,
                 const Tensor& z);

struct TrainLossOptions {
  double self_cond_rate = 0.9;
  // Trace the estimation pass and cut it with stop_gradient instead of
  // running it gradient-free. Same values, same gradients; exists so the
  // equivalence is testable.
  bool trace_estimation_pass = false;
  // First `context_frames` frames are conditioning: spliced in clean and
  // excluded from the loss (video prediction).
  int context_frames = 0;
  uint64_t seed = 0;
  uint64_t step = 0;  // RNG key; every draw is (seed, stream, step, index)
};

struct TrainLossResult {
  Tensor loss;                // scalar with graph attached
  int estimation_passes = 0;  // warm-start forwards run (0 or batch size)
  std::vector<double> times;  // per-example sampled t
};

// Denoising loss over a batch: per example, sample t and eps, noisify,
// predict, and average mean((eps_pred - eps)^2) across the batch. One coin
// per batch decides whether latents warm-start from a gradient-free
// estimation forward.
TrainLossResult train_loss(const RinModel& model, const ScheduleSpec& sched,
                           std::span<const Tensor> x0,
                           std::span<const std::optional<int>> labels,
                           const TrainLossOptions& opt);

struct GenerateOptions {
  SamplerSpec sampler;
  std::optional<int> label;
  uint64_t seed = 0;
  uint64_t sample_index = 0;  // distinguishes samples drawn from one seed
  // Clean conditioning frames (video): forward always sees them noise-free
  // and the output keeps them bit-for-bit.
  Tensor context;  // undefined for none
  int context_frames = 0;
  // When set, receives one probe per sampling step.
  std::vector<AttentionProbe>* probes = nullptr;
};

// Iterative sampling from noise. Latents thread through the steps as the
// model's warm start; one forward per step.
Tensor generate(const RinModel& model, const ScheduleSpec& sched,
                const GenerateOptions& opt);

}  // namespace rin
