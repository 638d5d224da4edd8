#include "rin/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rin {

namespace {

void check_time(double t, const char* who) {
  if (!(t >= 0.0 && t <= 1.0))
    throw ContractError(std::string(who) + ": t=" + std::to_string(t) +
                        " outside [0,1]");
}

}  // namespace

double gamma(const ScheduleSpec& s, double t) {
  check_time(t, "gamma");
  if (s.kind == ScheduleKind::kCosine) {
    const double u = (t + s.ns) / (1.0 + s.ds);
    const double c = std::cos(u * std::numbers::pi / 2.0);
    return c * c;
  }
  // (sig(end/tau) - sig(u/tau)) / (sig(end/tau) - sig(start/tau)) written
  // through tanh(x/2) = 2*sig(x) - 1. Algebraically identical, and exact
  // where it matters: 1 at t=0, 0 (then clip_min) at t=1, and 0.5 at the
  // midpoint of a symmetric start/end because tanh is odd.
  const double u = t * (s.end - s.start) + s.start;
  const double th_u = std::tanh(u / (2.0 * s.tau));
  const double th_start = std::tanh(s.start / (2.0 * s.tau));
  const double th_end = std::tanh(s.end / (2.0 * s.tau));
  const double g = (th_end - th_u) / (th_end - th_start);
  return std::clamp(g, s.clip_min, 1.0);
}

double log_snr(const ScheduleSpec& s, double t) {
  const double g = gamma(s, t);
  return std::log(g / (1.0 - g));
}

void write_schedule_csv(const ScheduleSpec& s, std::ostream& os, int points) {
  if (points < 2) throw ContractError("write_schedule_csv: points < 2");
  os << "t,gamma,log_snr\n";
  os.precision(17);
  for (int i = 0; i < points; ++i) {
    const double t = static_cast<double>(i) / (points - 1);
    os << t << ',' << gamma(s, t) << ',' << log_snr(s, t) << '\n';
  }
}

Tensor noisify(const Tensor& x0, double t, const Tensor& eps,
               const ScheduleSpec& s) {
  if (!x0.defined() || !eps.defined())
    throw ContractError("noisify: undefined operand");
  if (x0.shape() != eps.shape())
    throw ShapeError("noisify: x0 " + shape_str(x0.shape()) + " vs eps " +
                     shape_str(eps.shape()));
  const double g = gamma(s, t);
  const double sg = std::sqrt(g), se = std::sqrt(1.0 - g);
  std::vector<double> out(static_cast<size_t>(x0.numel()));
  for (int64_t i = 0; i < x0.numel(); ++i)
    out[i] = sg * x0.at(i) + se * eps.at(i);
  return Tensor::from_span(x0.shape(), out, x0.dtype());
}

namespace {

struct StepGammas {
  double g_now, g_next;
};

StepGammas step_gammas(const ScheduleSpec& s, double t_now, double t_next,
                       const char* who) {
  check_time(t_now, who);
  check_time(t_next, who);
  if (t_next > t_now)
    throw ContractError(std::string(who) + ": t_next " +
                        std::to_string(t_next) + " > t_now " +
                        std::to_string(t_now));
  StepGammas g{gamma(s, t_now), gamma(s, t_next)};
  if (g.g_now <= 0.0 || g.g_now > 1.0 || g.g_next <= 0.0 || g.g_next > 1.0)
    throw ScheduleError(std::string(who) + ": gamma outside (0,1] at t=" +
                        std::to_string(t_now));
  return g;
}

double clip(double v, double scale) {
  return scale > 0.0 ? std::clamp(v, -scale, scale) : v;
}

}  // namespace

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, double t_now,
                 double t_next, const ScheduleSpec& s, double clip_scale) {
  if (!x_t.defined() || !eps_pred.defined())
    throw ContractError("ddim_step: undefined operand");
  if (x_t.shape() != eps_pred.shape())
    throw ShapeError("ddim_step: x_t " + shape_str(x_t.shape()) +
                     " vs eps_pred " + shape_str(eps_pred.shape()));
  const auto [g_now, g_next] = step_gammas(s, t_now, t_next, "ddim_step");
  const double sq_g = std::sqrt(g_now), sq_e = std::sqrt(1.0 - g_now);
  const double sq_gn = std::sqrt(g_next), sq_en = std::sqrt(1.0 - g_next);

  std::vector<double> out(static_cast<size_t>(x_t.numel()));
  for (int64_t i = 0; i < x_t.numel(); ++i) {
    const double x = x_t.at(i), e = eps_pred.at(i);
    const double xp = clip((x - sq_e * e) / sq_g, clip_scale);
    // re-derive the noise direction from the clipped estimate
    const double eps = sq_e > 0.0 ? (x - sq_g * xp) / sq_e : e;
    out[i] = sq_gn * xp + sq_en * eps;
  }
  return Tensor::from_span(x_t.shape(), out, x_t.dtype());
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_pred, double t_now,
                 double t_next, const ScheduleSpec& s, double clip_scale,
                 const Tensor& z) {
  if (!x_t.defined() || !eps_pred.defined() || !z.defined())
    throw ContractError("ddpm_step: undefined operand");
  if (x_t.shape() != eps_pred.shape() || x_t.shape() != z.shape())
    throw ShapeError("ddpm_step: x_t " + shape_str(x_t.shape()) +
                     " vs eps_pred " + shape_str(eps_pred.shape()) + " vs z " +
                     shape_str(z.shape()));
  const auto [g_now, g_next] = step_gammas(s, t_now, t_next, "ddpm_step");
  const double alpha = g_now / g_next;  // per-step signal retention
  const double sigma = std::sqrt(1.0 - alpha);
  const double sq_g = std::sqrt(g_now), sq_e = std::sqrt(1.0 - g_now);
  const double inv_sq_alpha = 1.0 / std::sqrt(alpha);

  std::vector<double> out(static_cast<size_t>(x_t.numel()));
  for (int64_t i = 0; i < x_t.numel(); ++i) {
    const double x = x_t.at(i), e = eps_pred.at(i);
    const double xp = clip((x - sq_e * e) / sq_g, clip_scale);
    const double eps = sq_e > 0.0 ? (x - sq_g * xp) / sq_e : e;
    out[i] =
        inv_sq_alpha * (x - ((1.0 - alpha) / sq_e) * eps) + sigma * z.at(i);
  }
  return Tensor::from_span(x_t.shape(), out, x_t.dtype());
}

// ---- training loss ----

namespace {

// Replace the leading context frames with the clean ones; both tensors are
// plain values. Frames are axis 0, so the region is a contiguous prefix.
Tensor splice_context(const Tensor& noisy, const Tensor& clean,
                      int context_frames) {
  const int64_t frame_elems = noisy.numel() / noisy.dim(0);
  const int64_t cut = context_frames * frame_elems;
  std::vector<double> v(static_cast<size_t>(noisy.numel()));
  for (int64_t i = 0; i < noisy.numel(); ++i)
    v[i] = i < cut ? clean.at(i) : noisy.at(i);
  return Tensor::from_span(noisy.shape(), v, noisy.dtype());
}

}  // namespace

TrainLossResult train_loss(const RinModel& model, const ScheduleSpec& sched,
                           std::span<const Tensor> x0,
                           std::span<const std::optional<int>> labels,
                           const TrainLossOptions& opt) {
  if (x0.empty()) throw ContractError("train_loss: empty batch");
  if (!labels.empty() && labels.size() != x0.size())
    throw ContractError("train_loss: " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(x0.size()) +
                        " examples");
  if (opt.self_cond_rate < 0.0 || opt.self_cond_rate > 1.0)
    throw ContractError("train_loss: self_cond_rate outside [0,1]");
  const ModelConfig& cfg = model.config();
  if (opt.context_frames < 0 ||
      (opt.context_frames > 0 &&
       (cfg.spatial_rank() != 3 ||
        opt.context_frames >= cfg.input_shape[0])))
    throw ContractError("train_loss: invalid context_frames");
  // One coin per batch: either every example warm-starts or none does.
  const bool warm_start =
      cfg.self_cond && opt.self_cond_rate > 0.0 &&
      rng::uniform(opt.seed, RngStream::kSelfCondCoin, opt.step, 0) <
          opt.self_cond_rate;

  TrainLossResult res;
  Tensor sum;
  for (size_t i = 0; i < x0.size(); ++i) {
    if (x0[i].shape() != cfg.input_shape)
      throw ShapeError("train_loss: example " + std::to_string(i) + " is " +
                       shape_str(x0[i].shape()) + ", model wants " +
                       shape_str(cfg.input_shape));
    const std::optional<int> label = labels.empty() ? std::nullopt : labels[i];
    const double t =
        rng::uniform(opt.seed, RngStream::kTrainTime, opt.step, i);
    res.times.push_back(t);
    const uint64_t noise_key = (opt.step << 16) | static_cast<uint64_t>(i);
    Tensor eps = normal_init(cfg.input_shape, opt.seed,
                             RngStream::kTrainNoise, noise_key, cfg.dtype);
    Tensor x_t = noisify(x0[i], t, eps, sched);
    if (opt.context_frames > 0)
      x_t = splice_context(x_t, x0[i], opt.context_frames);

    Tensor warm;  // undefined = cold start
    if (warm_start) {
      ++res.estimation_passes;
      if (opt.trace_estimation_pass) {
        warm = stop_gradient(model.forward(x_t, t, label, Tensor{}).latents);
      } else {
        NoGradGuard ng;
        warm = model.forward(x_t, t, label, Tensor{}).latents;
      }
    }

    Tensor pred = model.forward(x_t, t, label, warm).eps;
    Tensor target = eps;
    if (opt.context_frames > 0) {
      const int64_t rest = cfg.input_shape[0] - opt.context_frames;
      pred = slice(pred, 0, opt.context_frames, rest);
      target = slice(target, 0, opt.context_frames, rest);
    }
    Tensor d = sub(pred, target);
    Tensor li = mean_all(mul(d, d));
    sum = sum.defined() ? add(sum, li) : li;
  }
  res.loss = scale(sum, 1.0 / static_cast<double>(x0.size()));
  return res;
}

// ---- sampling ----

Tensor generate(const RinModel& model, const ScheduleSpec& sched,
                const GenerateOptions& opt) {
  const ModelConfig& cfg = model.config();
  const SamplerSpec& sp = opt.sampler;
  if (sp.steps < 1) throw ContractError("generate: steps < 1");
  if (opt.context_frames < 0) throw ContractError("generate: bad context");
  if (opt.context_frames > 0) {
    if (cfg.spatial_rank() != 3 || opt.context_frames >= cfg.input_shape[0])
      throw ContractError("generate: context_frames does not fit input");
    if (!opt.context.defined() || opt.context.shape() != cfg.input_shape)
      throw ContractError(
          "generate: context tensor must carry the full input shape");
  }

  NoGradGuard ng;
  Tensor x = normal_init(cfg.input_shape, opt.seed, RngStream::kSampleInit,
                         opt.sample_index, cfg.dtype);
  if (opt.context_frames > 0)
    x = splice_context(x, opt.context, opt.context_frames);

  Tensor latents;  // threads across steps
  for (int step = 0; step < sp.steps; ++step) {
    const double t_now = 1.0 - static_cast<double>(step) / sp.steps;
    const double t_next =
        std::max(1.0 - static_cast<double>(step + 1) / sp.steps, 0.0);
    AttentionProbe probe;
    RinModel::Forward f =
        model.forward(x, t_now, opt.label, latents,
                      opt.probes ? &probe : nullptr);
    if (opt.probes) opt.probes->push_back(std::move(probe));
    latents = f.latents;
    if (sp.rule == SamplerRule::kDdim) {
      x = ddim_step(x, f.eps, t_now, t_next, sched, sp.clip_scale);
    } else {
      const uint64_t key =
          (opt.sample_index << 20) | static_cast<uint64_t>(step);
      Tensor z = normal_init(cfg.input_shape, opt.seed,
                             RngStream::kSampleStepNoise, key, cfg.dtype);
      x = ddpm_step(x, f.eps, t_now, t_next, sched, sp.clip_scale, z);
    }
    if (opt.context_frames > 0)
      x = splice_context(x, opt.context, opt.context_frames);
  }
  return x;
}

}  // namespace rin
