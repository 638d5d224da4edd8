#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rin/analysis.hpp"
#include "rin/checkpoint.hpp"
#include "rin/config.hpp"
#include "rin/data.hpp"
#include "rin/diffusion.hpp"
#include "rin/fdcheck.hpp"
#include "rin/image.hpp"
#include "rin/train.hpp"

namespace fs = std::filesystem;
using namespace rin;

namespace {

struct LoadedModel {
  RunConfig run;
  std::unique_ptr<RinModel> model;
  uint64_t step = 0;
  uint64_t seed = 0;
};

// Rebuilds the model a checkpoint was trained with and loads the EMA (or
// raw) weights into it.
LoadedModel model_from_checkpoint(const std::string& path, bool use_ema) {
  TrainState st = load_checkpoint(path);
  LoadedModel out;
  out.run = run_config_from_text(st.config_text);
  out.step = st.step;
  out.seed = st.seed;
  out.model = std::make_unique<RinModel>(out.run.model, st.seed);
  const auto& source = use_ema && !st.ema.empty() ? st.ema : st.params;
  const auto& live = out.model->parameters();
  if (source.size() != live.size())
    throw FormatError("checkpoint " + path + " carries " +
                      std::to_string(source.size()) + " tensors, model has " +
                      std::to_string(live.size()));
  for (size_t i = 0; i < live.size(); ++i) {
    if (source[i].first != live[i].first ||
        source[i].second.shape() != live[i].second.shape())
      throw FormatError("checkpoint tensor '" + source[i].first +
                        "' does not match the model");
    Tensor dst = live[i].second;
    const Tensor& src = source[i].second;
    if (dst.dtype() == Dtype::f64) {
      auto d = dst.mutable_data<double>();
      auto s = src.data<double>();
      std::copy(s.begin(), s.end(), d.begin());
    } else {
      auto d = dst.mutable_data<float>();
      auto s = src.data<float>();
      std::copy(s.begin(), s.end(), d.begin());
    }
  }
  return out;
}

std::string zero_pad(uint64_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

// Writes one sample: a single PPM for images, per-frame PPMs plus an index
// file for videos. Returns the primary path.
std::string write_sample(const std::string& dir, uint64_t index,
                         const Tensor& x) {
  const std::string stem = dir + "/sample_" + zero_pad(index, 5);
  if (x.rank() == 3) {
    write_ppm(stem + ".ppm", x);
    return stem + ".ppm";
  }
  const int64_t frames = x.dim(0);
  const int64_t per = x.numel() / frames;
  std::ofstream list(stem + ".frames.txt");
  for (int64_t f = 0; f < frames; ++f) {
    Tensor frame = slice(x, 0, f, 1);
    frame = reshape(frame, {x.dim(1), x.dim(2), x.dim(3)});
    const std::string fp = stem + "_f" + std::to_string(f) + ".ppm";
    write_ppm(fp, frame);
    list << fs::path(fp).filename().string() << '\n';
  }
  (void)per;
  return stem + ".frames.txt";
}

int cmd_train(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  const int64_t print_every =
      std::max<int64_t>(1, cfg.total_updates / 20);
  TrainResult res = train(cfg, [&](const StepLog& log) {
    if (log.step % static_cast<uint64_t>(print_every) == 0 ||
        log.step == static_cast<uint64_t>(cfg.total_updates))
      std::printf("step %llu  loss %.6f  lr %.3e  |g| %.4f  %.1f ms\n",
                  static_cast<unsigned long long>(log.step), log.loss,
                  log.lr, log.grad_norm, log.wall_ms);
  });
  if (res.resumed_from > 0)
    std::printf("resumed from step %llu\n",
                static_cast<unsigned long long>(res.resumed_from));
  std::printf("done: %llu steps, final loss %.6f\n",
              static_cast<unsigned long long>(res.steps_done),
              res.final_loss);
  std::printf("metrics: %s\n", res.metrics_path.c_str());
  std::printf("checkpoint: %s\n", res.last_checkpoint.c_str());
  return 0;
}

int cmd_sample(const std::string& ckpt, int steps, const std::string& rule,
               int count, uint64_t seed, int class_label,
               const std::string& out_dir, bool raw_weights) {
  LoadedModel lm = model_from_checkpoint(ckpt, !raw_weights);
  fs::create_directories(out_dir);
  SamplerSpec sampler = lm.run.sampler;
  if (steps > 0) sampler.steps = steps;
  if (rule == "ddim") sampler.rule = SamplerRule::kDdim;
  else if (rule == "ddpm") sampler.rule = SamplerRule::kDdpm;
  else if (!rule.empty()) throw ConfigError("unknown rule '" + rule + "'");

  std::unique_ptr<Dataset> context_source;
  if (lm.run.context_frames > 0)
    context_source = make_dataset(lm.run.dataset, lm.seed,
                                  lm.run.model.dtype);

  for (int i = 0; i < count; ++i) {
    GenerateOptions opt;
    opt.sampler = sampler;
    opt.seed = seed;
    opt.sample_index = static_cast<uint64_t>(i);
    if (class_label >= 0) opt.label = class_label;
    if (context_source) {
      opt.context = context_source->example(i).x;
      opt.context_frames = lm.run.context_frames;
    }
    Tensor x = generate(*lm.model, lm.run.sample_schedule, opt);
    std::printf("%s\n", write_sample(out_dir, opt.sample_index, x).c_str());
  }
  return 0;
}

int cmd_gradcheck(const std::string& config_path, int entries_per_tensor) {
  RunConfig cfg = load_run_config(config_path);
  cfg.model.dtype = Dtype::f64;
  cfg.model.validate();
  RinModel model(cfg.model, cfg.seed);

  auto data = make_dataset(cfg.dataset, cfg.seed, Dtype::f64);
  const std::vector<Tensor> batch{data->example(0).x};
  const std::vector<std::optional<int>> labels{std::nullopt};
  TrainLossOptions opt;
  opt.self_cond_rate = cfg.self_cond_rate;
  opt.trace_estimation_pass = false;
  opt.context_frames = cfg.context_frames;
  opt.seed = cfg.seed;
  opt.step = 0;
  const auto loss_value = [&] {
    return train_loss(model, cfg.schedule, batch, labels, opt).loss.item();
  };

  Gradients grads = backward(
      train_loss(model, cfg.schedule, batch, labels, opt).loss);

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, p] : model.parameters()) {
    Tensor g = grads.at(p);
    const int64_t n = p.numel();
    double tensor_worst = 0;
    for (int j = 0; j < entries_per_tensor; ++j) {
      const int64_t idx = n == 1 ? 0 : j * (n - 1) / std::max(1, entries_per_tensor - 1);
      const double numeric = central_diff(p, idx, 1e-5, loss_value);
      const double err = rel_error(g.at(idx), numeric);
      tensor_worst = std::max(tensor_worst, err);
    }
    std::printf("%-32s max rel err %.3e\n", name.c_str(), tensor_worst);
    if (tensor_worst > worst) {
      worst = tensor_worst;
      worst_name = name;
    }
  }
  std::printf("worst: %s at %.3e\n", worst_name.c_str(), worst);
  return worst < 1e-4 ? 0 : 1;
}

int cmd_flops(const std::string& config_path, const std::string& csv_path) {
  RunConfig cfg = load_run_config(config_path);
  CostReport report = count_flops(cfg.model);
  std::printf("%s", report.to_text().c_str());
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + csv_path);
    out << report.to_csv();
    std::printf("csv: %s\n", csv_path.c_str());
  }
  return 0;
}

// Per-block attention maps for each sampling step: grayscale strips (one
// tile per step), a raw tensor dump, and a mean-entropy CSV.
int cmd_attn(const std::string& ckpt, uint64_t seed, int steps,
             const std::string& out_dir) {
  LoadedModel lm = model_from_checkpoint(ckpt, true);
  fs::create_directories(out_dir);
  const ModelConfig& mc = lm.run.model;
  const Shape grid = mc.token_grid();
  int64_t gh = grid[0];
  int64_t gw = grid.size() > 1 ? grid[1] : 1;
  for (size_t i = 2; i < grid.size(); ++i) gw *= grid[i];

  std::vector<AttentionProbe> probes;
  GenerateOptions opt;
  opt.sampler = lm.run.sampler;
  opt.sampler.steps = steps;
  opt.seed = seed;
  opt.probes = &probes;
  if (lm.run.context_frames > 0) {
    auto data = make_dataset(lm.run.dataset, lm.seed, mc.dtype);
    opt.context = data->example(0).x;
    opt.context_frames = lm.run.context_frames;
  }
  generate(*lm.model, lm.run.sample_schedule, opt);

  std::vector<std::pair<std::string, Tensor>> raw;
  std::ofstream entropy_csv(out_dir + "/attn_entropy.csv");
  entropy_csv << "step,block,mean_entropy_nats\n";
  const int64_t n = mc.tokens();
  std::vector<std::vector<double>> strips(
      static_cast<size_t>(mc.blocks),
      std::vector<double>(static_cast<size_t>(gh * (gw + 1) * steps), 0.0));

  for (int s = 0; s < steps; ++s) {
    AttentionTrace tr = trace_from_probe(probes[static_cast<size_t>(s)], mc);
    for (int b = 0; b < mc.blocks; ++b) {
      std::vector<double> mean_map(static_cast<size_t>(n), 0.0);
      double ent = 0;
      for (int64_t q = 0; q < tr.latents; ++q) {
        ent += attention_row_entropy(tr, b, q);
        for (int64_t k = 0; k < n; ++k)
          mean_map[static_cast<size_t>(k)] +=
              tr.value(b, q, k) / static_cast<double>(tr.latents);
      }
      entropy_csv << s << ',' << b << ','
                  << ent / static_cast<double>(tr.latents) << '\n';
      raw.emplace_back(
          "step" + zero_pad(static_cast<uint64_t>(s), 3) + ".block" +
              std::to_string(b),
          Tensor::from_span({tr.latents, n},
                            std::vector<double>(tr.values.begin() +
                                                    b * tr.latents * n,
                                                tr.values.begin() +
                                                    (b + 1) * tr.latents * n),
                            Dtype::f64));
      const double peak =
          *std::max_element(mean_map.begin(), mean_map.end());
      auto& strip = strips[static_cast<size_t>(b)];
      for (int64_t y = 0; y < gh; ++y)
        for (int64_t x = 0; x < gw; ++x)
          strip[static_cast<size_t>(y * (gw + 1) * steps + s * (gw + 1) +
                                    x)] =
              peak > 0 ? mean_map[static_cast<size_t>(y * gw + x)] / peak
                       : 0.0;
    }
  }
  for (int b = 0; b < mc.blocks; ++b) {
    Tensor img = Tensor::from_span({gh, (gw + 1) * steps},
                                   strips[static_cast<size_t>(b)],
                                   Dtype::f64);
    write_bytes(out_dir + "/attn_block" + std::to_string(b) + ".pgm",
                encode_pgm(img));
  }
  save_named_tensors(out_dir + "/attn_raw.rin", raw);
  std::printf("wrote %d block strips, %s/attn_raw.rin, %s/attn_entropy.csv\n",
              mc.blocks, out_dir.c_str(), out_dir.c_str());
  return 0;
}

int cmd_eval_oracle(const std::string& config_path, const std::string& ckpt,
                    int trials) {
  RunConfig cfg = load_run_config(config_path);
  const Shape shape = cfg.model.input_shape;

  OracleReport ideal = eval_oracle_gap(optimal_gaussian_predictor(cfg.schedule),
                                       shape, cfg.schedule, trials, cfg.seed,
                                       Dtype::f64);
  std::printf("optimal predictor: measured %.6f +- %.6f, analytic %.6f, gap %+.6f\n",
              ideal.measured, ideal.std_error, ideal.analytic, ideal.gap());

  std::unique_ptr<RinModel> model;
  if (!ckpt.empty()) {
    LoadedModel lm = model_from_checkpoint(ckpt, true);
    model = std::move(lm.model);
  } else {
    model = std::make_unique<RinModel>(cfg.model, cfg.seed);
  }
  OracleReport got = eval_oracle_gap(model_predictor(*model), shape,
                                     cfg.schedule, trials, cfg.seed,
                                     cfg.model.dtype);
  std::printf("model (%s):  measured %.6f +- %.6f, analytic %.6f, gap %+.6f\n",
              ckpt.empty() ? "untrained" : ckpt.c_str(), got.measured,
              got.std_error, got.analytic, got.gap());
  return 0;
}

int cmd_schedule(const std::string& kind, double start, double end,
                 double tau, int points, const std::string& out_path) {
  ScheduleSpec spec;
  spec.kind = kind == "cosine" ? ScheduleKind::kCosine : ScheduleKind::kSigmoid;
  if (kind != "cosine" && kind != "sigmoid")
    throw ConfigError("unknown schedule '" + kind + "'");
  spec.start = start;
  spec.end = end;
  spec.tau = tau;
  if (out_path.empty()) {
    write_schedule_csv(spec, std::cout, points);
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + out_path);
    write_schedule_csv(spec, out, points);
    std::printf("csv: %s\n", out_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-interface denoising models: train, sample, inspect"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, rule, out_dir = "samples", csv_path;
  std::string sched_kind = "cosine", sched_out;
  int steps = 0, count = 1, class_label = -1, entries = 3, trials = 256;
  int attn_steps = 8, points = 1001;
  uint64_t seed = 0;
  double sched_start = -3.0, sched_end = 3.0, sched_tau = 0.9;
  bool raw_weights = false;

  auto* train_cmd = app.add_subcommand("train", "Run or resume a training loop");
  train_cmd->add_option("config", config_path, "run configuration file")
      ->required()->check(CLI::ExistingFile);

  auto* sample_cmd = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample_cmd->add_option("ckpt", ckpt_path, "checkpoint file")
      ->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--steps", steps, "sampling steps (0 keeps config)");
  sample_cmd->add_option("--rule", rule, "ddim or ddpm");
  sample_cmd->add_option("--count", count, "number of samples");
  sample_cmd->add_option("--seed", seed, "sampling seed");
  sample_cmd->add_option("--class", class_label, "class label (-1 none)");
  sample_cmd->add_option("--out", out_dir, "output directory");
  sample_cmd->add_flag("--raw-weights", raw_weights,
                       "sample with raw weights instead of EMA");

  auto* grad_cmd = app.add_subcommand("gradcheck",
                                      "Finite-difference gradient audit");
  grad_cmd->add_option("config", config_path, "run configuration file")
      ->required()->check(CLI::ExistingFile);
  grad_cmd->add_option("--entries", entries, "probed entries per tensor");

  auto* flops_cmd = app.add_subcommand("flops", "Closed-form cost report");
  flops_cmd->add_option("config", config_path, "run configuration file")
      ->required()->check(CLI::ExistingFile);
  flops_cmd->add_option("--csv", csv_path, "also write the report as CSV");

  auto* attn_cmd = app.add_subcommand("attn",
                                      "Export read attention during sampling");
  attn_cmd->add_option("ckpt", ckpt_path, "checkpoint file")
      ->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--seed", seed, "sampling seed");
  attn_cmd->add_option("--steps", attn_steps, "sampling steps to trace");
  attn_cmd->add_option("--out", out_dir, "output directory");

  auto* oracle_cmd = app.add_subcommand(
      "eval-oracle", "Denoising loss against the analytic optimum");
  oracle_cmd->add_option("config", config_path, "run configuration file")
      ->required()->check(CLI::ExistingFile);
  oracle_cmd->add_option("--ckpt", ckpt_path, "evaluate these weights");
  oracle_cmd->add_option("--trials", trials, "Monte Carlo trials");

  auto* sched_cmd = app.add_subcommand("schedule", "Export a noise schedule as CSV");
  sched_cmd->add_option("--kind", sched_kind, "cosine or sigmoid");
  sched_cmd->add_option("--start", sched_start, "sigmoid start");
  sched_cmd->add_option("--end", sched_end, "sigmoid end");
  sched_cmd->add_option("--tau", sched_tau, "sigmoid temperature");
  sched_cmd->add_option("--points", points, "grid points");
  sched_cmd->add_option("--out", sched_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path);
    if (sample_cmd->parsed())
      return cmd_sample(ckpt_path, steps, rule, count, seed, class_label,
                        out_dir, raw_weights);
    if (grad_cmd->parsed()) return cmd_gradcheck(config_path, entries);
    if (flops_cmd->parsed()) return cmd_flops(config_path, csv_path);
    if (attn_cmd->parsed())
      return cmd_attn(ckpt_path, seed, attn_steps, out_dir);
    if (oracle_cmd->parsed())
      return cmd_eval_oracle(config_path, ckpt_path, trials);
    if (sched_cmd->parsed())
      return cmd_schedule(sched_kind, sched_start, sched_end, sched_tau,
                          points, sched_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
