#include "rin/train.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "rin/checkpoint.hpp"
#include "rin/error.hpp"
#include "rin/rng.hpp"

namespace fs = std::filesystem;

namespace rin {

namespace {

std::string ckpt_path(const std::string& out_dir, uint64_t step) {
  return out_dir + "/ckpt_" + std::to_string(step) + ".rin";
}

// Copies loaded values into live tensors, matching names and shapes.
void restore_named(const NamedParams& live,
                   const std::vector<std::pair<std::string, Tensor>>& loaded,
                   const char* what) {
  if (live.size() != loaded.size())
    throw FormatError(std::string("resume: checkpoint holds ") +
                      std::to_string(loaded.size()) + " " + what +
                      " tensors, model has " + std::to_string(live.size()));
  for (size_t i = 0; i < live.size(); ++i) {
    const auto& [name, src] = loaded[i];
    const std::string& live_name = live[i].first;
    Tensor dst = live[i].second;  // handle copy, shared storage
    if (name != live_name)
      throw FormatError("resume: " + std::string(what) + " tensor " +
                        std::to_string(i) + " is '" + name + "', expected '" +
                        live_name + "'");
    if (src.shape() != dst.shape() || src.dtype() != dst.dtype())
      throw FormatError("resume: shape or dtype mismatch in '" + name + "'");
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
}

double tensor_sq_norm(const Tensor& t) {
  double acc = 0;
  if (t.dtype() == Dtype::f64)
    for (double v : t.data<double>()) acc += v * v;
  else
    for (float v : t.data<float>()) acc += static_cast<double>(v) * v;
  return acc;
}

// Keeps the first `lines` lines, dropping leftovers from a run that died
// after its last checkpoint, so line count tracks completed steps.
void truncate_metrics(const std::string& path, uint64_t lines) {
  std::ifstream in(path);
  if (!in) return;
  std::ostringstream kept;
  std::string line;
  uint64_t n = 0;
  while (n < lines && std::getline(in, line)) {
    kept << line << '\n';
    ++n;
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept.str();
}

}  // namespace

std::string latest_checkpoint(const std::string& out_dir) {
  if (!fs::is_directory(out_dir)) return "";
  uint64_t best_step = 0;
  std::string best;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt_", 0) != 0 || name.size() < 10 ||
        name.substr(name.size() - 4) != ".rin")
      continue;
    const std::string digits = name.substr(5, name.size() - 9);
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos)
      continue;
    const uint64_t step = std::stoull(digits);
    if (best.empty() || step > best_step) {
      best_step = step;
      best = entry.path().string();
    }
  }
  return best;
}

TrainResult train(const RunConfig& cfg,
                  const std::function<void(const StepLog&)>& on_step) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);

  RinModel model(cfg.model, cfg.seed);
  auto dataset = make_dataset(cfg.dataset, cfg.seed, cfg.model.dtype);
  Lamb lamb(cfg.optim, model.parameters());
  Ema ema(cfg.ema_beta, model.parameters());
  const std::string config_text = serialize_run_config(cfg);
  const uint64_t digest = fnv1a64(config_text);

  TrainResult res;
  res.metrics_path = cfg.out_dir + "/metrics.csv";

  uint64_t start = 0;
  const std::string resume_from = latest_checkpoint(cfg.out_dir);
  if (!resume_from.empty()) {
    TrainState st = load_checkpoint(resume_from);
    if (fnv1a64(st.config_text) != digest)
      throw ConfigError("resume: " + resume_from +
                        " was written by a different configuration");
    if (st.step > static_cast<uint64_t>(cfg.total_updates))
      throw ConfigError("resume: " + resume_from + " is past total_updates");
    restore_named(model.parameters(), st.params, "parameter");
    std::vector<Tensor> m, v;
    for (auto& [name, t] : st.lamb_m) m.push_back(t);
    for (auto& [name, t] : st.lamb_v) v.push_back(t);
    lamb.restore(std::move(m), std::move(v), st.lamb_steps);
    ema.restore(st.ema);
    start = st.step;
    res.resumed_from = start;
    res.last_checkpoint = resume_from;
    truncate_metrics(res.metrics_path, start);
  }

  std::ofstream metrics(res.metrics_path, std::ios::app);
  if (!metrics)
    throw TrainError("cannot open " + res.metrics_path + " for append");
  metrics.precision(10);

  const int64_t data_size = dataset->size();
  std::vector<Tensor> batch(static_cast<size_t>(cfg.batch_size));
  std::vector<std::optional<int>> labels(
      static_cast<size_t>(cfg.batch_size));
  const bool use_labels = cfg.model.num_classes > 0;

  for (uint64_t s = start; s < static_cast<uint64_t>(cfg.total_updates);
       ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int j = 0; j < cfg.batch_size; ++j) {
      const double u = rng::uniform(cfg.seed, RngStream::kBatchIndex, s,
                                    static_cast<uint64_t>(j));
      const auto idx = std::min<int64_t>(
          data_size - 1,
          static_cast<int64_t>(u * static_cast<double>(data_size)));
      Example e = dataset->example(idx);
      batch[static_cast<size_t>(j)] = e.x;
      labels[static_cast<size_t>(j)] = use_labels ? e.label : std::nullopt;
    }

    TrainLossOptions opt;
    opt.self_cond_rate = cfg.self_cond_rate;
    opt.context_frames = cfg.context_frames;
    opt.seed = cfg.seed;
    opt.step = s;
    TrainLossResult step_loss =
        train_loss(model, cfg.schedule, batch, labels, opt);
    const double loss = step_loss.loss.item();
    if (!std::isfinite(loss))
      throw TrainError("step " + std::to_string(s + 1) +
                       ": non-finite loss" +
                       (res.last_checkpoint.empty()
                            ? std::string(", no checkpoint written yet")
                            : ", last checkpoint " + res.last_checkpoint));

    Gradients grads = backward(step_loss.loss);
    double sq = 0;
    for (const auto& [name, p] : model.parameters())
      if (grads.contains(p)) sq += tensor_sq_norm(grads.at(p));
    const double grad_norm = std::sqrt(sq);

    const double lr = lr_at(cfg.lr_schedule(), static_cast<int64_t>(s));
    lamb.step(grads, lr);
    ema.update();

    const auto t1 = std::chrono::steady_clock::now();
    StepLog log;
    log.step = s + 1;
    log.loss = loss;
    log.lr = lr;
    log.grad_norm = grad_norm;
    log.wall_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    metrics << log.step << ',' << log.loss << ',' << log.lr << ','
            << log.grad_norm << ',' << log.wall_ms << '\n';
    metrics.flush();

    if (s == start) res.first_loss = loss;
    res.final_loss = loss;
    res.steps_done = s + 1;

    const bool at_end = s + 1 == static_cast<uint64_t>(cfg.total_updates);
    if ((s + 1) % static_cast<uint64_t>(cfg.checkpoint_every) == 0 ||
        at_end) {
      TrainState st;
      st.config_text = config_text;
      st.step = s + 1;
      st.seed = cfg.seed;
      st.params = model.parameters();
      st.lamb_steps = lamb.steps_done();
      const auto& m1 = lamb.moments1();
      const auto& m2 = lamb.moments2();
      for (size_t i = 0; i < st.params.size(); ++i) {
        st.lamb_m.emplace_back(st.params[i].first, m1[i]);
        st.lamb_v.emplace_back(st.params[i].first, m2[i]);
      }
      st.ema = ema.shadow();
      res.last_checkpoint = ckpt_path(cfg.out_dir, s + 1);
      save_checkpoint(res.last_checkpoint, st);
    }
    if (on_step) on_step(log);
  }

  if (res.steps_done == 0) {
    // Fully trained already; report the existing state.
    res.steps_done = start;
  }
  return res;
}

}  // namespace rin
