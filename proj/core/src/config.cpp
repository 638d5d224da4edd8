#include "rin/config.hpp"

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "rin/error.hpp"

namespace rin {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an integer");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_shape(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

std::string fmt_patch(const std::vector<int>& p) {
  std::string out;
  for (size_t i = 0; i < p.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(p[i]);
  }
  return out;
}

const char* schedule_kind_name(ScheduleKind k) {
  return k == ScheduleKind::kCosine ? "cosine" : "sigmoid";
}

ScheduleKind schedule_kind_from_name(const std::string& key,
                                     const std::string& v) {
  if (v == "cosine") return ScheduleKind::kCosine;
  if (v == "sigmoid") return ScheduleKind::kSigmoid;
  throw ConfigError(key + ": unknown schedule '" + v + "'");
}

void apply_schedule_key(ScheduleSpec& s, const std::string& key,
                        const std::string& field, const std::string& v) {
  if (field == "kind") s.kind = schedule_kind_from_name(key, v);
  else if (field == "ns") s.ns = to_double(key, v);
  else if (field == "ds") s.ds = to_double(key, v);
  else if (field == "start") s.start = to_double(key, v);
  else if (field == "end") s.end = to_double(key, v);
  else if (field == "tau") s.tau = to_double(key, v);
  else if (field == "clip_min") s.clip_min = to_double(key, v);
  else throw ConfigError("unknown key '" + key + "'");
}

void write_schedule_keys(std::ostringstream& os, const char* prefix,
                         const ScheduleSpec& s) {
  os << prefix << ".kind=" << schedule_kind_name(s.kind) << '\n';
  os << prefix << ".ns=" << fmt_double(s.ns) << '\n';
  os << prefix << ".ds=" << fmt_double(s.ds) << '\n';
  os << prefix << ".start=" << fmt_double(s.start) << '\n';
  os << prefix << ".end=" << fmt_double(s.end) << '\n';
  os << prefix << ".tau=" << fmt_double(s.tau) << '\n';
  os << prefix << ".clip_min=" << fmt_double(s.clip_min) << '\n';
}

}  // namespace

Shape parse_shape(const std::string& text) {
  if (text.empty()) throw ConfigError("bad shape '" + text + "'");
  Shape out;
  size_t begin = 0;
  while (true) {
    const size_t end = text.find('x', begin);
    const std::string part = text.substr(begin, end - begin);
    if (part.empty()) throw ConfigError("bad shape '" + text + "'");
    out.push_back(to_int("shape", part));
    if (end == std::string::npos) break;
    begin = end + 1;
  }
  return out;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
  }
  return out;
}

RunConfig run_config_from_text(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, v] : parse_kv(text)) {
    const size_t dot = key.find('.');
    const std::string section = dot == std::string::npos ? key : key.substr(0, dot);
    const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (section == "model") {
      ModelConfig& m = cfg.model;
      if (field == "input_shape") m.input_shape = parse_shape(v);
      else if (field == "patch") {
        m.patch.clear();
        for (int64_t e : parse_shape(v)) m.patch.push_back(static_cast<int>(e));
      }
      else if (field == "blocks") m.blocks = static_cast<int>(to_int(key, v));
      else if (field == "layers_per_block")
        m.layers_per_block = static_cast<int>(to_int(key, v));
      else if (field == "latents") m.latents = static_cast<int>(to_int(key, v));
      else if (field == "latent_dim")
        m.latent_dim = static_cast<int>(to_int(key, v));
      else if (field == "interface_dim")
        m.interface_dim = static_cast<int>(to_int(key, v));
      else if (field == "heads") m.heads = static_cast<int>(to_int(key, v));
      else if (field == "ffn_expansion")
        m.ffn_expansion = static_cast<int>(to_int(key, v));
      else if (field == "num_classes")
        m.num_classes = static_cast<int>(to_int(key, v));
      else if (field == "self_cond") m.self_cond = to_bool(key, v);
      else if (field == "dtype") {
        if (v == "f32") m.dtype = Dtype::f32;
        else if (v == "f64") m.dtype = Dtype::f64;
        else throw ConfigError(key + ": unknown dtype '" + v + "'");
      }
      else throw ConfigError("unknown key '" + key + "'");
    } else if (section == "schedule") {
      apply_schedule_key(cfg.schedule, key, field, v);
    } else if (section == "sample_schedule") {
      apply_schedule_key(cfg.sample_schedule, key, field, v);
    } else if (section == "sampler") {
      if (field == "rule") {
        if (v == "ddim") cfg.sampler.rule = SamplerRule::kDdim;
        else if (v == "ddpm") cfg.sampler.rule = SamplerRule::kDdpm;
        else throw ConfigError(key + ": unknown rule '" + v + "'");
      }
      else if (field == "steps") cfg.sampler.steps = static_cast<int>(to_int(key, v));
      else if (field == "clip_scale") cfg.sampler.clip_scale = to_double(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } else if (section == "optim") {
      if (field == "lr") cfg.lr = to_double(key, v);
      else if (field == "warmup") cfg.warmup = to_int(key, v);
      else if (field == "beta1") cfg.optim.beta1 = to_double(key, v);
      else if (field == "beta2") cfg.optim.beta2 = to_double(key, v);
      else if (field == "eps") cfg.optim.eps = to_double(key, v);
      else if (field == "weight_decay") cfg.optim.weight_decay = to_double(key, v);
      else if (field == "ema_beta") cfg.ema_beta = to_double(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } else if (section == "train") {
      if (field == "batch_size") cfg.batch_size = static_cast<int>(to_int(key, v));
      else if (field == "total_updates") cfg.total_updates = to_int(key, v);
      else if (field == "self_cond_rate") cfg.self_cond_rate = to_double(key, v);
      else if (field == "checkpoint_every") cfg.checkpoint_every = to_int(key, v);
      else if (field == "context_frames")
        cfg.context_frames = static_cast<int>(to_int(key, v));
      else if (field == "seed") cfg.seed = static_cast<uint64_t>(to_int(key, v));
      else if (field == "out_dir") cfg.out_dir = v;
      else throw ConfigError("unknown key '" + key + "'");
    } else if (section == "dataset") {
      if (field == "kind") cfg.dataset.kind = dataset_kind_from_name(v);
      else if (field == "shape") cfg.dataset.shape = parse_shape(v);
      else if (field == "path") cfg.dataset.path = v;
      else if (field == "clip") cfg.dataset.clip = to_bool(key, v);
      else if (field == "hflip") cfg.dataset.hflip = to_bool(key, v);
      else if (field == "examples") cfg.dataset.examples = to_int(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_text(buf.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  const ModelConfig& m = cfg.model;
  os << "model.input_shape=" << fmt_shape(m.input_shape) << '\n';
  os << "model.patch=" << fmt_patch(m.patch) << '\n';
  os << "model.blocks=" << m.blocks << '\n';
  os << "model.layers_per_block=" << m.layers_per_block << '\n';
  os << "model.latents=" << m.latents << '\n';
  os << "model.latent_dim=" << m.latent_dim << '\n';
  os << "model.interface_dim=" << m.interface_dim << '\n';
  os << "model.heads=" << m.heads << '\n';
  os << "model.ffn_expansion=" << m.ffn_expansion << '\n';
  os << "model.num_classes=" << m.num_classes << '\n';
  os << "model.self_cond=" << (m.self_cond ? "true" : "false") << '\n';
  os << "model.dtype=" << (m.dtype == Dtype::f64 ? "f64" : "f32") << '\n';
  write_schedule_keys(os, "schedule", cfg.schedule);
  write_schedule_keys(os, "sample_schedule", cfg.sample_schedule);
  os << "sampler.rule="
     << (cfg.sampler.rule == SamplerRule::kDdim ? "ddim" : "ddpm") << '\n';
  os << "sampler.steps=" << cfg.sampler.steps << '\n';
  os << "sampler.clip_scale=" << fmt_double(cfg.sampler.clip_scale) << '\n';
  os << "optim.lr=" << fmt_double(cfg.lr) << '\n';
  os << "optim.warmup=" << cfg.warmup << '\n';
  os << "optim.beta1=" << fmt_double(cfg.optim.beta1) << '\n';
  os << "optim.beta2=" << fmt_double(cfg.optim.beta2) << '\n';
  os << "optim.eps=" << fmt_double(cfg.optim.eps) << '\n';
  os << "optim.weight_decay=" << fmt_double(cfg.optim.weight_decay) << '\n';
  os << "optim.ema_beta=" << fmt_double(cfg.ema_beta) << '\n';
  os << "train.batch_size=" << cfg.batch_size << '\n';
  os << "train.total_updates=" << cfg.total_updates << '\n';
  os << "train.self_cond_rate=" << fmt_double(cfg.self_cond_rate) << '\n';
  os << "train.checkpoint_every=" << cfg.checkpoint_every << '\n';
  os << "train.context_frames=" << cfg.context_frames << '\n';
  os << "train.seed=" << cfg.seed << '\n';
  os << "train.out_dir=" << cfg.out_dir << '\n';
  os << "dataset.kind=" << dataset_kind_name(cfg.dataset.kind) << '\n';
  os << "dataset.shape=" << fmt_shape(cfg.dataset.resolved_shape()) << '\n';
  os << "dataset.path=" << cfg.dataset.path << '\n';
  os << "dataset.clip=" << (cfg.dataset.clip ? "true" : "false") << '\n';
  os << "dataset.hflip=" << (cfg.dataset.hflip ? "true" : "false") << '\n';
  os << "dataset.examples=" << cfg.dataset.examples << '\n';
  return os.str();
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 14695981039346656037ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t config_digest(const RunConfig& cfg) {
  return fnv1a64(serialize_run_config(cfg));
}

void RunConfig::validate() const {
  model.validate();
  dataset.validate();
  if (model.input_shape != dataset.resolved_shape())
    throw ConfigError("model.input_shape " + shape_str(model.input_shape) +
                      " does not match dataset shape " +
                      shape_str(dataset.resolved_shape()));
  if (self_cond_rate < 0.0 || self_cond_rate > 1.0)
    throw ConfigError("train.self_cond_rate outside [0,1]");
  if (batch_size < 1) throw ConfigError("train.batch_size < 1");
  if (total_updates < 1) throw ConfigError("train.total_updates < 1");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every < 1");
  if (lr <= 0.0) throw ConfigError("optim.lr must be positive");
  if (warmup < 1 || warmup >= total_updates)
    throw ConfigError("optim.warmup must be in [1, total_updates)");
  if (ema_beta < 0.0 || ema_beta >= 1.0)
    throw ConfigError("optim.ema_beta outside [0,1)");
  if (sampler.steps < 1) throw ConfigError("sampler.steps < 1");
  if (context_frames < 0) throw ConfigError("train.context_frames < 0");
  if (context_frames > 0 &&
      (model.spatial_rank() != 3 || context_frames >= model.input_shape[0]))
    throw ConfigError("train.context_frames does not fit the input");
  if (dataset.kind == DatasetKind::kCifar10) {
    if (!std::filesystem::exists(dataset.path))
      throw ConfigError("dataset.path does not exist: " + dataset.path);
    if (model.num_classes != 0 && model.num_classes < 10)
      throw ConfigError("cifar10 labels need model.num_classes >= 10");
  }
  if (out_dir.empty()) throw ConfigError("train.out_dir is empty");
}

}  // namespace rin
