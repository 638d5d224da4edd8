#include "rin/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace rin {

uint64_t CostReport::flops_total() const {
  return tokenize.total() + latent_init.total() + read.total() +
         compute.total() + write.total() + readout.total();
}

uint64_t CostReport::flops_token_scaling() const {
  return tokenize.flops_token + latent_init.flops_token + read.flops_token +
         compute.flops_token + write.flops_token + readout.flops_token;
}

namespace {

uint64_t layer_params(uint64_t dq, uint64_t dkv, uint64_t expansion) {
  const uint64_t h = expansion * dq;
  uint64_t p = 2 * dq;                          // attn ln
  p += dq * dq + dq + 2 * (dkv * dq + dq) + dq * dq + dq;  // q,k,v,o
  p += 2 * dq;                                  // ffn ln
  p += dq * h + h + h * dq + dq;                // ffn
  return p;
}

struct Dims {
  uint64_t n, pv, d, dp, m, mp, B, K, H, E, h_lat, h_int;
};

Dims dims_of(const ModelConfig& cfg) {
  Dims z{};
  z.n = static_cast<uint64_t>(cfg.tokens());
  z.pv = static_cast<uint64_t>(cfg.patch_volume());
  z.d = static_cast<uint64_t>(cfg.interface_dim);
  z.dp = static_cast<uint64_t>(cfg.latent_dim);
  z.m = static_cast<uint64_t>(cfg.latents);
  z.mp = z.m + kCondTokens;
  z.B = static_cast<uint64_t>(cfg.blocks);
  z.K = static_cast<uint64_t>(cfg.layers_per_block);
  z.H = static_cast<uint64_t>(cfg.heads);
  z.E = static_cast<uint64_t>(cfg.ffn_expansion);
  z.h_lat = z.E * z.dp;
  z.h_int = z.E * z.d;
  return z;
}

// FFN cost on `tokens` rows of width `dim`: two matmuls, biases, gelu,
// the pre-norm and the residual add.
uint64_t ffn_flops(uint64_t tokens, uint64_t dim, uint64_t expansion) {
  const uint64_t h = expansion * dim;
  uint64_t f = 5 * tokens * dim;                   // ln
  f += 2 * tokens * dim * h + tokens * h;          // in proj + bias
  f += 5 * tokens * h;                             // gelu
  f += 2 * tokens * h * dim + tokens * dim;        // out proj + bias
  f += tokens * dim;                               // residual
  return f;
}

// Attention cost with tq queries of width dq against tkv keys of width dkv.
// Includes the query-side norm and the residual add; the key/value
// projections are reported separately so callers can assign them to the
// side whose token count they follow.
struct AttnSplit {
  uint64_t q_side;   // scales with tq
  uint64_t kv_side;  // scales with tkv
  uint64_t maps;     // scores, scale, softmax, mix: scales with tq*tkv
};

AttnSplit attn_flops(uint64_t tq, uint64_t tkv, uint64_t dq, uint64_t dkv,
                     uint64_t heads) {
  AttnSplit s{};
  s.q_side = 5 * tq * dq;                       // query ln
  s.q_side += 2 * tq * dq * dq + tq * dq;       // q proj
  s.q_side += 2 * tq * dq * dq + tq * dq;       // out proj
  s.q_side += tq * dq;                          // residual
  s.kv_side = 2 * (2 * tkv * dkv * dq + tkv * dq);  // k and v proj
  s.maps = 2 * tq * tkv * dq;                   // scores
  s.maps += heads * tq * tkv;                   // logit scaling
  s.maps += 5 * heads * tq * tkv;               // softmax
  s.maps += 2 * tq * tkv * dq;                  // value mixing
  return s;
}

}  // namespace

uint64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const Dims z = dims_of(cfg);
  uint64_t p = z.pv * z.d + z.d;  // tokenize proj
  p += 2 * z.d;                   // tokenize ln
  p += z.n * z.d;                 // positions
  p += z.m * z.dp;                // initial latents
  if (cfg.self_cond)
    p += z.dp * z.h_lat + z.h_lat + z.h_lat * z.dp + z.dp + 2 * z.dp;
  p += kTimeFeatures * z.dp + z.dp;  // time proj
  p += (static_cast<uint64_t>(cfg.num_classes) + 1) * z.dp;
  p += z.B * (layer_params(z.dp, z.d, z.E) +      // read
              z.K * layer_params(z.dp, z.dp, z.E) +  // compute
              layer_params(z.d, z.dp, z.E));      // write
  p += 2 * z.d + z.d * z.pv + z.pv;  // readout
  return p;
}

CostReport count_flops(const ModelConfig& cfg) {
  cfg.validate();
  const Dims z = dims_of(cfg);
  CostReport r;
  r.params = count_params(cfg);
  r.attention_entries = count_attention_entries(cfg);

  // tokenize: projection, norm, positions; all per interface token
  r.tokenize.flops_token = 2 * z.n * z.pv * z.d + z.n * z.d  // proj + bias
                           + 5 * z.n * z.d                   // ln
                           + z.n * z.d;                      // + positions

  // latent seeding: warm-start gate and conditioning tokens
  if (cfg.self_cond) {
    uint64_t f = 2 * z.m * z.dp * z.h_lat + z.m * z.h_lat;  // mlp in
    f += 5 * z.m * z.h_lat;                                 // gelu
    f += 2 * z.m * z.h_lat * z.dp + z.m * z.dp;             // mlp out
    f += z.m * z.dp;                                        // prev + mlp
    f += 5 * z.m * z.dp;                                    // gate ln
    f += z.m * z.dp;                                        // + init latents
    r.latent_init.flops_fixed += f;
  }
  r.latent_init.flops_fixed +=
      2 * kTimeFeatures * z.dp + z.dp;  // time token projection

  // per block; multiplied out at the end
  AttnSplit read = attn_flops(z.mp, z.n, z.dp, z.d, z.H);
  ComponentCost read_c;
  read_c.flops_fixed = z.B * (read.q_side + ffn_flops(z.mp, z.dp, z.E));
  read_c.flops_token = z.B * (read.kv_side + read.maps);
  r.read = read_c;

  AttnSplit self_a = attn_flops(z.mp, z.mp, z.dp, z.dp, z.H);
  r.compute.flops_fixed =
      z.B * z.K *
      (self_a.q_side + self_a.kv_side + self_a.maps +
       ffn_flops(z.mp, z.dp, z.E));

  AttnSplit write = attn_flops(z.n, z.mp, z.d, z.dp, z.H);
  ComponentCost write_c;
  write_c.flops_token =
      z.B * (write.q_side + write.maps + ffn_flops(z.n, z.d, z.E));
  write_c.flops_fixed = z.B * write.kv_side;
  r.write = write_c;

  // readout: norm + projection back to patch volumes
  r.readout.flops_token =
      5 * z.n * z.d + 2 * z.n * z.d * z.pv + z.n * z.pv;
  return r;
}

namespace {

void report_row(std::ostringstream& os, const char* name,
                const ComponentCost& c) {
  os << std::left << std::setw(12) << name << std::right << std::setw(16)
     << c.flops_token << std::setw(16) << c.flops_fixed << std::setw(16)
     << c.total() << '\n';
}

}  // namespace

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << "forward cost, one example, closed form\n";
  os << "convention: 2 FLOPs per multiply-accumulate; layer_norm, gelu and\n";
  os << "softmax at 5 FLOPs/element; bias, residual and scaling adds at\n";
  os << "1 FLOP/element; data movement is free\n\n";
  os << std::left << std::setw(12) << "component" << std::right
     << std::setw(16) << "token-scaling" << std::setw(16) << "fixed"
     << std::setw(16) << "total" << '\n';
  report_row(os, "tokenize", tokenize);
  report_row(os, "latent_init", latent_init);
  report_row(os, "read", read);
  report_row(os, "compute", compute);
  report_row(os, "write", write);
  report_row(os, "readout", readout);
  os << std::left << std::setw(12) << "all" << std::right << std::setw(16)
     << flops_token_scaling() << std::setw(16)
     << (flops_total() - flops_token_scaling()) << std::setw(16)
     << flops_total() << "\n\n";
  os << "params            " << params << '\n';
  os << "gflops            " << std::fixed << std::setprecision(3)
     << static_cast<double>(flops_total()) / 1e9 << '\n';
  os << "attention entries " << attention_entries << '\n';
  return os.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "component,flops_token_scaling,flops_fixed,flops_total\n";
  const std::pair<const char*, const ComponentCost*> rows[] = {
      {"tokenize", &tokenize}, {"latent_init", &latent_init},
      {"read", &read},         {"compute", &compute},
      {"write", &write},       {"readout", &readout}};
  for (const auto& [name, c] : rows)
    os << name << ',' << c->flops_token << ',' << c->flops_fixed << ','
       << c->total() << '\n';
  os << "all," << flops_token_scaling() << ','
     << (flops_total() - flops_token_scaling()) << ',' << flops_total()
     << '\n';
  os << "params,,," << params << '\n';
  os << "attention_entries,,," << attention_entries << '\n';
  return os.str();
}

// ---- attention traces ----

AttentionTrace trace_from_probe(const AttentionProbe& probe,
                                const ModelConfig& cfg) {
  AttentionTrace tr;
  tr.blocks = cfg.blocks;
  tr.latents = cfg.latents;
  tr.tokens = cfg.tokens();
  if (static_cast<int>(probe.reads.size()) != cfg.blocks)
    throw ContractError("trace_from_probe: " +
                        std::to_string(probe.reads.size()) +
                        " read maps for " + std::to_string(cfg.blocks) +
                        " blocks");
  tr.values.assign(static_cast<size_t>(cfg.blocks) * tr.latents * tr.tokens,
                   0.0);
  for (const auto& read : probe.reads) {
    const Tensor& a = read.attn;  // [heads, m + cond, n]
    if (a.rank() != 3 || a.dim(1) != cfg.latents + kCondTokens ||
        a.dim(2) != tr.tokens)
      throw ContractError("trace_from_probe: unexpected map shape " +
                          shape_str(a.shape()));
    const int64_t heads = a.dim(0);
    const int64_t rows = a.dim(1);
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t q = 0; q < tr.latents; ++q)
        for (int64_t k = 0; k < tr.tokens; ++k)
          tr.values[(static_cast<size_t>(read.block) * tr.latents + q) *
                        tr.tokens +
                    k] += a.at((h * rows + q) * tr.tokens + k) / heads;
  }
  return tr;
}

AttentionTrace export_read_attention(const RinModel& model, const Tensor& x_t,
                                     double t, std::optional<int> label) {
  NoGradGuard ng;
  AttentionProbe probe;
  model.forward(x_t, t, label, Tensor{}, &probe);
  return trace_from_probe(probe, model.config());
}

double attention_row_entropy(const AttentionTrace& trace, int block,
                             int64_t latent) {
  double h = 0;
  for (int64_t k = 0; k < trace.tokens; ++k) {
    const double p = trace.value(block, latent, k);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

// ---- oracle gap ----

Predictor model_predictor(const RinModel& model) {
  return [&model](const Tensor& x_t, double t) {
    NoGradGuard ng;
    return model.forward(x_t, t, std::nullopt, Tensor{}).eps;
  };
}

Predictor optimal_gaussian_predictor(const ScheduleSpec& sched) {
  return [sched](const Tensor& x_t, double t) {
    const double c = std::sqrt(1.0 - gamma(sched, t));
    return scale(x_t, c);
  };
}

double expected_gamma(const ScheduleSpec& sched, int points) {
  if (points < 3 || points % 2 == 0)
    throw ContractError("expected_gamma: points must be odd and >= 3");
  const double h = 1.0 / (points - 1);
  double acc = gamma(sched, 0.0) + gamma(sched, 1.0);
  for (int i = 1; i < points - 1; ++i)
    acc += gamma(sched, i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

OracleReport eval_oracle_gap(const Predictor& pred, const Shape& data_shape,
                             const ScheduleSpec& sched, int trials,
                             uint64_t seed, Dtype dtype) {
  if (trials < 2) throw ContractError("eval_oracle_gap: trials < 2");
  NoGradGuard ng;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < trials; ++i) {
    const uint64_t key = static_cast<uint64_t>(i);
    Tensor x0 = normal_init(data_shape, seed, RngStream::kDataset, key, dtype);
    Tensor eps =
        normal_init(data_shape, seed, RngStream::kTrainNoise, key, dtype);
    const double t = rng::uniform(seed, RngStream::kTrainTime, key, 0);
    Tensor x_t = noisify(x0, t, eps, sched);
    Tensor e_hat = pred(x_t, t);
    if (e_hat.shape() != data_shape)
      throw ShapeError("eval_oracle_gap: predictor returned " +
                       shape_str(e_hat.shape()) + " for " +
                       shape_str(data_shape));
    const double li = mean_all(mul(sub(e_hat, eps), sub(e_hat, eps))).item();
    sum += li;
    sum_sq += li * li;
  }
  OracleReport r;
  r.measured = sum / trials;
  const double var =
      std::max(0.0, (sum_sq / trials - r.measured * r.measured)) /
      std::max(1, trials - 1) * trials;
  r.std_error = std::sqrt(var / trials);
  r.analytic = expected_gamma(sched);
  return r;
}

}  // namespace rin
