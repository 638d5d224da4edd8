#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rin/analysis.hpp"
#include "rin/model.hpp"
#include "rin/tensor.hpp"
#include "test_util.hpp"

using namespace rin;
using namespace rintest;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.input_shape = {8, 8, 3};
  cfg.patch = {4, 4};
  cfg.blocks = 2;
  cfg.layers_per_block = 1;
  cfg.latents = 3;
  cfg.latent_dim = 8;
  cfg.interface_dim = 8;
  cfg.heads = 2;
  cfg.dtype = Dtype::f64;
  return cfg;
}

// 64px and 256px class-conditional image configurations; fixed reference
// points for the closed-form cost model.
ModelConfig reference_cfg_64() {
  ModelConfig cfg;
  cfg.input_shape = {64, 64, 3};
  cfg.patch = {4, 4};
  cfg.blocks = 4;
  cfg.layers_per_block = 4;
  cfg.latents = 128;
  cfg.latent_dim = 1024;
  cfg.interface_dim = 256;
  cfg.heads = 16;
  cfg.num_classes = 1000;
  return cfg;
}

ModelConfig reference_cfg_256() {
  ModelConfig cfg;
  cfg.input_shape = {256, 256, 3};
  cfg.patch = {8, 8};
  cfg.blocks = 6;
  cfg.layers_per_block = 4;
  cfg.latents = 256;
  cfg.latent_dim = 1024;
  cfg.interface_dim = 512;
  cfg.heads = 16;
  cfg.num_classes = 1000;
  return cfg;
}

uint64_t live_param_count(const ModelConfig& cfg) {
  RinModel model(cfg, 1);
  uint64_t total = 0;
  for (const auto& [name, t] : model.parameters())
    total += static_cast<uint64_t>(t.numel());
  return total;
}

void zero_param(RinModel& model, const std::string& name) {
  Tensor t = model.param(name);
  auto v = t.mutable_data<double>();
  for (double& e : v) e = 0.0;
}

AttentionTrace make_trace(int64_t tokens, const std::vector<double>& row) {
  AttentionTrace tr;
  tr.blocks = 1;
  tr.latents = 1;
  tr.tokens = tokens;
  tr.values = row;
  return tr;
}

}  // namespace

TEST_CASE("the scalar count matches the instantiated model") {
  ModelConfig cfg = small_cfg();
  CHECK(count_params(cfg) == live_param_count(cfg));

  cfg = small_cfg();
  cfg.self_cond = false;
  CHECK(count_params(cfg) == live_param_count(cfg));

  cfg = small_cfg();
  cfg.num_classes = 7;
  CHECK(count_params(cfg) == live_param_count(cfg));

  cfg = small_cfg();
  cfg.layers_per_block = 0;
  cfg.blocks = 3;
  CHECK(count_params(cfg) == live_param_count(cfg));

  cfg = small_cfg();
  cfg.ffn_expansion = 2;
  cfg.latent_dim = 12;
  cfg.interface_dim = 12;
  cfg.heads = 3;
  CHECK(count_params(cfg) == live_param_count(cfg));

  cfg = small_cfg();
  cfg.input_shape = {4, 16, 16, 3};
  cfg.patch = {2, 4, 4};
  cfg.latents = 5;
  CHECK(count_params(cfg) == live_param_count(cfg));
}

TEST_CASE("count differences isolate single components") {
  const ModelConfig base = small_cfg();

  ModelConfig more_classes = base;
  more_classes.num_classes = 9;
  CHECK(count_params(more_classes) - count_params(base) ==
        9u * static_cast<uint64_t>(base.latent_dim));

  ModelConfig no_gate = base;
  no_gate.self_cond = false;
  const uint64_t dp = static_cast<uint64_t>(base.latent_dim);
  const uint64_t hidden = static_cast<uint64_t>(base.ffn_expansion) * dp;
  CHECK(count_params(base) - count_params(no_gate) ==
        dp * hidden + hidden + hidden * dp + dp + 2 * dp);

  // one more block adds a read, K compute layers and a write; verify the
  // delta against the live parameters that carry the new block's prefix
  ModelConfig deeper = base;
  deeper.blocks = 3;
  RinModel model(deeper, 1);
  uint64_t block2 = 0;
  for (const auto& [name, t] : model.parameters())
    if (name.rfind("block2.", 0) == 0)
      block2 += static_cast<uint64_t>(t.numel());
  CHECK(count_params(deeper) - count_params(base) == block2);

  // doubling the width doubles the token count; only positions follow it
  ModelConfig wide = base;
  wide.input_shape = {8, 16, 3};
  CHECK(count_params(wide) - count_params(base) ==
        static_cast<uint64_t>(base.tokens()) *
            static_cast<uint64_t>(base.interface_dim));
}

TEST_CASE("reference configurations keep their frozen cost numbers") {
  const CostReport r64 = count_flops(reference_cfg_64());
  CHECK(r64.params == 260140336u);
  CHECK(r64.attention_entries == 536640u);
  CHECK(static_cast<double>(r64.flops_total()) / 1e9 ==
        doctest::Approx(70.338).epsilon(1e-3));

  const CostReport r256 = count_flops(reference_cfg_256());
  CHECK(r256.params == 404193984u);
  CHECK(r256.attention_entries == 4767840u);
  CHECK(static_cast<double>(r256.flops_total()) / 1e9 ==
        doctest::Approx(258.546).epsilon(1e-3));

  // the 64px row advertises 280M scalars, the 256px row 410M; both counts
  // sit inside ten percent
  CHECK(static_cast<double>(r64.params) ==
        doctest::Approx(280e6).epsilon(0.10));
  CHECK(static_cast<double>(r256.params) ==
        doctest::Approx(410e6).epsilon(0.10));
}

TEST_CASE("token-scaling cost doubles with the token count") {
  ModelConfig cfg = small_cfg();
  cfg.input_shape = {8, 16, 3};  // 8 tokens
  ModelConfig wide = cfg;
  wide.input_shape = {8, 32, 3};  // 16 tokens
  REQUIRE(wide.tokens() == 2 * cfg.tokens());

  const CostReport a = count_flops(cfg);
  const CostReport b = count_flops(wide);
  const std::pair<const ComponentCost*, const ComponentCost*> parts[] = {
      {&a.tokenize, &b.tokenize}, {&a.latent_init, &b.latent_init},
      {&a.read, &b.read},         {&a.compute, &b.compute},
      {&a.write, &b.write},       {&a.readout, &b.readout}};
  for (const auto& [small, big] : parts) {
    CHECK(big->flops_token == 2 * small->flops_token);
    CHECK(big->flops_fixed == small->flops_fixed);
  }
  CHECK(b.flops_token_scaling() == 2 * a.flops_token_scaling());

  // positions aside, extra tokens add no scalars to the latent path
  CHECK(count_params(wide) - count_params(cfg) ==
        static_cast<uint64_t>(cfg.tokens()) *
            static_cast<uint64_t>(cfg.interface_dim));

  // attention entries are affine in n: B*(2*n*mp + K*mp^2)
  const uint64_t mp = static_cast<uint64_t>(cfg.latents) + kCondTokens;
  CHECK(b.attention_entries - a.attention_entries ==
        static_cast<uint64_t>(cfg.blocks) * 2 * mp *
            static_cast<uint64_t>(wide.tokens() - cfg.tokens()));
  CHECK(a.attention_entries == count_attention_entries(cfg));
  CHECK(b.attention_entries == count_attention_entries(wide));
}

TEST_CASE("total cost grows subquadratically in the token count") {
  ModelConfig cfg = small_cfg();
  cfg.input_shape = {16, 16, 3};  // 16 tokens
  ModelConfig big = cfg;
  big.input_shape = {32, 32, 3};  // 64 tokens: 4x
  REQUIRE(big.tokens() == 4 * cfg.tokens());

  const double r = static_cast<double>(count_flops(big).flops_total()) /
                   static_cast<double>(count_flops(cfg).flops_total());
  CHECK(r < 4.0);  // affine in n, so strictly below the linear factor
  CHECK(r > 1.0);

  const double re =
      static_cast<double>(count_attention_entries(big)) /
      static_cast<double>(count_attention_entries(cfg));
  CHECK(re < 4.0);
  CHECK(re > 1.0);
}

TEST_CASE("every architectural dimension raises the total cost") {
  const ModelConfig base = small_cfg();
  const uint64_t t0 = count_flops(base).flops_total();

  ModelConfig v = base;
  v.blocks += 1;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.layers_per_block += 1;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.latents += 1;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.latent_dim += base.heads;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.interface_dim += base.heads;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.ffn_expansion += 1;
  CHECK(count_flops(v).flops_total() > t0);
  v = base;
  v.heads = 4;
  CHECK(count_flops(v).flops_total() > t0);

  // class rows cost scalars but no forward arithmetic
  v = base;
  v.num_classes = 50;
  CHECK(count_flops(v).flops_total() == t0);
  CHECK(count_params(v) > count_params(base));
}

TEST_CASE("fixed cost pieces match hand arithmetic") {
  ModelConfig cfg = small_cfg();
  cfg.self_cond = false;
  const CostReport r = count_flops(cfg);
  const uint64_t n = static_cast<uint64_t>(cfg.tokens());
  const uint64_t pv = static_cast<uint64_t>(cfg.patch_volume());
  const uint64_t d = static_cast<uint64_t>(cfg.interface_dim);
  const uint64_t dp = static_cast<uint64_t>(cfg.latent_dim);

  // without the warm-start gate only the time projection seeds latents
  CHECK(r.latent_init.flops_token == 0u);
  CHECK(r.latent_init.flops_fixed == 2 * 128 * dp + dp);

  // patch projection + bias, norm, position add; all per token
  CHECK(r.tokenize.flops_fixed == 0u);
  CHECK(r.tokenize.flops_token ==
        2 * n * pv * d + n * d + 5 * n * d + n * d);

  // final norm + projection back to patch volume
  CHECK(r.readout.flops_fixed == 0u);
  CHECK(r.readout.flops_token == 5 * n * d + 2 * n * d * pv + n * pv);

  // compute never touches interface tokens
  CHECK(r.compute.flops_token == 0u);
  CHECK(r.compute.flops_fixed > 0u);
}

TEST_CASE("the text and csv reports carry the same numbers") {
  const CostReport r = count_flops(small_cfg());
  const std::string text = r.to_text();
  CHECK(text.find("params            " + std::to_string(r.params)) !=
        std::string::npos);
  CHECK(text.find("attention entries " +
                  std::to_string(r.attention_entries)) != std::string::npos);
  CHECK(text.find("multiply-accumulate") != std::string::npos);

  const std::string csv = r.to_csv();
  std::vector<std::string> lines;
  size_t start = 0;
  while (start < csv.size()) {
    const size_t nl = csv.find('\n', start);
    lines.push_back(csv.substr(start, nl - start));
    start = nl + 1;
  }
  REQUIRE(lines.size() == 10);
  CHECK(lines[0] == "component,flops_token_scaling,flops_fixed,flops_total");
  CHECK(lines[1].rfind("tokenize,", 0) == 0);
  CHECK(lines[7] == "all," + std::to_string(r.flops_token_scaling()) + "," +
                        std::to_string(r.flops_total() -
                                       r.flops_token_scaling()) +
                        "," + std::to_string(r.flops_total()));
  CHECK(lines[8] == "params,,," + std::to_string(r.params));
  CHECK(lines[9] ==
        "attention_entries,,," + std::to_string(r.attention_entries));
}

TEST_CASE("probe traces average heads into unit rows") {
  const ModelConfig cfg = small_cfg();
  RinModel model(cfg, 5);
  const Tensor x = leaf({8, 8, 3}, 900, 0.5);

  NoGradGuard ng;
  AttentionProbe probe;
  model.forward(x, 0.4, std::nullopt, Tensor{}, &probe);
  const AttentionTrace tr = trace_from_probe(probe, cfg);

  CHECK(tr.blocks == cfg.blocks);
  CHECK(tr.latents == cfg.latents);
  CHECK(tr.tokens == cfg.tokens());
  REQUIRE(tr.values.size() ==
          static_cast<size_t>(cfg.blocks) * cfg.latents * cfg.tokens());

  for (int b = 0; b < tr.blocks; ++b)
    for (int64_t q = 0; q < tr.latents; ++q) {
      double sum = 0;
      for (int64_t k = 0; k < tr.tokens; ++k) {
        const double p = tr.value(b, q, k);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        sum += p;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

  // the trace is the plain mean over heads of the raw softmax maps
  for (const auto& read : probe.reads) {
    const int64_t heads = read.attn.dim(0);
    const int64_t rows = read.attn.dim(1);
    for (int64_t q = 0; q < tr.latents; ++q)
      for (int64_t k = 0; k < tr.tokens; ++k) {
        double want = 0;
        for (int64_t h = 0; h < heads; ++h)
          want += read.attn.at((h * rows + q) * tr.tokens + k) /
                  static_cast<double>(heads);
        CHECK(std::abs(tr.value(read.block, q, k) - want) <= 1e-15);
      }
  }

  // a convenience wrapper does the forward itself
  const AttentionTrace direct = export_read_attention(model, x, 0.4,
                                                      std::nullopt);
  REQUIRE(direct.values.size() == tr.values.size());
  for (size_t i = 0; i < tr.values.size(); ++i)
    CHECK(direct.values[i] == tr.values[i]);
}

TEST_CASE("a zeroed query projection reads every token equally") {
  const ModelConfig cfg = small_cfg();
  RinModel model(cfg, 6);
  zero_param(model, "block0.read.attn.wq");
  zero_param(model, "block0.read.attn.bq");

  const AttentionTrace tr = export_read_attention(
      model, leaf({8, 8, 3}, 901, 0.5), 0.6, std::nullopt);
  const double uniform = 1.0 / static_cast<double>(tr.tokens);
  for (int64_t q = 0; q < tr.latents; ++q)
    for (int64_t k = 0; k < tr.tokens; ++k)
      CHECK(std::abs(tr.value(0, q, k) - uniform) <= 1e-12);
  CHECK(attention_row_entropy(tr, 0, 0) ==
        doctest::Approx(std::log(static_cast<double>(tr.tokens)))
            .epsilon(1e-9));

  // untouched blocks stay data dependent but never beat the uniform bound
  for (int64_t q = 0; q < tr.latents; ++q)
    CHECK(attention_row_entropy(tr, 1, q) <=
          std::log(static_cast<double>(tr.tokens)) + 1e-12);
}

TEST_CASE("trace extraction rejects mismatched probes") {
  const ModelConfig cfg = small_cfg();
  AttentionProbe empty;
  CHECK_THROWS_WITH_AS(trace_from_probe(empty, cfg),
                       doctest::Contains("read maps"), ContractError);

  AttentionProbe bad;
  bad.reads.push_back({0, leaf({2, 9, 4}, 902)});
  bad.reads.push_back({1, leaf({2, 9, 4}, 903)});
  CHECK_THROWS_WITH_AS(trace_from_probe(bad, cfg),
                       doctest::Contains("shape"), ContractError);
}

TEST_CASE("row entropy measures concentration") {
  const AttentionTrace uniform = make_trace(8, std::vector<double>(8, 0.125));
  CHECK(attention_row_entropy(uniform, 0, 0) ==
        doctest::Approx(std::log(8.0)).epsilon(1e-12));

  std::vector<double> delta(8, 0.0);
  delta[3] = 1.0;
  CHECK(attention_row_entropy(make_trace(8, delta), 0, 0) == 0.0);

  std::vector<double> pair(8, 0.0);
  pair[1] = 0.5;
  pair[6] = 0.5;
  CHECK(attention_row_entropy(make_trace(8, pair), 0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("the expected signal fraction stays frozen") {
  ScheduleSpec cosine{ScheduleKind::kCosine};
  CHECK(std::abs(expected_gamma(cosine) - 0.49992500000647344) <= 1e-13);
  ScheduleSpec sigmoid{ScheduleKind::kSigmoid};
  CHECK(std::abs(expected_gamma(sigmoid) - 0.50000000000033307) <= 1e-13);

  // independent trapezoid quadrature agrees with the Simpson rule
  for (const ScheduleSpec& sched : {cosine, sigmoid}) {
    const int pts = 100001;
    double acc = 0.5 * (gamma(sched, 0.0) + gamma(sched, 1.0));
    for (int i = 1; i < pts - 1; ++i)
      acc += gamma(sched, static_cast<double>(i) / (pts - 1));
    acc /= pts - 1;
    CHECK(std::abs(expected_gamma(sched) - acc) <= 1e-8);
  }

  CHECK(expected_gamma(cosine, 5001) ==
        doctest::Approx(expected_gamma(cosine, 1001)).epsilon(1e-10));
  CHECK_THROWS_AS(expected_gamma(cosine, 2), ContractError);
  CHECK_THROWS_AS(expected_gamma(cosine, 1000), ContractError);
}

TEST_CASE("the ideal predictor closes the oracle gap") {
  ScheduleSpec sched{ScheduleKind::kCosine};
  const OracleReport r = eval_oracle_gap(optimal_gaussian_predictor(sched),
                                         {16}, sched, 4000, 31, Dtype::f64);
  CHECK(r.analytic == expected_gamma(sched));
  CHECK(r.std_error > 0.0);
  CHECK(r.std_error < 0.05);
  CHECK(std::abs(r.gap()) <= 3.0 * r.std_error + 1e-6);
}

TEST_CASE("a silent predictor measures pure noise energy") {
  ScheduleSpec sched{ScheduleKind::kSigmoid};
  const Predictor zero = [](const Tensor& x_t, double) {
    return Tensor::zeros(x_t.shape(), x_t.dtype());
  };
  const OracleReport r =
      eval_oracle_gap(zero, {64}, sched, 2000, 7, Dtype::f64);
  CHECK(std::abs(r.measured - 1.0) <= 3.0 * r.std_error + 0.02);
}

TEST_CASE("the model predictor speaks for the network") {
  ModelConfig cfg = small_cfg();
  RinModel model(cfg, 9);
  zero_param(model, "readout.w");
  zero_param(model, "readout.b");

  ScheduleSpec sched{ScheduleKind::kCosine};
  const OracleReport via_model = eval_oracle_gap(
      model_predictor(model), {8, 8, 3}, sched, 200, 13, Dtype::f64);
  const Predictor zero = [](const Tensor& x_t, double) {
    return Tensor::zeros(x_t.shape(), x_t.dtype());
  };
  const OracleReport via_zero =
      eval_oracle_gap(zero, {8, 8, 3}, sched, 200, 13, Dtype::f64);
  CHECK(via_model.measured == via_zero.measured);
  CHECK(via_model.std_error == via_zero.std_error);
}

TEST_CASE("the oracle evaluation validates its inputs") {
  ScheduleSpec sched{ScheduleKind::kCosine};
  const Predictor wrong = [](const Tensor&, double) {
    return Tensor::zeros({2, 2}, Dtype::f64);
  };
  CHECK_THROWS_AS(eval_oracle_gap(wrong, {16}, sched, 8, 1, Dtype::f64),
                  ShapeError);
  const Predictor zero = [](const Tensor& x_t, double) {
    return Tensor::zeros(x_t.shape(), x_t.dtype());
  };
  CHECK_THROWS_AS(eval_oracle_gap(zero, {16}, sched, 1, 1, Dtype::f64),
                  ContractError);
}
