#include "rin/optim.hpp"

#include <cmath>
#include <numbers>
#include <span>

#include "rin/error.hpp"

namespace rin {

Lamb::Lamb(LambConfig cfg, const NamedParams& params)
    : cfg_(cfg), params_(params) {
  if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
    throw ConfigError("lamb: betas must lie in [0,1)");
  if (cfg_.eps <= 0) throw ConfigError("lamb: eps must be positive");
  if (cfg_.weight_decay < 0) throw ConfigError("lamb: negative weight decay");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    m_.push_back(Tensor::zeros(p.shape(), p.dtype()));
    v_.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
}

namespace {

template <class T>
void lamb_apply(std::span<T> w, std::span<const T> g, std::span<T> m,
                std::span<T> v, const LambConfig& cfg, double bc1, double bc2,
                double lr, int64_t step, const std::string& name) {
  const size_t n = w.size();
  std::vector<double> r(n);
  double w_norm_sq = 0, r_norm_sq = 0;
  for (size_t j = 0; j < n; ++j) {
    const double gj = g[j];
    if (!std::isfinite(gj))
      throw TrainError("lamb step " + std::to_string(step) +
                       ": non-finite gradient in " + name);
    const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
    const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
    m[j] = static_cast<T>(mj);
    v[j] = static_cast<T>(vj);
    const double wj = w[j];
    const double rj = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps) +
                      cfg.weight_decay * wj;
    r[j] = rj;
    w_norm_sq += wj * wj;
    r_norm_sq += rj * rj;
  }
  const double w_norm = std::sqrt(w_norm_sq);
  const double r_norm = std::sqrt(r_norm_sq);
  const double trust =
      (w_norm == 0.0 || r_norm == 0.0) ? 1.0 : w_norm / r_norm;
  for (size_t j = 0; j < n; ++j)
    w[j] = static_cast<T>(w[j] - lr * trust * r[j]);
}

}  // namespace

void Lamb::step(const Gradients& grads, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& [name, p] = params_[i];
    Tensor g = grads.at(p);
    if (p.dtype() == Dtype::f32)
      lamb_apply<float>(p.mutable_data<float>(), g.data<float>(),
                        m_[i].mutable_data<float>(),
                        v_[i].mutable_data<float>(), cfg_, bc1, bc2, lr, t_,
                        name);
    else
      lamb_apply<double>(p.mutable_data<double>(), g.data<double>(),
                         m_[i].mutable_data<double>(),
                         v_[i].mutable_data<double>(), cfg_, bc1, bc2, lr, t_,
                         name);
  }
}

void Lamb::restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t) {
  if (m.size() != params_.size() || v.size() != params_.size())
    throw ContractError("lamb restore: moment count mismatch");
  for (size_t i = 0; i < params_.size(); ++i)
    if (m[i].shape() != params_[i].second.shape() ||
        v[i].shape() != params_[i].second.shape())
      throw ShapeError("lamb restore: moment shape mismatch for " +
                       params_[i].first);
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

Ema::Ema(double beta, const NamedParams& params)
    : beta_(beta), params_(params) {
  if (beta < 0.0 || beta > 1.0) throw ConfigError("ema: beta outside [0,1]");
  shadow_.reserve(params_.size());
  for (const auto& [name, p] : params_)
    shadow_.emplace_back(name, p.clone());
}

void Ema::update() {
  for (size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i].second;
    Tensor& s = shadow_[i].second;
    const int64_t n = p.numel();
    if (p.dtype() == Dtype::f32) {
      auto sv = s.mutable_data<float>();
      auto pv = p.data<float>();
      for (int64_t j = 0; j < n; ++j)
        sv[j] = static_cast<float>(beta_ * sv[j] + (1.0 - beta_) * pv[j]);
    } else {
      auto sv = s.mutable_data<double>();
      auto pv = p.data<double>();
      for (int64_t j = 0; j < n; ++j)
        sv[j] = beta_ * sv[j] + (1.0 - beta_) * pv[j];
    }
  }
}

void Ema::restore(const NamedParams& shadow) {
  if (shadow.size() != shadow_.size())
    throw ContractError("ema restore: tensor count mismatch");
  for (size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].second.shape() != shadow_[i].second.shape())
      throw ShapeError("ema restore: shape mismatch for " + shadow[i].first);
    shadow_[i].second = shadow[i].second.clone();
  }
}

double lr_at(const LrSchedule& s, int64_t step) {
  if (s.base <= 0) throw ConfigError("lr: base must be positive");
  if (s.warmup < 1 || s.total <= s.warmup)
    throw ConfigError("lr: need total > warmup >= 1");
  if (step < 0) throw ContractError("lr_at: negative step");
  if (step < s.warmup)
    return s.base * static_cast<double>(step + 1) /
           static_cast<double>(s.warmup);
  if (step >= s.total) return 0.0;
  const double progress = static_cast<double>(step - s.warmup) /
                          static_cast<double>(s.total - s.warmup);
  return s.base * 0.5 * (1.0 + std::cos(progress * std::numbers::pi));
}

}  // namespace rin
