#include "itpn/optim.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

#include "itpn/error.hpp"

namespace itpn {

AdamW::AdamW(const ParamList& params, AdamWHyper hyper, const std::function<double(const NamedParam&)>& lr_scale)
    : hyper_(hyper) {
  for (const auto& p : params) {
    Slot s;
    s.param = p;
    s.exp_avg.assign(p.tensor.numel(), 0.0);
    s.exp_avg_sq.assign(p.tensor.numel(), 0.0);
    s.lr_scale = lr_scale ? lr_scale(p) : 1.0;
    s.decay = p.tensor.rank() >= 2;
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(double lr) {
  for (const auto& s : slots_) {
    if (s.decay && hyper_.weight_decay != 0.0 && s.param.tensor.requires_grad() && !s.param.tensor.has_grad()) {
      throw ContractError("AdamW: decaying parameter " + s.param.name + " has no gradient this step");
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(hyper_.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper_.beta2, t);
  for (auto& s : slots_) {
    Tensor& p = s.param.tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    const double eta = lr * s.lr_scale;
    auto w = p.data();
    const auto g = p.grad();
    if (s.decay && hyper_.weight_decay != 0.0) {
      const double shrink = 1.0 - eta * hyper_.weight_decay;
      for (auto& x : w) x *= shrink;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.exp_avg[i] = hyper_.beta1 * s.exp_avg[i] + (1.0 - hyper_.beta1) * g[i];
      s.exp_avg_sq[i] = hyper_.beta2 * s.exp_avg_sq[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double m_hat = s.exp_avg[i] / bc1;
      const double v_hat = s.exp_avg_sq[i] / bc2;
      w[i] -= eta * m_hat / (std::sqrt(v_hat) + hyper_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.tensor.zero_grad();
}

ParamList AdamW::state_tensors() const {
  ParamList out;
  for (const auto& s : slots_) {
    out.push_back({s.param.name + ".exp_avg", Tensor(s.param.tensor.shape(), s.exp_avg), 0});
    out.push_back({s.param.name + ".exp_avg_sq", Tensor(s.param.tensor.shape(), s.exp_avg_sq), 0});
  }
  out.push_back({"step", Tensor::scalar(static_cast<Scalar>(step_)), 0});
  return out;
}

void AdamW::load_state(const ParamList& tensors) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  auto need = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("optimizer state is missing " + name);
    if (it->second->shape() != shape) {
      throw ContractError("optimizer state " + name + " has shape " + shape_str(it->second->shape()) + ", expected " +
                          shape_str(shape));
    }
    return *it->second;
  };
  // validate everything before touching the live buffers
  for (const auto& s : slots_) {
    need(s.param.name + ".exp_avg", s.param.tensor.shape());
    need(s.param.name + ".exp_avg_sq", s.param.tensor.shape());
  }
  const Tensor& st = need("step", Shape{});
  for (auto& s : slots_) {
    auto m = need(s.param.name + ".exp_avg", s.param.tensor.shape()).data();
    auto v = need(s.param.name + ".exp_avg_sq", s.param.tensor.shape()).data();
    s.exp_avg.assign(m.begin(), m.end());
    s.exp_avg_sq.assign(v.begin(), v.end());
  }
  step_ = static_cast<std::uint64_t>(st.item());
}

double lr_at(std::size_t step, const Schedule& schedule) {
  if (schedule.warmup_steps > 0 && step < schedule.warmup_steps) {
    return schedule.base_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  }
  if (step >= schedule.total_steps) return schedule.total_steps > schedule.warmup_steps ? schedule.min_lr : schedule.base_lr;
  const double span = static_cast<double>(schedule.total_steps - schedule.warmup_steps);
  const double progress = static_cast<double>(step - schedule.warmup_steps) / span;
  return schedule.min_lr + (schedule.base_lr - schedule.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double layer_decay_multiplier(std::size_t depth_from_top, double decay) {
  return std::pow(decay, static_cast<double>(depth_from_top));
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (auto g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      auto& g = p.tensor.impl()->grad;
      for (auto& x : g) x *= f;
    }
  }
  return norm;
}

}  // namespace itpn
