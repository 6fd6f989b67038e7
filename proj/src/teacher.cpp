#include "itpn/teacher.hpp"

#include "itpn/error.hpp"

namespace itpn {

namespace {

void freeze(const Backbone& net) {
  for (auto& p : net.parameters()) p.tensor.set_requires_grad(false);
}

}  // namespace

TeacherState ema_init(const Backbone& student, double coefficient) {
  if (!(coefficient >= 0.0 && coefficient <= 1.0)) throw ConfigError("EMA coefficient outside [0, 1]");
  TeacherState state{TeacherKind::ema, student.clone(), coefficient};
  freeze(state.network);
  return state;
}

TeacherState frozen_init(Backbone network) {
  freeze(network);
  return {TeacherKind::frozen, std::move(network), 1.0};
}

TeacherState synthetic_frozen_teacher(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return frozen_init(Backbone::init(cfg, rng));
}

void ema_update(TeacherState& state, const Backbone& student) {
  if (state.kind != TeacherKind::ema) throw ContractError("ema_update on a frozen teacher");
  const auto dst = state.network.parameters();
  const auto src = student.parameters();
  if (dst.size() != src.size()) throw ContractError("teacher and student parameter counts differ");
  const double m = state.coefficient;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor.shape() != src[i].tensor.shape()) {
      throw ContractError("teacher parameter " + dst[i].name + " has shape " + shape_str(dst[i].tensor.shape()) +
                          " but student has " + shape_str(src[i].tensor.shape()));
    }
    auto t = dst[i].tensor.impl()->data.data();
    const auto s = src[i].tensor.data();
    for (std::size_t j = 0; j < s.size(); ++j) t[j] = m * t[j] + (1.0 - m) * s[j];
  }
}

std::vector<Tensor> ema_targets(const Tensor& image, const MaskSpec& spec, const TeacherState& state) {
  if (state.kind != TeacherKind::ema) throw ContractError("wrong teacher: ema_targets needs an EMA teacher");
  NoGradGuard no_grad;
  auto teacher_view = std::make_shared<const MaskSpec>(spec.complement());
  StageFeatures f = state.network.forward(image, teacher_view);
  std::vector<Tensor> out;
  for (std::size_t s = 1; s <= f.num_stages(); ++s) out.push_back(f[s].detach());
  return out;
}

Tensor frozen_teacher_target(const Tensor& image, const TeacherState& state) {
  if (state.kind != TeacherKind::frozen) throw ContractError("wrong teacher: frozen_teacher_target needs a frozen teacher");
  NoGradGuard no_grad;
  const auto& cfg = state.network.config();
  const GridExtents base{cfg.base_side(), cfg.base_side()};
  const auto factors = cfg.stage_factors();
  auto dense = std::make_shared<const MaskSpec>(MaskSpec::dense(base, factors));
  StageFeatures f = state.network.forward(image, dense);
  return f[f.num_stages()].detach();
}

}  // namespace itpn
