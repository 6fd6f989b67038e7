#pragma once

// Feature-target producers behind a stop-gradient boundary: an exponential
// moving average of the online encoder, or a frozen external network.

#include <cstdint>
#include <vector>

#include "itpn/backbone.hpp"

namespace itpn {

struct TeacherState {
  TeacherKind kind = TeacherKind::ema;
  Backbone network;  // parameters never require gradients
  double coefficient = 0.996;
};

// Deep copy of the student with gradients disabled.
TeacherState ema_init(const Backbone& student, double coefficient);
// Wraps an already-trained network (e.g. a checkpoint backbone) as a frozen teacher.
TeacherState frozen_init(Backbone network);
// Seeded, randomly initialized tiny encoder standing in for an external model.
TeacherState synthetic_frozen_teacher(const ModelConfig& cfg, std::uint64_t seed);

// teacher <- m * teacher + (1 - m) * student, per parameter.
void ema_update(TeacherState& state, const Backbone& student);

// Last-layer output of each stage computed on the masked units only (the
// visible units are withheld from the teacher). result[s-1] is x^s with rows in
// spec.stage(s).masked order.
std::vector<Tensor> ema_targets(const Tensor& image, const MaskSpec& spec, const TeacherState& state);

// Last-layer tokens of the frozen network on the full image:
// [stage-S grid x teacher width].
Tensor frozen_teacher_target(const Tensor& image, const TeacherState& state);

}  // namespace itpn
