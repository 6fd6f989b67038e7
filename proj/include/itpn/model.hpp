#pragma once

#include <cstdint>

#include "itpn/heads.hpp"

namespace itpn {

// Backbone f(.; theta), neck g(.; phi) and heads h(.; psi) of one network.
struct ItpnModel {
  ModelConfig cfg;
  Backbone backbone;
  Neck neck;
  PretrainHeads heads;
  Classifier classifier;

  // Each part draws from its own seeded stream, so re-initializing one part
  // never shifts the others.
  static ItpnModel init(const ModelConfig& cfg, std::uint64_t seed);

  // Classifier params carry layer id total_blocks + 1.
  ParamList classifier_parameters() const;
  ParamList head_parameters() const;  // pre-training heads + classifier
};

// Group names used by checkpoints and --load-groups.
inline constexpr const char* kGroupBackbone = "backbone";
inline constexpr const char* kGroupNeck = "neck";
inline constexpr const char* kGroupHeads = "heads";
inline constexpr const char* kGroupTeacher = "teacher";
inline constexpr const char* kGroupOptimizer = "optimizer";

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace itpn
