#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "itpn/layers.hpp"

namespace itpn {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// AdamW with decoupled weight decay and bias-corrected moments. Matrices
// decay; vectors (biases, norm affine terms, mask tokens) do not.
class AdamW {
 public:
  struct Slot {
    NamedParam param;
    std::vector<Scalar> exp_avg;
    std::vector<Scalar> exp_avg_sq;
    double lr_scale = 1.0;
    bool decay = true;
  };

  AdamW(const ParamList& params, AdamWHyper hyper, const std::function<double(const NamedParam&)>& lr_scale = {});

  // One update at learning rate `lr` (times each slot's scale) from the
  // gradients currently stored on the parameters.
  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamWHyper& hyper() const { return hyper_; }
  const std::vector<Slot>& slots() const { return slots_; }

  // Moment buffers as named tensors ("<param>.exp_avg", "<param>.exp_avg_sq")
  // plus a scalar "step", for checkpointing.
  ParamList state_tensors() const;
  void load_state(const ParamList& tensors);

 private:
  AdamWHyper hyper_;
  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
};

struct Schedule {
  double base_lr = 1.5e-4;
  double min_lr = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
};

// Linear warmup from 0, then cosine decay to min_lr at total_steps; clamps
// past the end.
double lr_at(std::size_t step, const Schedule& schedule);

// Multiplier for a parameter `depth_from_top` layers below the head.
double layer_decay_multiplier(std::size_t depth_from_top, double decay);

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

}  // namespace itpn
