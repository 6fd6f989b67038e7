#pragma once

// Pre-training, fine-tuning and linear-probing loops.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "itpn/data.hpp"
#include "itpn/metrics.hpp"
#include "itpn/model.hpp"
#include "itpn/optim.hpp"
#include "itpn/teacher.hpp"

namespace itpn {

// Parameters trained by pre-training under cfg: backbone, neck, and the heads
// whose loss term is active. MFM heads are left out when lambda is 0 or MFM is
// off; the unified head replaces them with a frozen teacher.
ParamList pretrain_parameters(const ItpnModel& model);

// Loss of one image for a given mask, recorded on the current tape.
LossBreakdown pretrain_loss(const ItpnModel& model, const TeacherState& teacher, const Tensor& image,
                            const MaskSpecPtr& spec);

struct Pretrainer {
  ItpnModel& model;
  TeacherState teacher;
  AdamW optim;
  Schedule schedule;
  std::size_t step = 0;

  // EMA teacher copied from the student, or a synthetic frozen network when
  // cfg.teacher is frozen. Warmup covers warmup_epochs / epochs of the run.
  Pretrainer(ItpnModel& model, std::size_t total_steps);
  Pretrainer(ItpnModel& model, TeacherState teacher, std::size_t total_steps);

  // Per-image masks from (seed, step, slot); loss averaged over the batch;
  // one AdamW step; EMA update. Throws Error on a non-finite loss.
  MetricsRecord train_step(std::span<const Tensor> batch);
};

// Convenience form of one step for an explicit state.
MetricsRecord pretrain_step(std::span<const Tensor> batch, Pretrainer& trainer);

// Number of optimizer steps a pre-training run takes on `n` images.
std::size_t pretrain_total_steps(const ModelConfig& cfg, std::size_t n);

// Draws shuffled, randomly flipped batches and runs pretrain_total_steps
// steps; `on_step` sees every record.
std::vector<MetricsRecord> run_pretraining(Pretrainer& trainer, const Dataset& data,
                                           const std::function<void(const MetricsRecord&)>& on_step = {});

struct EpochMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Stage-S tokens of a dense (unmasked) forward pass.
Tensor dense_tokens(const Backbone& backbone, const Tensor& image);

// AdamW over backbone + classifier with lr multiplier
// layer_decay^(depth_from_top); the classifier sits at depth 0, the patch
// embedding at depth total_blocks + 1.
AdamW make_finetune_optimizer(const ItpnModel& model);

struct FineTuner {
  ItpnModel& model;
  AdamW optim;
  Schedule schedule;
  std::size_t step = 0;
  std::uint64_t epoch = 0;

  FineTuner(ItpnModel& model, std::size_t train_size);
};

EpochMetrics finetune_epoch(const Dataset& data, FineTuner& tuner);

// Top-1 accuracy of backbone + classifier on a labelled dataset.
double evaluate(const Dataset& data, const ItpnModel& model);

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Trains only the classifier on frozen, mean-pooled stage-S features. The
// features are standardized with training-set statistics during training and
// the transform is folded into the classifier afterwards, so `evaluate` on the
// model gives the same predictions. Any gradient reaching a non-classifier
// parameter is an InvariantViolation.
ProbeResult linear_probe(const Dataset& train, const Dataset& test, ItpnModel& model);

}  // namespace itpn
