#include "itpn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "itpn/error.hpp"

namespace itpn {

namespace {

bool mfm_active(const ModelConfig& cfg) { return cfg.mfm && cfg.lambda_mfm != 0.0; }

bool mim_active(const ModelConfig& cfg) { return cfg.teacher == TeacherKind::ema || cfg.mim_with_frozen_teacher; }

ParamList all_parameters(const ItpnModel& m) {
  ParamList out = m.backbone.parameters();
  for (auto& p : m.neck.parameters()) out.push_back(p);
  for (auto& p : m.head_parameters()) out.push_back(p);
  return out;
}

void zero_all(const ParamList& params) {
  for (const auto& p : params) p.tensor.impl()->grad.clear();
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

MaskSpecPtr dense_spec(const ModelConfig& cfg) {
  const auto factors = cfg.stage_factors();
  return std::make_shared<const MaskSpec>(MaskSpec::dense({cfg.base_side(), cfg.base_side()}, factors));
}

Tensor pooled_feature(const Backbone& backbone, const Tensor& image, const MaskSpecPtr& dense) {
  StageFeatures f = backbone.forward(image, dense);
  return mean_pool(f[f.num_stages()]);
}

std::size_t argmax_row(std::span<const Scalar> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

ParamList pretrain_parameters(const ItpnModel& model) {
  const auto& cfg = model.cfg;
  ParamList out = model.backbone.parameters();
  for (auto& p : model.neck.parameters()) out.push_back(p);
  if (mim_active(cfg))
    for (auto& p : model.heads.pixel_parameters()) out.push_back(p);
  if (mfm_active(cfg)) {
    const auto extra =
        cfg.teacher == TeacherKind::ema ? model.heads.mfm_parameters() : model.heads.unified_parameters();
    for (auto& p : extra) out.push_back(p);
  }
  return out;
}

LossBreakdown pretrain_loss(const ItpnModel& model, const TeacherState& teacher, const Tensor& image,
                            const MaskSpecPtr& spec) {
  const auto& cfg = model.cfg;
  const std::size_t S = cfg.num_stages();
  StageFeatures u = model.backbone.forward(image, spec);
  PyramidFeatures v = model.neck.forward(u);

  Tensor pred_pixels, pixel_targets;
  if (mim_active(cfg)) {
    Tensor decoded = mim_decode(fuse_for_decoder(v, *spec, model.heads.fuse), model.heads.decoder);
    pred_pixels = masked_pixel_predictions(decoded, *spec);
    pixel_targets = pixel_target_normalize(image, *spec, cfg.unit_pixels());
  } else {
    const std::size_t width = cfg.unit_pixels() * cfg.unit_pixels() * cfg.channels;
    pred_pixels = Tensor::zeros({0, width});
    pixel_targets = Tensor::zeros({0, width});
  }

  std::vector<Tensor> preds, targets;
  if (mfm_active(cfg)) {
    if (teacher.kind != cfg.teacher) throw ContractError("teacher kind does not match the configuration");
    if (cfg.teacher == TeacherKind::ema) {
      targets = ema_targets(image, *spec, teacher);
      for (std::size_t s = 1; s <= S; ++s) preds.push_back(mfm_predict(v[s], *spec, s, model.heads.mfm[s - 1]));
    } else {
      Tensor dense_target = frozen_teacher_target(image, teacher);
      targets.push_back(gather_rows(dense_target, spec->stage(S).masked));
      preds.push_back(unified_predict(v, *spec, model.heads.unified));
    }
  }
  return total_loss(pred_pixels, pixel_targets, preds, targets, cfg.lambda_mfm);
}

namespace {

AdamWHyper pretrain_hyper(const ModelConfig& cfg) {
  return {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
}

Schedule pretrain_schedule(const ModelConfig& cfg, std::size_t total_steps) {
  Schedule s;
  s.base_lr = cfg.base_learning_rate;
  s.min_lr = cfg.min_learning_rate;
  s.total_steps = std::max<std::size_t>(total_steps, 1);
  const double frac = cfg.epochs > 0 ? cfg.warmup_epochs / static_cast<double>(cfg.epochs) : 0.0;
  s.warmup_steps = static_cast<std::size_t>(std::llround(frac * static_cast<double>(s.total_steps)));
  return s;
}

TeacherState default_teacher(const ItpnModel& model) {
  if (model.cfg.teacher == TeacherKind::ema) return ema_init(model.backbone, model.cfg.ema_coefficient);
  return synthetic_frozen_teacher(model.cfg, mix_seed(model.cfg.seed, 0x7EAC));
}

}  // namespace

Pretrainer::Pretrainer(ItpnModel& m, std::size_t total_steps)
    : Pretrainer(m, default_teacher(m), total_steps) {}

Pretrainer::Pretrainer(ItpnModel& m, TeacherState t, std::size_t total_steps)
    : model(m),
      teacher(std::move(t)),
      optim(pretrain_parameters(m), pretrain_hyper(m.cfg)),
      schedule(pretrain_schedule(m.cfg, total_steps)) {}

MetricsRecord Pretrainer::train_step(std::span<const Tensor> batch) {
  if (batch.empty()) throw ContractError("pretrain step on an empty batch");
  const auto& cfg = model.cfg;
  const auto factors = cfg.stage_factors();
  const GridExtents base{cfg.base_side(), cfg.base_side()};
  const double lr = lr_at(step, schedule);
  const auto params = all_parameters(model);
  zero_all(params);

  Tensor acc;
  double mim = 0.0, mfm = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::uint64_t mask_seed = mix_seed(mix_seed(cfg.seed, step), b);
    auto spec = std::make_shared<const MaskSpec>(MaskSpec::sample(base, cfg.mask_ratio, mask_seed, factors));
    LossBreakdown l = pretrain_loss(model, teacher, batch[b], spec);
    mim += l.mim.item();
    mfm += l.mfm_sum.item();
    acc = acc.defined() ? add(acc, l.total) : l.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Tensor loss = scale(acc, inv);
  const double total = loss.item();
  if (!std::isfinite(total)) {
    current_tape().clear();
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << ": loss_mim=" << mim * inv << " loss_mfm=" << mfm * inv
        << " loss_total=" << total << " lr=" << lr;
    throw Error(msg.str());
  }
  if (current_tape().empty()) {
    // nothing differentiable contributed (e.g. every term switched off)
    optim.step(0.0);
  } else {
    backward(loss);
    double clip = cfg.gradient_clipping;
    if (clip == 0.0 && cfg.teacher == TeacherKind::frozen) clip = 3.0;
    if (clip > 0.0) clip_grad_norm(pretrain_parameters(model), clip);
    optim.step(lr);
  }
  if (teacher.kind == TeacherKind::ema) ema_update(teacher, model.backbone);
  MetricsRecord r{step, lr, mim * inv, mfm * inv, total};
  ++step;
  return r;
}

MetricsRecord pretrain_step(std::span<const Tensor> batch, Pretrainer& trainer) { return trainer.train_step(batch); }

std::size_t pretrain_total_steps(const ModelConfig& cfg, std::size_t n) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  return cfg.epochs * ceil_div(std::max<std::size_t>(n, 1), cfg.batch_size);
}

std::vector<MetricsRecord> run_pretraining(Pretrainer& trainer, const Dataset& data,
                                           const std::function<void(const MetricsRecord&)>& on_step) {
  const auto& cfg = trainer.model.cfg;
  if (data.size() == 0) throw ConfigError("pre-training needs at least one image");
  if (data.height != cfg.image_size || data.width != cfg.image_size || data.channels != cfg.channels) {
    throw ConfigError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) + "x" +
                      std::to_string(data.channels) + ", config expects " + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels));
  }
  const std::size_t total = trainer.schedule.total_steps;
  Rng rng(mix_seed(cfg.seed, 0xDA7A));
  std::bernoulli_distribution flip(0.5);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<MetricsRecord> records;
  while (trainer.step < total) {
    std::vector<Tensor> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(data.image(order[cursor++], flip(rng)));
    }
    records.push_back(trainer.train_step(batch));
    if (on_step) on_step(records.back());
  }
  return records;
}

Tensor dense_tokens(const Backbone& backbone, const Tensor& image) {
  StageFeatures f = backbone.forward(image, dense_spec(backbone.config()));
  return f[f.num_stages()];
}

AdamW make_finetune_optimizer(const ItpnModel& model) {
  const auto& cfg = model.cfg;
  ParamList params = model.backbone.parameters();
  for (auto& p : model.classifier_parameters()) params.push_back(p);
  const std::size_t top = cfg.total_blocks() + 1;
  const double decay = cfg.layer_decay;
  return AdamW(params, {cfg.ft_beta1, cfg.ft_beta2, cfg.adam_eps, cfg.ft_weight_decay},
               [top, decay](const NamedParam& p) { return layer_decay_multiplier(top - std::min(p.layer, top), decay); });
}

namespace {

Schedule finetune_schedule(const ModelConfig& cfg, std::size_t n) {
  const std::size_t spe = ceil_div(std::max<std::size_t>(n, 1), cfg.ft_batch_size);
  Schedule s;
  s.base_lr = cfg.ft_learning_rate;
  s.min_lr = cfg.ft_min_learning_rate;
  s.total_steps = std::max<std::size_t>(cfg.ft_epochs * spe, 1);
  s.warmup_steps = static_cast<std::size_t>(std::llround(cfg.ft_warmup_epochs * static_cast<double>(spe)));
  return s;
}

}  // namespace

FineTuner::FineTuner(ItpnModel& m, std::size_t train_size)
    : model(m), optim(make_finetune_optimizer(m)), schedule(finetune_schedule(m.cfg, train_size)) {}

EpochMetrics finetune_epoch(const Dataset& data, FineTuner& tuner) {
  auto& model = tuner.model;
  const auto& cfg = model.cfg;
  if (!data.labels) throw ContractError("fine-tuning needs a labelled dataset");
  if (data.size() == 0) throw ConfigError("fine-tuning needs at least one image");
  const auto dense = dense_spec(cfg);
  Rng rng(mix_seed(cfg.seed, 0xF1E0 + tuner.epoch));
  std::bernoulli_distribution flip(0.5);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto params = all_parameters(model);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.ft_batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.ft_batch_size);
    zero_all(params);
    Tensor acc;
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t idx = order[i];
      StageFeatures f = model.backbone.forward(data.image(idx, flip(rng)), dense);
      Tensor logits = classify(f[f.num_stages()], model.classifier);
      const int label = data.label(idx);
      if (argmax_row(logits.data()) == static_cast<std::size_t>(label)) ++correct;
      Tensor l = cross_entropy(logits, std::span<const int>(&label, 1));
      acc = acc.defined() ? add(acc, l) : l;
    }
    Tensor loss = scale(acc, 1.0 / static_cast<double>(end - begin));
    if (!std::isfinite(loss.item())) {
      current_tape().clear();
      throw Error("non-finite fine-tuning loss at step " + std::to_string(tuner.step));
    }
    loss_sum += loss.item() * static_cast<double>(end - begin);
    backward(loss);
    tuner.optim.step(lr_at(tuner.step, tuner.schedule));
    ++tuner.step;
  }
  ++tuner.epoch;
  const double n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

double evaluate(const Dataset& data, const ItpnModel& model) {
  if (!data.labels) throw ContractError("evaluation needs a labelled dataset");
  if (data.size() == 0) return 0.0;
  NoGradGuard no_grad;
  const auto dense = dense_spec(model.cfg);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    StageFeatures f = model.backbone.forward(data.image(i), dense);
    Tensor logits = classify(f[f.num_stages()], model.classifier);
    if (argmax_row(logits.data()) == static_cast<std::size_t>(data.label(i))) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

ProbeResult linear_probe(const Dataset& train, const Dataset& test, ItpnModel& model) {
  const auto& cfg = model.cfg;
  if (!train.labels || !test.labels) throw ContractError("linear probing needs labelled datasets");
  if (train.size() == 0) throw ConfigError("linear probing needs at least one training image");
  const std::size_t d = cfg.dim(cfg.num_stages());
  const std::size_t k = cfg.num_classes;

  ParamList frozen = model.backbone.parameters();
  for (auto& p : model.neck.parameters()) frozen.push_back(p);
  for (auto& p : model.heads.parameters()) frozen.push_back(p);
  const auto cls = model.classifier_parameters();
  std::vector<bool> saved;
  for (const auto& p : frozen) saved.push_back(p.tensor.requires_grad());
  for (auto p : frozen) p.tensor.set_requires_grad(false);
  for (auto p : cls) p.tensor.set_requires_grad(true);

  auto features = [&](const Dataset& data) {
    NoGradGuard no_grad;
    const auto dense = dense_spec(cfg);
    std::vector<Scalar> out;
    out.reserve(data.size() * d);
    for (std::size_t i = 0; i < data.size(); ++i) {
      Tensor pooled = pooled_feature(model.backbone, data.image(i), dense);
      out.insert(out.end(), pooled.data().begin(), pooled.data().end());
    }
    return out;
  };
  const std::vector<Scalar> train_x = features(train);
  const std::vector<Scalar> test_x = features(test);
  const std::size_t n = train.size();

  std::vector<Scalar> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += train_x[i * d + j];
  for (auto& m : mu) m /= static_cast<Scalar>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (train_x[i * d + j] - mu[j]) * (train_x[i * d + j] - mu[j]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<Scalar>(n) + 1e-6);

  std::vector<Scalar> z(train_x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z[i * d + j] = (train_x[i * d + j] - mu[j]) / sd[j];

  AdamW optim(cls, {0.9, 0.999, cfg.adam_eps, cfg.lp_weight_decay});
  Schedule sched;
  sched.base_lr = cfg.lp_learning_rate;
  sched.min_lr = 0.0;
  sched.total_steps = std::max<std::size_t>(cfg.lp_epochs * ceil_div(n, cfg.lp_batch_size), 1);
  sched.warmup_steps = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.lp_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x9B0BE + epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < n; begin += cfg.lp_batch_size) {
      const std::size_t end = std::min(n, begin + cfg.lp_batch_size);
      std::vector<Scalar> xb;
      std::vector<int> yb;
      for (std::size_t i = begin; i < end; ++i) {
        xb.insert(xb.end(), z.begin() + static_cast<std::ptrdiff_t>(order[i] * d),
                  z.begin() + static_cast<std::ptrdiff_t>((order[i] + 1) * d));
        yb.push_back(train.label(order[i]));
      }
      optim.zero_grad();
      Tensor logits = model.classifier.fc.forward(Tensor({end - begin, d}, std::move(xb)));
      backward(cross_entropy(logits, yb));
      for (const auto& p : frozen) {
        if (p.tensor.has_grad()) throw InvariantViolation("linear probe produced a gradient for " + p.name);
      }
      optim.step(lr_at(step++, sched));
    }
  }

  // Fold the standardization into the classifier.
  auto w = model.classifier.fc.weight.data();
  auto b = model.classifier.fc.bias.data();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t c = 0; c < k; ++c) {
      w[j * k + c] /= sd[j];
      b[c] -= mu[j] * w[j * k + c];
    }
  }
  for (std::size_t i = 0; i < frozen.size(); ++i) frozen[i].tensor.set_requires_grad(saved[i]);
  optim.zero_grad();

  auto accuracy = [&](const std::vector<Scalar>& x, const Dataset& data) {
    std::size_t correct = 0;
    std::vector<Scalar> logits(k);
    for (std::size_t i = 0; i < data.size(); ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        Scalar v = b[c];
        for (std::size_t j = 0; j < d; ++j) v += x[i * d + j] * w[j * k + c];
        logits[c] = v;
      }
      if (argmax_row(logits) == static_cast<std::size_t>(data.label(i))) ++correct;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
  };
  return {accuracy(train_x, train), accuracy(test_x, test)};
}

}  // namespace itpn
