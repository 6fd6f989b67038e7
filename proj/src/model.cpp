#include "itpn/model.hpp"

namespace itpn {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

ItpnModel ItpnModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ItpnModel m;
  m.cfg = cfg;
  Rng backbone_rng(mix_seed(seed, 1));
  Rng neck_rng(mix_seed(seed, 2));
  Rng heads_rng(mix_seed(seed, 3));
  Rng cls_rng(mix_seed(seed, 4));
  m.backbone = Backbone::init(cfg, backbone_rng);
  m.neck = Neck::init(cfg, neck_rng);
  m.heads = PretrainHeads::init(cfg, heads_rng);
  m.classifier = Classifier::init(cfg.dim(cfg.num_stages()), cfg.num_classes, cls_rng);
  return m;
}

ParamList ItpnModel::classifier_parameters() const {
  ParamList out;
  classifier.collect("cls", cfg.total_blocks() + 1, out);
  return out;
}

ParamList ItpnModel::head_parameters() const {
  ParamList out = heads.parameters();
  for (auto& p : classifier_parameters()) out.push_back(p);
  return out;
}

}  // namespace itpn
