#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace itpn {

enum class TeacherKind { ema, frozen };

// Architecture and optimization settings. Defaults carry the reference
// pre-training constants on the tiny desk-scale architecture.
struct ModelConfig {
  // architecture (tiny preset)
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t patch_size = 4;  // pixels per stage-1 token side
  std::vector<std::size_t> blocks_per_stage = {2, 2, 4};
  std::size_t embed_dim = 32;  // stage-1 width; doubles every stage
  std::size_t num_heads = 4;   // stage-S attention heads
  std::size_t ffn_ratio = 4;
  std::size_t decoder_depth = 2;
  std::size_t decoder_dim = 64;
  std::size_t decoder_heads = 4;
  std::size_t mixer_head_dim = 32;  // head width of the masked-position context mixers
  double layer_norm_eps = 1e-6;

  // masked pre-training
  double mask_ratio = 0.75;
  double lambda_mfm = 0.3;
  bool mfm = true;
  TeacherKind teacher = TeacherKind::ema;
  double ema_coefficient = 0.996;
  bool mim_with_frozen_teacher = true;

  // pre-training optimization
  double base_learning_rate = 1.5e-4;
  double min_learning_rate = 0.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 400;
  double warmup_epochs = 40;
  std::size_t max_steps = 0;  // 0: epochs * steps_per_epoch
  double gradient_clipping = 0.0;  // 0: off

  // fine-tuning
  double ft_learning_rate = 5e-4;
  double ft_min_learning_rate = 1e-6;
  double ft_weight_decay = 0.05;
  double ft_beta1 = 0.9;
  double ft_beta2 = 0.999;
  double layer_decay = 0.55;
  std::size_t ft_batch_size = 16;
  std::size_t ft_epochs = 100;
  double ft_warmup_epochs = 5;

  // linear probing
  double lp_learning_rate = 1e-2;
  double lp_weight_decay = 0.0;
  std::size_t lp_batch_size = 64;
  std::size_t lp_epochs = 90;

  std::size_t num_classes = 4;
  std::uint64_t seed = 0;

  std::size_t num_stages() const { return blocks_per_stage.size(); }
  // stage s in 1..S
  std::size_t dim(std::size_t s) const;
  std::size_t stage_side(std::size_t s) const;
  std::size_t stage_factor(std::size_t s) const;  // stage tokens per mask-unit side
  std::vector<std::size_t> stage_factors() const;
  std::size_t base_side() const { return stage_side(num_stages()); }
  std::size_t unit_pixels() const;  // pixel side of one mask unit
  std::size_t total_blocks() const;

  // Throws ConfigError on inconsistent geometry.
  void validate() const;
};

// Flat `key = value` text. '#' starts a comment. Unknown keys are rejected and
// errors carry the 1-based line number.
ModelConfig parse_config(const std::string& text, ModelConfig base = {});
ModelConfig load_config(const std::filesystem::path& path, ModelConfig base = {});
// Applies one key; throws ConfigError for unknown keys or bad values.
void apply_config_value(ModelConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const ModelConfig& cfg);

}  // namespace itpn
