#include <gtest/gtest.h>

#include "itpn/config.hpp"
#include "itpn/error.hpp"

using namespace itpn;

TEST(Config, DefaultsCarryReferenceConstants) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.mask_ratio, 0.75);
  EXPECT_EQ(cfg.lambda_mfm, 0.3);
  EXPECT_EQ(cfg.ema_coefficient, 0.996);
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.95);
  EXPECT_EQ(cfg.warmup_epochs, 40.0);
  EXPECT_EQ(cfg.layer_decay, 0.55);
  EXPECT_EQ(cfg.base_learning_rate, 1.5e-4);
  EXPECT_EQ(cfg.weight_decay, 0.05);
  EXPECT_EQ(cfg.epochs, 400u);
}

TEST(Config, TinyPresetDefaults) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.image_size, 64u);
  EXPECT_EQ(cfg.patch_size, 4u);
  EXPECT_EQ(cfg.blocks_per_stage, (std::vector<std::size_t>{2, 2, 4}));
  EXPECT_EQ(cfg.dim(1), 32u);
  EXPECT_EQ(cfg.dim(2), 64u);
  EXPECT_EQ(cfg.dim(3), 128u);
  EXPECT_EQ(cfg.num_heads, 4u);
  EXPECT_EQ(cfg.total_blocks(), 8u);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, ShippedTinyFileKeepsReferenceConstants) {
  const ModelConfig cfg = load_config(ITPN_SOURCE_DIR "/configs/tiny.cfg");
  EXPECT_EQ(cfg.mask_ratio, 0.75);
  EXPECT_EQ(cfg.lambda_mfm, 0.3);
  EXPECT_EQ(cfg.ema_coefficient, 0.996);
  EXPECT_EQ(cfg.beta1, 0.9);
  EXPECT_EQ(cfg.beta2, 0.95);
  EXPECT_EQ(cfg.warmup_epochs, 40.0);
  EXPECT_EQ(cfg.layer_decay, 0.55);
  EXPECT_EQ(cfg.max_steps, 200u);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const ModelConfig cfg = parse_config("# header\n\n  mask_ratio = 0.5  # inline\nlayers = 1-1-2\nmfm = off\nteacher = frozen\n");
  EXPECT_EQ(cfg.mask_ratio, 0.5);
  EXPECT_EQ(cfg.blocks_per_stage, (std::vector<std::size_t>{1, 1, 2}));
  EXPECT_FALSE(cfg.mfm);
  EXPECT_EQ(cfg.teacher, TeacherKind::frozen);
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("mask_ratio = 0.5\nbogus = 1\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("\n\nmask_ratio = abc\n").find("line 3"), std::string::npos);
  EXPECT_NE(message("mask_ratio 0.5\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("mfm = maybe\n").find("on/off"), std::string::npos);
  EXPECT_NE(message("batch_size = -3\n").find("line 1"), std::string::npos);
}

TEST(Config, ValidationRejectsBadGeometry) {
  EXPECT_THROW(parse_config("image_size = 60\n"), ConfigError);
  EXPECT_THROW(parse_config("mask_ratio = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config("attention_heads = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("num_classes = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("layer_decay = 0\n"), ConfigError);
  EXPECT_THROW(ModelConfig{}.dim(4), ConfigError);
}

TEST(Config, FormatRoundTrips) {
  ModelConfig cfg = parse_config("mask_ratio = 0.6\nlayers = 1-3-2\nseed = 77\nteacher = frozen\nlambda_mfm = 0.123456789\n");
  const ModelConfig back = parse_config(format_config(cfg));
  EXPECT_EQ(format_config(back), format_config(cfg));
  EXPECT_EQ(back.lambda_mfm, 0.123456789);
  EXPECT_EQ(back.seed, 77u);
}
