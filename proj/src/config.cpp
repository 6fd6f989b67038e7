#include "itpn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "itpn/error.hpp"

namespace itpn {

std::size_t ModelConfig::dim(std::size_t s) const {
  if (s == 0 || s > num_stages()) throw ConfigError("stage " + std::to_string(s) + " outside 1..S");
  return embed_dim << (s - 1);
}

std::size_t ModelConfig::stage_factor(std::size_t s) const {
  if (s == 0 || s > num_stages()) throw ConfigError("stage " + std::to_string(s) + " outside 1..S");
  return std::size_t{1} << (num_stages() - s);
}

std::size_t ModelConfig::stage_side(std::size_t s) const { return (image_size / patch_size) >> (s - 1); }

std::vector<std::size_t> ModelConfig::stage_factors() const {
  std::vector<std::size_t> f;
  for (std::size_t s = 1; s <= num_stages(); ++s) f.push_back(stage_factor(s));
  return f;
}

std::size_t ModelConfig::unit_pixels() const { return patch_size * stage_factor(1); }

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (auto b : blocks_per_stage) n += b;
  return n;
}

void ModelConfig::validate() const {
  if (blocks_per_stage.empty()) throw ConfigError("at least one stage is required");
  if (patch_size == 0 || image_size == 0 || channels == 0) throw ConfigError("image geometry must be positive");
  const std::size_t unit = unit_pixels();
  if (image_size % unit != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by the mask unit of " +
                      std::to_string(unit) + " pixels (patch_size * 2^(S-1))");
  }
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (dim(num_stages()) % num_heads != 0) throw ConfigError("stage-S width not divisible by num_heads");
  if (decoder_dim % decoder_heads != 0) throw ConfigError("decoder_dim not divisible by decoder_heads");
  if (mixer_head_dim == 0) throw ConfigError("mixer_head_dim must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio outside [0, 1]");
  if (!(ema_coefficient >= 0.0 && ema_coefficient <= 1.0)) throw ConfigError("ema_coefficient outside [0, 1]");
  if (lambda_mfm < 0.0) throw ConfigError("lambda_mfm must be non-negative");
  if (batch_size == 0 || ft_batch_size == 0 || lp_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (layer_decay <= 0.0 || layer_decay > 1.0) throw ConfigError("layer_decay outside (0, 1]");
}

namespace {

struct Field {
  std::function<void(ModelConfig&, const std::string&)> set;
  std::function<std::string(const ModelConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected on/off, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <class T>
Field num(T ModelConfig::*member) {
  if constexpr (std::is_same_v<T, double>) {
    return {[member](ModelConfig& c, const std::string& v) { c.*member = to_double(v); },
            [member](const ModelConfig& c) { return fmt(c.*member); }};
  } else {
    return {[member](ModelConfig& c, const std::string& v) { c.*member = static_cast<T>(to_size(v)); },
            [member](const ModelConfig& c) { return std::to_string(c.*member); }};
  }
}

Field flag(bool ModelConfig::*member) {
  return {[member](ModelConfig& c, const std::string& v) { c.*member = to_bool(v); },
          [member](const ModelConfig& c) { return std::string(c.*member ? "on" : "off"); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"image_size", num(&ModelConfig::image_size)},
      {"channels", num(&ModelConfig::channels)},
      {"patch_size", num(&ModelConfig::patch_size)},
      {"layers",
       {[](ModelConfig& c, const std::string& v) {
          std::vector<std::size_t> blocks;
          std::stringstream ss(v);
          std::string part;
          while (std::getline(ss, part, '-')) blocks.push_back(to_size(trim(part)));
          if (blocks.empty()) throw ConfigError("layers needs at least one stage");
          c.blocks_per_stage = std::move(blocks);
        },
        [](const ModelConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.blocks_per_stage.size(); ++i)
            s += (i ? "-" : "") + std::to_string(c.blocks_per_stage[i]);
          return s;
        }}},
      {"hidden_size", num(&ModelConfig::embed_dim)},
      {"attention_heads", num(&ModelConfig::num_heads)},
      {"ffn_ratio", num(&ModelConfig::ffn_ratio)},
      {"decoder_depth", num(&ModelConfig::decoder_depth)},
      {"decoder_dim", num(&ModelConfig::decoder_dim)},
      {"decoder_heads", num(&ModelConfig::decoder_heads)},
      {"mixer_head_dim", num(&ModelConfig::mixer_head_dim)},
      {"layer_norm_eps", num(&ModelConfig::layer_norm_eps)},
      {"mask_ratio", num(&ModelConfig::mask_ratio)},
      {"lambda_mfm", num(&ModelConfig::lambda_mfm)},
      {"mfm", flag(&ModelConfig::mfm)},
      {"teacher",
       {[](ModelConfig& c, const std::string& v) {
          if (v == "ema") c.teacher = TeacherKind::ema;
          else if (v == "frozen") c.teacher = TeacherKind::frozen;
          else throw ConfigError("teacher must be ema or frozen, got '" + v + "'");
        },
        [](const ModelConfig& c) { return std::string(c.teacher == TeacherKind::ema ? "ema" : "frozen"); }}},
      {"ema_coefficient", num(&ModelConfig::ema_coefficient)},
      {"mim_with_frozen_teacher", flag(&ModelConfig::mim_with_frozen_teacher)},
      {"base_learning_rate", num(&ModelConfig::base_learning_rate)},
      {"min_learning_rate", num(&ModelConfig::min_learning_rate)},
      {"weight_decay", num(&ModelConfig::weight_decay)},
      {"beta1", num(&ModelConfig::beta1)},
      {"beta2", num(&ModelConfig::beta2)},
      {"adam_eps", num(&ModelConfig::adam_eps)},
      {"batch_size", num(&ModelConfig::batch_size)},
      {"training_epochs", num(&ModelConfig::epochs)},
      {"warmup_epochs", num(&ModelConfig::warmup_epochs)},
      {"max_steps", num(&ModelConfig::max_steps)},
      {"gradient_clipping", num(&ModelConfig::gradient_clipping)},
      {"ft_learning_rate", num(&ModelConfig::ft_learning_rate)},
      {"ft_min_learning_rate", num(&ModelConfig::ft_min_learning_rate)},
      {"ft_weight_decay", num(&ModelConfig::ft_weight_decay)},
      {"ft_beta1", num(&ModelConfig::ft_beta1)},
      {"ft_beta2", num(&ModelConfig::ft_beta2)},
      {"layer_decay", num(&ModelConfig::layer_decay)},
      {"ft_batch_size", num(&ModelConfig::ft_batch_size)},
      {"ft_epochs", num(&ModelConfig::ft_epochs)},
      {"ft_warmup_epochs", num(&ModelConfig::ft_warmup_epochs)},
      {"lp_learning_rate", num(&ModelConfig::lp_learning_rate)},
      {"lp_weight_decay", num(&ModelConfig::lp_weight_decay)},
      {"lp_batch_size", num(&ModelConfig::lp_batch_size)},
      {"lp_epochs", num(&ModelConfig::lp_epochs)},
      {"num_classes", num(&ModelConfig::num_classes)},
      {"seed",
       {[](ModelConfig& c, const std::string& v) { c.seed = to_size(v); },
        [](const ModelConfig& c) { return std::to_string(c.seed); }}},
  };
  return table;
}

}  // namespace

void apply_config_value(ModelConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

ModelConfig parse_config(const std::string& text, ModelConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    try {
      if (eq == std::string::npos) throw ConfigError("expected key = value");
      const auto key = trim(line.substr(0, eq));
      const auto value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError("expected key = value");
      apply_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

ModelConfig load_config(const std::filesystem::path& path, ModelConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_config(const ModelConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace itpn
