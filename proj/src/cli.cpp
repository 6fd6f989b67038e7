#include "itpn/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>

#include "itpn/checkpoint.hpp"
#include "itpn/data.hpp"
#include "itpn/error.hpp"
#include "itpn/reconstruct.hpp"
#include "itpn/trainer.hpp"

namespace itpn {

namespace {

namespace fs = std::filesystem;

constexpr const char* kCheckpointName = "checkpoint.itpnck";
constexpr const char* kMetricsName = "metrics.csv";

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c, bool needs_data) {
  cmd->add_option("--config", c.config, "flat key = value config file");
  cmd->add_option("--seed", c.seed, "seed (overrides ITPN_SEED and the config)");
  auto* opt = cmd->add_option("--data", c.data, "dataset file");
  if (needs_data) opt->required();
}

// config file < ITPN_SEED < --seed
ModelConfig resolve_config(const Common& c) {
  ModelConfig cfg = c.config.empty() ? ModelConfig{} : load_config(c.config);
  if (const char* env = std::getenv("ITPN_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      cfg.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("ITPN_SEED is not an unsigned integer: ") + env);
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path checkpoint_path(const std::string& given) {
  fs::path p(given);
  if (fs::is_directory(p)) p /= kCheckpointName;
  return p;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"integrally pre-trained pyramid network toolkit"};
  app.require_subcommand(1);

  Common pre_c;
  std::string pre_out, mfm_flag = "on";
  std::optional<std::size_t> pre_steps;
  auto* pretrain = app.add_subcommand("pretrain", "masked pre-training; writes a checkpoint and metrics.csv");
  add_common(pretrain, pre_c, true);
  pretrain->add_option("--out", pre_out, "output directory")->required();
  pretrain->add_option("--mfm", mfm_flag, "feature reconstruction on|off")->check(CLI::IsMember({"on", "off"}));
  pretrain->add_option("--steps", pre_steps, "override the number of optimizer steps");

  Common ft_c;
  std::string ft_ckpt, ft_groups = "backbone,neck", ft_out, ft_test;
  std::optional<std::size_t> ft_epochs;
  auto* finetune = app.add_subcommand("finetune", "supervised fine-tuning from a checkpoint");
  add_common(finetune, ft_c, true);
  finetune->add_option("--checkpoint", ft_ckpt, "checkpoint file or directory");
  finetune->add_option("--load-groups", ft_groups, "backbone | backbone,neck | all");
  finetune->add_option("--test-data", ft_test, "held-out dataset evaluated after every epoch");
  finetune->add_option("--epochs", ft_epochs, "override ft_epochs");
  finetune->add_option("--out", ft_out, "output directory for the fine-tuned checkpoint");

  Common lp_c;
  std::string lp_ckpt, lp_groups = "backbone", lp_test, lp_out;
  auto* linprobe = app.add_subcommand("linprobe", "linear probe on frozen features");
  add_common(linprobe, lp_c, true);
  linprobe->add_option("--checkpoint", lp_ckpt, "checkpoint file or directory");
  linprobe->add_option("--load-groups", lp_groups, "backbone | backbone,neck | all");
  linprobe->add_option("--test-data", lp_test, "held-out dataset");
  linprobe->add_option("--out", lp_out, "output directory for the probed checkpoint");

  Common ev_c;
  std::string ev_ckpt;
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of backbone + classifier");
  add_common(eval, ev_c, true);
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file or directory")->required();

  Common rc_c;
  std::string rc_ckpt, rc_out;
  std::size_t rc_index = 0;
  std::optional<double> rc_ratio;
  auto* recon = app.add_subcommand("reconstruct", "original | masked | reconstructed panels as PPM");
  add_common(recon, rc_c, true);
  recon->add_option("--checkpoint", rc_ckpt, "checkpoint file or directory");
  recon->add_option("--index", rc_index, "image index");
  recon->add_option("--mask-ratio", rc_ratio, "override mask_ratio");
  recon->add_option("--out", rc_out, "output .ppm path")->required();

  std::string gd_out;
  std::size_t gd_n = 512, gd_classes = 4, gd_size = 64;
  std::optional<std::uint64_t> gd_seed;
  bool gd_no_labels = false;
  auto* gen = app.add_subcommand("gen-data", "write a seeded synthetic dataset");
  gen->add_option("--out", gd_out, "dataset path")->required();
  gen->add_option("--n", gd_n, "image count");
  gen->add_option("--classes", gd_classes, "class count");
  gen->add_option("--image-size", gd_size, "image side in pixels");
  gen->add_option("--seed", gd_seed, "seed (overrides ITPN_SEED)");
  gen->add_flag("--no-labels", gd_no_labels, "omit labels");

  std::vector<char*> argv;
  std::vector<std::string> storage(args);
  if (storage.empty()) storage.push_back("itpn");
  for (auto& a : storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) {
      Common c;
      c.seed = gd_seed;
      const ModelConfig cfg = resolve_config(c);
      Dataset d = generate_synthetic(gd_n, gd_classes, cfg.seed, gd_size, 3);
      if (gd_no_labels) d.labels.reset();
      save_dataset(d, gd_out);
      out << "wrote " << d.size() << " images to " << gd_out << '\n';
      return 0;
    }

    if (*pretrain) {
      ModelConfig cfg = resolve_config(pre_c);
      if (mfm_flag == "off") cfg.mfm = false;
      if (pre_steps) cfg.max_steps = *pre_steps;
      const Dataset data = load_dataset(pre_c.data);
      fs::create_directories(pre_out);
      ItpnModel model = ItpnModel::init(cfg, cfg.seed);
      Pretrainer trainer(model, pretrain_total_steps(cfg, data.size()));
      MetricsWriter metrics(fs::path(pre_out) / kMetricsName);
      const std::size_t total = trainer.schedule.total_steps;
      run_pretraining(trainer, data, [&](const MetricsRecord& r) {
        metrics.write(r);
        if (r.step % 10 == 0 || r.step + 1 == total) {
          out << "step " << r.step << " lr " << r.lr << " loss_mim " << r.loss_mim << " loss_mfm " << r.loss_mfm
              << " loss_total " << r.loss_total << '\n';
        }
      });
      save_checkpoint(capture(model, &trainer.teacher, &trainer.optim), fs::path(pre_out) / kCheckpointName);
      out << "wrote " << (fs::path(pre_out) / kCheckpointName).string() << '\n';
      return 0;
    }

    if (*finetune) {
      ModelConfig cfg = resolve_config(ft_c);
      if (ft_epochs) cfg.ft_epochs = *ft_epochs;
      const Dataset train = load_dataset(ft_c.data);
      std::optional<Dataset> test;
      if (!ft_test.empty()) test = load_dataset(ft_test);
      ItpnModel model = ItpnModel::init(cfg, cfg.seed);
      if (!ft_ckpt.empty()) {
        const auto groups = parse_load_groups(ft_groups);
        restore(load_checkpoint(checkpoint_path(ft_ckpt), groups), groups, model);
        out << "loaded " << ft_groups << " from " << checkpoint_path(ft_ckpt).string() << '\n';
      }
      FineTuner tuner(model, train.size());
      for (std::size_t e = 0; e < cfg.ft_epochs; ++e) {
        const EpochMetrics m = finetune_epoch(train, tuner);
        out << "epoch " << e << " loss " << m.loss << " train_top1 " << m.accuracy;
        if (test) out << " test_top1 " << evaluate(*test, model);
        out << '\n';
      }
      if (!ft_out.empty()) {
        fs::create_directories(ft_out);
        save_checkpoint(capture(model), fs::path(ft_out) / kCheckpointName);
      }
      return 0;
    }

    if (*linprobe) {
      const ModelConfig cfg = resolve_config(lp_c);
      const Dataset train = load_dataset(lp_c.data);
      const Dataset test = lp_test.empty() ? train : load_dataset(lp_test);
      ItpnModel model = ItpnModel::init(cfg, cfg.seed);
      if (!lp_ckpt.empty()) {
        const auto groups = parse_load_groups(lp_groups);
        restore(load_checkpoint(checkpoint_path(lp_ckpt), groups), groups, model);
      }
      const ProbeResult r = linear_probe(train, test, model);
      out << "train_top1 " << r.train_accuracy << " test_top1 " << r.test_accuracy << '\n';
      if (!lp_out.empty()) {
        fs::create_directories(lp_out);
        save_checkpoint(capture(model), fs::path(lp_out) / kCheckpointName);
      }
      return 0;
    }

    if (*eval) {
      const ModelConfig cfg = resolve_config(ev_c);
      const Dataset data = load_dataset(ev_c.data);
      ItpnModel model = ItpnModel::init(cfg, cfg.seed);
      const std::set<std::string> groups{kGroupBackbone, kGroupHeads};
      restore(load_checkpoint(checkpoint_path(ev_ckpt), groups), groups, model);
      out << "top1 " << evaluate(data, model) << '\n';
      return 0;
    }

    if (*recon) {
      ModelConfig cfg = resolve_config(rc_c);
      if (rc_ratio) cfg.mask_ratio = *rc_ratio;
      const Dataset data = load_dataset(rc_c.data);
      ItpnModel model = ItpnModel::init(cfg, cfg.seed);
      if (!rc_ckpt.empty()) {
        const std::set<std::string> groups{kGroupBackbone, kGroupNeck, kGroupHeads};
        restore(load_checkpoint(checkpoint_path(rc_ckpt), groups), groups, model);
      }
      const auto factors = cfg.stage_factors();
      auto spec = std::make_shared<const MaskSpec>(
          MaskSpec::sample({cfg.base_side(), cfg.base_side()}, cfg.mask_ratio, mix_seed(cfg.seed, rc_index), factors));
      const Reconstruction r = dump_reconstruction(data.image(rc_index), spec, model, rc_out);
      out << "masked_units " << spec->masked_units().size() << " masked_mse " << r.masked_mse << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace itpn
