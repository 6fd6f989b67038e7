// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "gradcheck.hpp"
#include "itpn/checkpoint.hpp"
#include "itpn/config.hpp"
#include "itpn/data.hpp"
#include "itpn/error.hpp"
#include "itpn/teacher.hpp"
#include "itpn/trainer.hpp"

using namespace itpn;
using itpn::testing::check_gradients;
using itpn::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

Tensor random_image(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(cfg.image_size * cfg.image_size * cfg.channels);
  for (auto& x : v) x = u(rng);
  return Tensor({cfg.image_size, cfg.image_size, cfg.channels}, std::move(v));
}

MaskSpecPtr sample(const ModelConfig& cfg, double ratio, std::uint64_t seed) {
  const auto f = cfg.stage_factors();
  return std::make_shared<const MaskSpec>(MaskSpec::sample({cfg.base_side(), cfg.base_side()}, ratio, seed, f));
}

Tensor probe_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, 1.0, false)));
}

void perturb(const ParamList& ps, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, stddev);
  for (const auto& p : ps)
    for (auto& x : p.tensor.impl()->data) x += nd(rng);
}

std::vector<std::vector<double>> snapshot(const ParamList& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

bool bit_equal(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0)
      return false;
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

std::vector<std::size_t> unit_rows(const StageMask& st, std::size_t base_w, std::size_t unit) {
  std::vector<std::size_t> rows;
  const std::size_t uy = unit / base_w, ux = unit % base_w;
  for (std::size_t r = 0; r < st.visible.size(); ++r) {
    const std::size_t g = st.visible[r], y = g / st.grid.width, x = g % st.grid.width;
    if (y / st.factor == uy && x / st.factor == ux) rows.push_back(r);
  }
  return rows;
}

void add_to_unit(Tensor& img, std::size_t unit, std::size_t unit_pixels, std::size_t base_w, double delta) {
  const std::size_t W = img.extent(1), C = img.extent(2);
  const std::size_t uy = unit / base_w, ux = unit % base_w;
  auto px = img.data();
  for (std::size_t y = 0; y < unit_pixels; ++y)
    for (std::size_t x = 0; x < unit_pixels; ++x)
      for (std::size_t c = 0; c < C; ++c) px[((uy * unit_pixels + y) * W + ux * unit_pixels + x) * C + c] += delta;
}

// 1: central differences on every primitive, every module, and the full loss
Verdict gradient_suite() {
  const auto t0 = Clock::now();
  double prim = 0.0, zero = 0.0;
  std::size_t zero_inputs = 0;
  std::string prim_at;
  auto note = [&](const itpn::testing::GradCheck& r, const std::string& what) {
    zero = std::max(zero, r.zero_worst);
    zero_inputs += r.zero_inputs;
    if (r.worst > prim) {
      prim = r.worst;
      prim_at = what + ":" + r.worst_input;
    }
  };
  std::mt19937_64 rng(11);
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), c = random_tensor({4}, rng);
    note(check_gradients([&] { return probe_sum(matmul(a, b), 1); }, {a, b}, {"a", "b"}), "matmul");
    note(check_gradients([&] { return probe_sum(mul(sub(add(a, c), a), add(a, c)), 2); }, {a, c}, {"a", "c"}),
         "add/sub/mul");
    note(check_gradients([&] { return probe_sum(gelu(scale(a, 1.3)), 3); }, {a}, {"a"}), "gelu/scale");
  }
  {
    Tensor x = random_tensor({4, 6}, rng, 2.0), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    note(check_gradients([&] { return probe_sum(layer_norm(x, g, b, 1e-6), 4); }, {x, g, b}, {"x", "g", "b"}),
         "layer_norm");
  }
  {
    Tensor q = random_tensor({5, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
    note(check_gradients([&] { return probe_sum(scaled_dot_attention(q, k, v, 2), 5); }, {q, k, v}, {"q", "k", "v"}),
         "attention");
  }
  {
    Tensor x = random_tensor({5, 3}, rng), fill = random_tensor({3}, rng);
    const std::vector<std::size_t> g{4, 0, 4, 2}, sel{3, 1}, at{0, 5};
    note(check_gradients(
             [&] {
               return add(probe_sum(reshape(gather_rows(x, g), {2, 6}), 6),
                          probe_sum(place_tokens(select_tokens(x, sel), at, fill, 6), 7));
             },
             {x, fill}, {"x", "fill"}),
         "gather/select/place/reshape");
    Tensor t = random_tensor({5, 3}, rng, 1.0, false);
    const std::vector<int> labels{0, 2, 1, 2, 0};
    note(check_gradients(
             [&] { return add(add(mse(x, t), mean(mul(x, x))), add(cross_entropy(x, labels), scale(sum(x), 0.1))); },
             {x}, {"x"}),
         "reductions/losses");
  }

  // modules on the tiny preset with every path live
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 3);
  perturb(m.neck.parameters(), 0.05, 4);
  perturb(m.heads.parameters(), 0.02, 5);
  TeacherState ema = ema_init(m.backbone, cfg.ema_coefficient);
  perturb(ema.network.parameters(), 0.02, 6);
  auto spec = sample(cfg, 0.75, 7);
  const Tensor img = random_image(cfg, 8);
  StageFeatures u;
  {
    NoGradGuard ng;
    u = m.backbone.forward(img, spec);
  }
  auto module_check = [&](const std::string& what, const ParamList& ps, std::vector<Tensor> extra,
                          const std::function<Tensor()>& f) {
    std::vector<Tensor> inputs = std::move(extra);
    std::vector<std::string> names(inputs.size(), "input");
    for (const auto& p : ps) {
      inputs.push_back(p.tensor);
      names.push_back(p.name);
    }
    note(check_gradients(f, inputs, names, 1e-5, 3), what);
  };
  {
    Tensor u1 = u[1].clone();
    u1.set_requires_grad(true);
    ParamList lat;
    m.neck.laterals[0].collect("lateral1", 0, lat);
    module_check("lateral_project", lat, {u1}, [&] { return probe_sum(lateral_project(u1, m.neck.laterals[0]), 8); });
    Tensor v2 = u[2].clone();
    v2.set_requires_grad(true);
    ParamList td;
    m.neck.topdown[0].collect("topdown1", td);
    module_check("topdown_upsample", td, {v2},
                 [&] { return probe_sum(topdown_upsample(v2, *spec, 1, m.neck.topdown[0]), 9); });
  }
  PyramidFeatures v;
  {
    NoGradGuard ng;
    v = m.neck.forward(u);
  }
  {
    ParamList ps;
    m.heads.mfm[1].collect("mfm2", ps);
    module_check("mfm_predict", ps, {}, [&] { return probe_sum(mfm_predict(v[2], *spec, 2, m.heads.mfm[1]), 10); });
    module_check("fuse+decode", m.heads.pixel_parameters(), {},
                 [&] { return probe_sum(mim_decode(fuse_for_decoder(v, *spec, m.heads.fuse), m.heads.decoder), 11); });
    module_check("unified_predict", m.heads.unified_parameters(), {},
                 [&] { return probe_sum(unified_predict(v, *spec, m.heads.unified), 12); });
    ParamList cls = m.classifier_parameters();
    module_check("classify", cls, {}, [&] {
      const std::vector<int> label{1};
      return cross_entropy(classify(v[3], m.classifier), label);
    });
  }

  // full loss, both teacher kinds
  double e2e = 0.0;
  std::string e2e_at;
  for (auto kind : {TeacherKind::ema, TeacherKind::frozen}) {
    ModelConfig c = cfg;
    c.teacher = kind;
    m.cfg = c;
    TeacherState teacher = kind == TeacherKind::ema ? ema : synthetic_frozen_teacher(c, 13);
    ParamList ps = pretrain_parameters(m);
    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    for (auto& p : ps) {
      inputs.push_back(p.tensor);
      names.push_back(p.name);
    }
    auto r = check_gradients([&] { return pretrain_loss(m, teacher, img, spec).total; }, inputs, names, 1e-5, 2);
    zero = std::max(zero, r.zero_worst);
    zero_inputs += r.zero_inputs;
    if (r.worst > e2e) {
      e2e = r.worst;
      e2e_at = r.worst_input;
    }
  }
  const double secs = seconds_since(t0);
  Verdict out;
  out.pass = prim <= 1e-5 && e2e <= 1e-4 && zero <= 1.0 && secs < 120.0;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "worst primitive/module %.2e (%s), end-to-end %.2e (%s), %zu zero-gradient inputs within %.2f of the "
                "difference roundoff bound, %.1f s",
                prim, prim_at.c_str(), e2e, e2e_at.c_str(), zero_inputs, zero, secs);
  out.detail = buf;
  return out;
}

// 2: masked pixels never reach features or decoder output; visible pixels stay in their cone
Verdict leak_freedom() {
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 21);
  perturb(m.neck.parameters(), 0.05, 22);
  perturb(m.heads.parameters(), 0.02, 23);
  NoGradGuard ng;
  const std::size_t B = cfg.base_side(), unit = cfg.unit_pixels();
  std::size_t masked_failures = 0, cone_failures = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto spec = sample(cfg, cfg.mask_ratio, 1000 + trial);
    const Tensor a = random_image(cfg, 2000 + trial);
    auto run = [&](const Tensor& img) {
      StageFeatures u = m.backbone.forward(img, spec);
      PyramidFeatures v = m.neck.forward(u);
      Tensor d = mim_decode(fuse_for_decoder(v, *spec, m.heads.fuse), m.heads.decoder);
      return std::make_tuple(u, v, d);
    };
    const auto [ua, va, da] = run(a);
    Tensor b = a.clone();
    for (auto mu : spec->masked_units()) add_to_unit(b, mu, unit, B, 3.0 + 0.1 * static_cast<double>(trial));
    const auto [ub, vb, db] = run(b);
    bool same = bit_equal(da, db);
    for (std::size_t s = 0; s <= cfg.num_stages(); ++s) same = same && bit_equal(ua[s], ub[s]);
    for (std::size_t s = 1; s <= cfg.num_stages(); ++s) same = same && bit_equal(va[s], vb[s]);
    if (!same) ++masked_failures;

    // one visible unit: in the C-MLP stages only its own rows may change, and they must
    const auto& vis_units = spec->stage(cfg.num_stages()).visible;
    const std::size_t target = vis_units[trial % vis_units.size()];
    Tensor c = a.clone();
    add_to_unit(c, target, unit, B, 0.5);
    const StageFeatures uc = m.backbone.forward(c, spec);
    bool cone = true;
    for (std::size_t s = 0; s <= 2; ++s) {
      const StageMask& st = spec->stage(s == 0 ? 1 : s);
      const auto rows = unit_rows(st, B, target);
      std::vector<char> inside(st.visible.size(), 0);
      for (auto r : rows) inside[r] = 1;
      bool moved = false;
      for (std::size_t r = 0; r < st.visible.size(); ++r)
        for (std::size_t k = 0; k < ua[s].cols(); ++k) {
          const bool differs = ua[s].at(r, k) != uc[s].at(r, k);
          if (differs && !inside[r]) cone = false;
          if (differs && inside[r]) moved = true;
        }
      cone = cone && moved;
    }
    if (!cone) ++cone_failures;
  }
  Verdict out;
  out.pass = masked_failures == 0 && cone_failures == 0;
  out.detail = "100 trials: masked-pixel leaks " + std::to_string(masked_failures) + ", cone violations " +
               std::to_string(cone_failures);
  return out;
}

// 3: per-stage masks equal Kronecker expansions of the unit mask
Verdict mask_alignment() {
  const std::vector<std::size_t> factors{4, 2, 1};
  std::size_t bad = 0;
  std::mt19937_64 rng(31);
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    const std::size_t side = 2 + rng() % 5;
    const double ratio = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const MaskSpec spec = MaskSpec::sample({side, side}, ratio, rng(), factors);
    for (std::size_t s = 1; s <= 3; ++s) {
      const std::size_t f = factors[s - 1], n = side * f;
      std::vector<std::size_t> expect;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          if (spec.unit_masked((y / f) * side + x / f)) expect.push_back(y * n + x);
      const auto& st = spec.stage(s);
      if (st.masked != expect || st.masked.size() != spec.masked_units().size() * f * f ||
          st.visible.size() + st.masked.size() != n * n)
        ++bad;
    }
  }
  return {bad == 0, "1000 masks x 3 stages, mismatches " + std::to_string(bad)};
}

// 4: k EMA steps toward a constant student
Verdict ema_closed_form() {
  ModelConfig cfg;
  Rng rng(41);
  Backbone student = Backbone::init(cfg, rng);
  Backbone target = student.clone();
  perturb(target.parameters(), 0.1, 42);
  double worst = 0.0;
  for (int k : {1, 2, 10}) {
    TeacherState t = ema_init(student, 0.996);
    const auto start = snapshot(t.network.parameters());
    for (int i = 0; i < k; ++i) ema_update(t, target);
    const double mk = std::pow(0.996, k);
    const auto now = snapshot(t.network.parameters()), th = snapshot(target.parameters());
    for (std::size_t i = 0; i < now.size(); ++i)
      for (std::size_t j = 0; j < now[i].size(); ++j)
        worst = std::max(worst, std::abs(now[i][j] - (mk * start[i][j] + (1 - mk) * th[i][j])));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "k in {1,2,10}, max deviation %.2e", worst);
  return {worst <= 1e-12, buf};
}

// 5: fresh neck is the identity; shapes always match
Verdict pyramid_structure() {
  ModelConfig cfg;
  ItpnModel m = ItpnModel::init(cfg, 51);
  ItpnModel live = ItpnModel::init(cfg, 51);
  perturb(live.neck.parameters(), 0.05, 52);
  NoGradGuard ng;
  std::size_t bad = 0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    auto spec = sample(cfg, trial % 2 ? 0.75 : 0.0, 60 + trial);
    const StageFeatures u = m.backbone.forward(random_image(cfg, 70 + trial), spec);
    const PyramidFeatures v = m.neck.forward(u), w = live.neck.forward(u);
    for (std::size_t s = 1; s <= cfg.num_stages(); ++s)
      if (!bit_equal(v[s], u[s]) || w[s].shape() != u[s].shape()) ++bad;
  }
  return {bad == 0, "20 masks, stage mismatches " + std::to_string(bad)};
}

// 6: literal reference constants in the default config
Verdict config_parity() {
  const ModelConfig cfg;
  const bool ok = cfg.mask_ratio == 0.75 && cfg.lambda_mfm == 0.3 && cfg.ema_coefficient == 0.996 && cfg.beta1 == 0.9 &&
                  cfg.beta2 == 0.95 && cfg.warmup_epochs == 40.0 && cfg.layer_decay == 0.55;
  char buf[160];
  std::snprintf(buf, sizeof buf, "mask %g, lambda %g, ema %g, betas (%g, %g), warmup %g, layer decay %g",
                cfg.mask_ratio, cfg.lambda_mfm, cfg.ema_coefficient, cfg.beta1, cfg.beta2, cfg.warmup_epochs,
                cfg.layer_decay);
  return {ok, buf};
}

ModelConfig acceptance_config(std::uint64_t seed) {
  ModelConfig cfg = load_config(ITPN_SOURCE_DIR "/configs/tiny.cfg");
  cfg.max_steps = 200;
  cfg.seed = seed;
  return cfg;
}

struct Pretrained {
  CheckpointBundle bundle;
  std::vector<MetricsRecord> records;
  double seconds = 0.0;
};

Pretrained pretrain_run(const Dataset& data, std::uint64_t seed) {
  const auto t0 = Clock::now();
  ModelConfig cfg = acceptance_config(seed);
  ItpnModel m = ItpnModel::init(cfg, seed);
  Pretrainer tr(m, pretrain_total_steps(cfg, data.size()));
  Pretrained out;
  out.records = run_pretraining(tr, data);
  out.bundle = capture(m);
  out.seconds = seconds_since(t0);
  return out;
}

// 7: loss falls during a 200-step run
Verdict smoke_pretraining(const Pretrained& run) {
  const auto& r = run.records;
  if (r.size() < 20) return {false, "only " + std::to_string(r.size()) + " steps"};
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    head += r[i].loss_total / 10.0;
    tail += r[r.size() - 10 + i].loss_total / 10.0;
  }
  const double drop = 1.0 - tail / head;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu steps, loss_total %.4f -> %.4f (10-step means), drop %.1f%%, %.0f s", r.size(),
                head, tail, 100.0 * drop, run.seconds);
  return {r.size() == 200 && drop >= 0.20 && run.seconds < 600.0, buf};
}

// 8: probe of pre-trained vs random-init features; pyramid load mode
Verdict transfer(const Dataset& train, const Dataset& test, const Pretrained& seed0) {
  double gap = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Pretrained run = seed == 0 ? seed0 : pretrain_run(train, seed);
    const ModelConfig cfg = acceptance_config(seed);
    ItpnModel pre = ItpnModel::init(cfg, seed);
    restore(run.bundle, {kGroupBackbone}, pre);
    ItpnModel fresh = ItpnModel::init(cfg, seed);
    const double a = linear_probe(train, test, pre).test_accuracy;
    const double b = linear_probe(train, test, fresh).test_accuracy;
    gap += 100.0 * (a - b) / 3.0;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sseed %llu %.1f vs %.1f", seed ? ", " : "", static_cast<unsigned long long>(seed),
                  100.0 * a, 100.0 * b);
    detail += buf;
  }

  // backbone,neck load through a checkpoint file restores the pyramid bit-exact and fine-tuning leaves it there
  const ModelConfig cfg = acceptance_config(0);
  const fs::path path = fs::temp_directory_path() / "itpn_acceptance_pyramid.itpnck";
  save_checkpoint(seed0.bundle, path);
  ItpnModel tuned = ItpnModel::init(cfg, 99);
  const auto groups = parse_load_groups("backbone,neck");
  restore(load_checkpoint(path, groups), groups, tuned);
  fs::remove(path);
  const auto* stored = seed0.bundle.find(kGroupNeck);
  CheckpointGroup live = make_group(kGroupNeck, tuned.neck.parameters());
  const bool loaded = encode_checkpoint({kCheckpointVersion, {live}}) == encode_checkpoint({kCheckpointVersion, {*stored}});
  FineTuner tuner(tuned, 32);
  finetune_epoch(slice(train, 0, 32), tuner);
  live = make_group(kGroupNeck, tuned.neck.parameters());
  const bool kept = encode_checkpoint({kCheckpointVersion, {live}}) == encode_checkpoint({kCheckpointVersion, {*stored}});

  char buf[128];
  std::snprintf(buf, sizeof buf, "; mean gap %+.1f points (need >= +5); neck restored %s, after fine-tune %s", gap,
                loaded ? "bit-exact" : "MISMATCH", kept ? "bit-exact" : "MISMATCH");
  return {gap >= 5.0 && loaded && kept, "probe top-1 pre-trained vs random: " + detail + buf};
}

// 9: bit-exact round trips, corrupted files rejected without touching live state
Verdict formats() {
  ModelConfig cfg;
  ItpnModel a = ItpnModel::init(cfg, 91);
  TeacherState t = ema_init(a.backbone, 0.996);
  const fs::path ck = fs::temp_directory_path() / "itpn_acceptance.itpnck";
  const fs::path ds = fs::temp_directory_path() / "itpn_acceptance.itpnds";
  const CheckpointBundle bundle = capture(a, &t);
  save_checkpoint(bundle, ck);
  ItpnModel b = ItpnModel::init(cfg, 92);
  restore(load_checkpoint(ck), {kGroupBackbone, kGroupNeck, kGroupHeads}, b);
  bool ok = bit_equal(snapshot(a.backbone.parameters()), snapshot(b.backbone.parameters())) &&
            bit_equal(snapshot(a.neck.parameters()), snapshot(b.neck.parameters())) &&
            bit_equal(snapshot(a.head_parameters()), snapshot(b.head_parameters()));
  const Dataset data = generate_synthetic(16, 4, 93);
  save_dataset(data, ds);
  ok = ok && load_dataset(ds) == data;

  std::ifstream in(ck, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::size_t rejected = 0, cases = 0;
  ItpnModel c = ItpnModel::init(cfg, 94);
  const auto before = snapshot(c.backbone.parameters());
  auto attempt = [&](const std::string& corrupt) {
    ++cases;
    std::ofstream(ck, std::ios::binary | std::ios::trunc).write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    try {
      restore(load_checkpoint(ck), {kGroupBackbone}, c);
    } catch (const LoadError&) {
      ++rejected;
    }
  };
  attempt(bytes.substr(0, bytes.size() / 2));
  attempt(bytes + "x");
  std::string magic = bytes;
  magic[0] = 'J';
  attempt(magic);
  std::string version = bytes;
  version[8] = 7;
  attempt(version);
  ok = ok && bit_equal(snapshot(c.backbone.parameters()), before);

  std::ifstream din(ds, std::ios::binary);
  std::string dbytes((std::istreambuf_iterator<char>(din)), std::istreambuf_iterator<char>());
  din.close();
  for (const std::string& corrupt : {dbytes.substr(0, dbytes.size() - 1), std::string("XTPNDS1") + dbytes.substr(7)}) {
    ++cases;
    try {
      decode_dataset(corrupt);
    } catch (const LoadError&) {
      ++rejected;
    }
  }
  fs::remove(ck);
  fs::remove(ds);
  ok = ok && rejected == cases;
  return {ok, "round trips bit-exact " + std::string(ok ? "yes" : "no") + ", corrupted files rejected " +
                  std::to_string(rejected) + "/" + std::to_string(cases) + ", live model untouched"};
}

}  // namespace

// Optional arguments pick criteria by number; none runs all of them.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& f) {
    if (!only.empty() && !only.count(id)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "gradient suite", gradient_suite);
  report(2, "leak freedom", leak_freedom);
  report(3, "mask alignment", mask_alignment);
  report(4, "EMA closed form", ema_closed_form);
  report(5, "pyramid structure", pyramid_structure);
  report(6, "config parity", config_parity);
  const Dataset train = generate_synthetic(512, 4, 0);
  const Dataset test = generate_synthetic(256, 4, 1000);
  Pretrained seed0;
  report(7, "smoke pre-training", [&] {
    seed0 = pretrain_run(train, 0);
    return smoke_pretraining(seed0);
  });
  report(8, "transfer directionality", [&] {
    if (seed0.records.empty()) seed0 = pretrain_run(train, 0);
    return transfer(train, test, seed0);
  });
  report(9, "checkpoint and dataset formats", formats);
  return failures == 0 ? 0 : 1;
}
