#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "itpn/error.hpp"
#include "itpn/teacher.hpp"

using namespace itpn;

namespace {

Tensor random_image(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(64 * 64 * 3);
  for (auto& x : v) x = u(rng);
  return Tensor({64, 64, 3}, std::move(v));
}

void shift(const Backbone& net, double delta) {
  for (auto& p : net.parameters())
    for (auto& x : p.tensor.impl()->data) x += delta;
}

}  // namespace

TEST(Teacher, EmaClosedForm) {
  ModelConfig cfg;
  Rng rng(1);
  Backbone student = Backbone::init(cfg, rng);
  for (int k : {1, 2, 10}) {
    TeacherState t = ema_init(student, 0.996);
    const auto theta0 = t.network.parameters();
    std::vector<std::vector<double>> start;
    for (auto& p : theta0) start.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    Backbone moved = student.clone();
    shift(moved, 0.25);
    for (int i = 0; i < k; ++i) ema_update(t, moved);
    const double mk = std::pow(0.996, k);
    const auto now = t.network.parameters();
    const auto target = moved.parameters();
    for (std::size_t i = 0; i < now.size(); ++i) {
      const auto got = now[i].tensor.data();
      const auto th = target[i].tensor.data();
      for (std::size_t j = 0; j < got.size(); ++j) ASSERT_NEAR(got[j], mk * start[i][j] + (1 - mk) * th[j], 1e-12);
    }
  }
}

TEST(Teacher, CopiesAreFrozen) {
  ModelConfig cfg;
  Rng rng(1);
  Backbone student = Backbone::init(cfg, rng);
  TeacherState t = ema_init(student, 0.996);
  for (const auto& p : t.network.parameters()) {
    EXPECT_FALSE(p.tensor.requires_grad());
  }
  auto a = student.parameters(), b = t.network.parameters();
  EXPECT_FALSE(a[0].tensor.same_storage(b[0].tensor));
  EXPECT_THROW(ema_init(student, 1.5), ConfigError);
}

TEST(Teacher, TargetsCoverMaskedPositionsAndAreDetached) {
  ModelConfig cfg;
  Rng rng(2);
  Backbone student = Backbone::init(cfg, rng);
  TeacherState t = ema_init(student, 0.996);
  const auto f = cfg.stage_factors();
  auto spec = MaskSpec::sample({4, 4}, 0.75, 3, f);
  current_tape().clear();
  auto targets = ema_targets(random_image(1), spec, t);
  ASSERT_EQ(targets.size(), 3u);
  for (std::size_t s = 1; s <= 3; ++s) {
    EXPECT_EQ(targets[s - 1].rows(), spec.stage(s).masked.size());
    EXPECT_FALSE(targets[s - 1].requires_grad());
  }
  EXPECT_TRUE(current_tape().empty());
}

// The teacher sees masked units only, so visible pixels cannot move its targets.
TEST(Teacher, TargetsIgnoreVisiblePixels) {
  ModelConfig cfg;
  Rng rng(3);
  TeacherState t = ema_init(Backbone::init(cfg, rng), 0.996);
  const auto f = cfg.stage_factors();
  auto spec = MaskSpec::sample({4, 4}, 0.75, 8, f);
  Tensor a = random_image(4);
  Tensor b = a.clone();
  auto px = b.data();
  for (std::size_t u = 0; u < 16; ++u) {
    if (spec.unit_masked(u)) continue;
    const std::size_t uy = u / 4, ux = u % 4;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t c = 0; c < 3; ++c) px[((uy * 16 + y) * 64 + ux * 16 + x) * 3 + c] = 0.5;
  }
  auto ta = ema_targets(a, spec, t), tb = ema_targets(b, spec, t);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto x = ta[s].data(), y = tb[s].data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(Teacher, KindMismatchIsAContractError) {
  ModelConfig cfg;
  TeacherState frozen = synthetic_frozen_teacher(cfg, 5);
  Rng rng(1);
  Backbone student = Backbone::init(cfg, rng);
  EXPECT_THROW(ema_update(frozen, student), ContractError);
  const auto f = cfg.stage_factors();
  auto spec = MaskSpec::sample({4, 4}, 0.75, 8, f);
  EXPECT_THROW(ema_targets(random_image(1), spec, frozen), ContractError);
  TeacherState ema = ema_init(student, 0.996);
  EXPECT_THROW(frozen_teacher_target(random_image(1), ema), ContractError);
}

TEST(Teacher, FrozenTargetIsDenseAndSeeded) {
  ModelConfig cfg;
  TeacherState a = synthetic_frozen_teacher(cfg, 5), b = synthetic_frozen_teacher(cfg, 5);
  Tensor img = random_image(2);
  Tensor ta = frozen_teacher_target(img, a), tb = frozen_teacher_target(img, b);
  EXPECT_EQ(ta.shape(), (Shape{16, 128}));
  const auto x = ta.data(), y = tb.data();
  EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  EXPECT_FALSE(ta.requires_grad());
}
