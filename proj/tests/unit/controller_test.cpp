#include <gtest/gtest.h>

#include <random>

#include "can/controller.hpp"
#include "can/error.hpp"
#include "can/rng.hpp"

namespace {

TEST(MeasureAbstention, Counts) {
  std::vector<double> half = {0.5, 0.5, 0.5};
  std::vector<double> twice = {2.0, 2.0};
  std::vector<double> mixed = {0.5, 1.5, 2.5, 0.9};
  EXPECT_EQ(can::measure_abstention(half, 1.0), 0.0);
  EXPECT_EQ(can::measure_abstention(twice, 1.0), 1.0);
  EXPECT_EQ(can::measure_abstention(mixed, 1.0), 0.5);
  // sigma == tau is covered.
  std::vector<double> edge = {1.0};
  EXPECT_EQ(can::measure_abstention(edge, 1.0), 0.0);
  EXPECT_THROW(can::measure_abstention(std::vector<double>{}, 1.0), can::DomainError);
}

TEST(PidUpdate, ZeroErrorLeavesAlpha) {
  can::PidConfig cfg;
  cfg.setpoint = 0.4;
  can::PidState s;
  s.alpha = 0.7;
  EXPECT_EQ(can::pid_update(s, cfg, 0.4).alpha, 0.7);
}

TEST(PidUpdate, VelocityFormHandExample) {
  can::PidConfig cfg;
  cfg.setpoint = 0.5;
  can::PidState s;
  s.alpha = 1.0;
  const auto next = can::pid_update(s, cfg, 0.7);
  EXPECT_NEAR(next.alpha - s.alpha, 0.3, 1e-12);
  EXPECT_NEAR(next.e_prev, 0.2, 1e-12);
  EXPECT_EQ(next.e_prev2, 0.0);
}

TEST(PidUpdate, DerivativeTermUsesTwoPastErrors) {
  can::PidConfig cfg;
  cfg.kp = 0.0;
  cfg.ki = 0.0;
  cfg.kd = 1.0;
  cfg.setpoint = 0.0;
  can::PidState s;
  s.alpha = 5.0;
  s.e_prev = 0.1;
  s.e_prev2 = 0.3;
  // kd (e - 2 e1 + e2) = 0.4 - 0.2 + 0.3
  EXPECT_NEAR(can::pid_update(s, cfg, 0.4).alpha, 5.5, 1e-12);
}

TEST(PidUpdate, AlphaStaysClamped) {
  can::PidConfig cfg;
  cfg.kp = 5.0;
  cfg.ki = 5.0;
  cfg.setpoint = 0.5;
  can::PidState s;
  can::Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    s = can::pid_update(s, cfg, u(rng));
    ASSERT_GE(s.alpha, cfg.alpha_min);
    ASSERT_LE(s.alpha, cfg.alpha_max);
  }
}

TEST(PidConfig, RejectsBadBounds) {
  can::PidConfig cfg;
  cfg.alpha_max = -1.0;
  EXPECT_THROW(cfg.validate(), can::ConfigError);
  cfg = {};
  cfg.window_batches = 0;
  EXPECT_THROW(cfg.validate(), can::ConfigError);
}

TEST(AlphaController, ConstantNeverMoves) {
  auto c = can::AlphaController::constant(0.1);
  std::vector<double> sig = {5.0, 5.0};
  for (int i = 0; i < 20; ++i) c.observe_batch(sig, 1.0, 0);
  EXPECT_EQ(c.alpha(), 0.1);
  EXPECT_TRUE(c.log().empty());
  EXPECT_FALSE(c.is_pid());
}

TEST(AlphaController, PidUpdatesOncePerWindow) {
  can::PidConfig cfg;
  cfg.window_batches = 3;
  cfg.setpoint = 0.5;
  auto c = can::AlphaController::pid(cfg, 0.0);
  std::vector<double> all_abstain = {2.0, 2.0};
  c.observe_batch(all_abstain, 1.0, 0);
  c.observe_batch(all_abstain, 1.0, 0);
  EXPECT_EQ(c.alpha(), 0.0);
  EXPECT_TRUE(c.log().empty());
  // The window spans the epoch boundary.
  c.observe_batch(all_abstain, 1.0, 1);
  ASSERT_EQ(c.log().size(), 1u);
  EXPECT_EQ(c.log()[0].epoch, 1);
  EXPECT_EQ(c.log()[0].measured, 1.0);
  EXPECT_NEAR(c.alpha(), 0.75, 1e-12);
  EXPECT_NEAR(c.log()[0].delta_alpha, 0.75, 1e-12);
}

TEST(AlphaController, WindowPoolsSamplesAcrossBatches) {
  can::PidConfig cfg;
  cfg.window_batches = 2;
  cfg.setpoint = 0.0;
  cfg.kp = 1.0;
  cfg.ki = 0.0;
  auto c = can::AlphaController::pid(cfg, 0.0);
  std::vector<double> one_of_three = {2.0, 0.1, 0.1};
  std::vector<double> one_of_one = {2.0};
  c.observe_batch(one_of_three, 1.0, 0);
  c.observe_batch(one_of_one, 1.0, 0);
  EXPECT_NEAR(c.log().at(0).measured, 0.5, 1e-15);
}

}  // namespace
