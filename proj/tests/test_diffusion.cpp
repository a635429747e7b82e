#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "colson/diffusion.hpp"

using namespace colson;

namespace {

// Score whose denoising step maps x to k * x (fixed point at the origin).
ScoreFn contracting_score(const DiffusionSchedule& s, double k) {
  return [s, k](std::span<const double> x, int tau, std::span<double> out) {
    const double a = s.at(tau);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * (1.0 - k * std::sqrt(1.0 - a)) / std::sqrt(a);
  };
}

// Score pulling toward a fixed target point.
ScoreFn target_score(const DiffusionSchedule& s, double tx, double ty) {
  return [s, tx, ty](std::span<const double> x, int tau, std::span<double> out) {
    const double a = s.at(tau);
    for (std::size_t i = 0; i < x.size(); i += 2) {
      out[i] = (x[i] - std::sqrt(1.0 - a) * tx) / std::sqrt(a);
      out[i + 1] = (x[i + 1] - std::sqrt(1.0 - a) * ty) / std::sqrt(a);
    }
  };
}

ObstacleMap left_wall() {
  ObstacleMap m;
  m.rectangles.push_back({{-1.3, -5.0}, {-1.0, 5.0}});
  return m;
}

}  // namespace

TEST(Schedule, LinearEndpoints) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  ASSERT_EQ(s.steps(), 10);
  EXPECT_DOUBLE_EQ(s.at(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.at(10), 0.02);
  EXPECT_TRUE(s.valid());
  for (int t = 2; t <= 10; ++t) EXPECT_GT(s.at(t), s.at(t - 1));
  EXPECT_EQ(DiffusionSchedule::linear(0).steps(), 0);
  EXPECT_FALSE((DiffusionSchedule{{0.5, 1.0}}.valid()));
  EXPECT_THROW(DiffusionSchedule::linear(-1), std::invalid_argument);
}

TEST(ForwardNoise, ZeroDepthIsIdentity) {
  NoiseSource n(1);
  const std::vector<double> x0{0.3, -0.8};
  EXPECT_EQ(forward_noise(x0, DiffusionSchedule::linear(10), 0, n), x0);
  EXPECT_THROW(forward_noise(x0, DiffusionSchedule::linear(10), 11, n), std::out_of_range);
}

TEST(ForwardNoise, NoNoiseLimit) {
  NoiseSource zeros = NoiseSource::zeros();
  const DiffusionSchedule s{std::vector<double>(10, 0.0)};
  const std::vector<double> x0{0.3, -0.8};
  EXPECT_EQ(forward_noise(x0, s, 10, zeros), x0);
}

TEST(ForwardNoise, VarianceFollowsRecurrence) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10, 0.05, 0.3);
  double expected = 0.0;
  for (int t = 1; t <= s.steps(); ++t) expected = (1.0 - s.at(t)) * expected + s.at(t);
  NoiseSource n(17);
  const int draws = 100000;
  std::vector<double> xs;
  xs.reserve(draws);
  for (int i = 0; i < draws; ++i) xs.push_back(forward_noise(std::vector<double>{0.0}, s, s.steps(), n)[0]);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / draws;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= draws - 1;
  const double se = expected * std::sqrt(2.0 / (draws - 1));
  EXPECT_LT(std::abs(var - expected), 3 * se) << var << " vs " << expected;
}

TEST(Denoise, ZeroScore) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  std::vector<double> x{0.4, -0.2};
  const std::vector<double> zero{0.0, 0.0};
  denoise_step(x, zero, 7, s);
  EXPECT_DOUBLE_EQ(x[0], 0.4 / std::sqrt(1.0 - s.at(7)));
  EXPECT_DOUBLE_EQ(x[1], -0.2 / std::sqrt(1.0 - s.at(7)));
}

TEST(Denoise, IdentityInSmallAlphaLimit) {
  const DiffusionSchedule s{{1e-300}};
  std::vector<double> x{0.4, -0.2};
  const std::vector<double> score{5.0, -3.0};
  denoise_step(x, score, 1, s);
  EXPECT_EQ(x, (std::vector<double>{0.4, -0.2}));
}

TEST(Denoise, Cancellation) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  for (int tau = 1; tau <= 10; ++tau) {
    std::vector<double> x{0.7, -0.3};
    const std::vector<double> score{x[0] / std::sqrt(s.at(tau)), x[1] / std::sqrt(s.at(tau))};
    denoise_step(x, score, tau, s);
    EXPECT_NEAR(x[0], 0.0, 1e-15);
    EXPECT_NEAR(x[1], 0.0, 1e-15);
  }
}

TEST(Denoise, ConventionalRuleCoefficient) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const int tau = 4;
  double keep = 1.0;
  for (int t = 1; t <= tau; ++t) keep *= 1.0 - s.at(t);
  std::vector<double> x{0.5, 0.5};
  const std::vector<double> score{1.0, -1.0};
  denoise_step(x, score, tau, s, DenoiseRule::Ddpm);
  const double c = s.at(tau) / std::sqrt(1.0 - keep);
  EXPECT_NEAR(x[0], (0.5 - c) / std::sqrt(1.0 - s.at(tau)), 1e-15);
  EXPECT_NEAR(x[1], (0.5 + c) / std::sqrt(1.0 - s.at(tau)), 1e-15);
  EXPECT_THROW(denoise_step(x, score, 0, s), std::out_of_range);
  EXPECT_THROW(denoise_step(x, score, 11, s), std::out_of_range);
}

TEST(Sampler, EmptyScheduleReturnsClippedNoise) {
  NoiseSource a(5), b(5);
  const auto x = sample_actions(zero_score(), 3, DiffusionSchedule::linear(0), a);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], std::clamp(b.normal(), -1.0, 1.0));
}

TEST(Sampler, ContractingScoreHasZeroMean) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  for (double k : {1.0, 0.8}) {
    NoiseSource n(99);
    const int rows = 10000;
    const auto x = sample_actions(contracting_score(s, k), rows, s, n);
    for (int dim = 0; dim < 2; ++dim) {
      double mean = 0.0, sq = 0.0;
      for (int r = 0; r < rows; ++r) mean += x[2 * r + dim];
      mean /= rows;
      for (int r = 0; r < rows; ++r) sq += (x[2 * r + dim] - mean) * (x[2 * r + dim] - mean);
      const double se = std::sqrt(sq / (rows - 1) / rows);
      EXPECT_GT(se, 0.0);
      EXPECT_LT(std::abs(mean), 3 * se) << "k=" << k << " dim " << dim;
    }
  }
}

TEST(Sampler, SameSeedSameActions) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  NoiseSource a(3), b(3);
  EXPECT_EQ(sample_actions(contracting_score(s, 0.9), 4, s, a), sample_actions(contracting_score(s, 0.9), 4, s, b));
}

TEST(Smoothed, EmptyScheduleReturnsPrevious) {
  NoiseSource n(1);
  const std::array<double, 2> prev{0.25, -0.5};
  EXPECT_EQ(sample_action_smoothed(zero_score(), prev, DiffusionSchedule::linear(0), 0, n), prev);
}

TEST(Smoothed, ZeroNoiseZeroScoreIsIdentity) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int steps : {1, 10, 100}) {
    const DiffusionSchedule s = DiffusionSchedule::linear(steps);
    for (int i = 0; i < 1000; ++i) {
      NoiseSource zeros = NoiseSource::zeros();
      const std::array<double, 2> prev{u(rng), u(rng)};
      const auto out = sample_action_smoothed(zero_score(), prev, s, 0, zeros);
      // The two recurrences cancel algebraically; only rounding remains.
      EXPECT_NEAR(out[0], prev[0], 1e-14);
      EXPECT_NEAR(out[1], prev[1], 1e-14);
    }
  }
}

TEST(Smoothed, StaysCloserToPreviousThanFreshSample) {
  // Score that pulls toward (0.6, -0.2); the previous action sits nearby.
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const ScoreFn score = target_score(s, 0.6, -0.2);
  const std::array<double, 2> prev{0.5, -0.1};
  NoiseSource a(8), b(9);
  double smoothed = 0.0, fresh = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = sample_action_smoothed(score, prev, s, 0, a);
    smoothed += std::hypot(x[0] - prev[0], x[1] - prev[1]);
    const auto y = sample_actions(contracting_score(s, 0.9), 1, s, b);
    fresh += std::hypot(y[0] - prev[0], y[1] - prev[1]);
  }
  EXPECT_LT(smoothed, fresh);
}

TEST(Smoothed, PartialDepth) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  NoiseSource zeros = NoiseSource::zeros();
  const std::array<double, 2> prev{0.5, 0.5};
  const auto out = sample_action_smoothed(contracting_score(s, 0.5), prev, s, 3, zeros);
  // Three forward scalings then three steps of x -> 0.5 x.
  double x = 0.5;
  for (int t = 1; t <= 3; ++t) x *= std::sqrt(1.0 - s.at(t));
  x *= 0.125;
  EXPECT_NEAR(out[0], x, 1e-15);
}

TEST(Samplers, OutputsInsideBox) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const ScoreFn wild = [](std::span<const double> x, int tau, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::sin(7.0 * x[i] + tau) * 40.0;
  };
  NoiseSource n(2);
  GuidanceConfig g;
  for (int i = 0; i < 500; ++i) {
    for (double v : sample_actions(wild, 2, s, n)) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
    for (double v : sample_action_smoothed(wild, {0.9, -0.9}, s, 0, n)) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
    for (double v : sample_action_obstacle_guided(wild, {-0.9, 0.0}, left_wall(), s, g, 1.0, n)) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(ActionMap, PhysicalAndNormalized) {
  const Action a = to_physical(1.0, 1.0, 1.2);
  EXPECT_NEAR(a.vec().norm(), 1.2, 1e-12);
  const Action b = to_physical(0.5, -0.25, 2.0);
  EXPECT_EQ(b, (Action{1.0, -0.5}));
  const auto n = to_normalized(b, 2.0);
  EXPECT_EQ(n[0], 0.5);
  EXPECT_EQ(n[1], -0.25);
  const Action c = to_physical(3.0, 0.0, 1.0);
  EXPECT_EQ(c, (Action{1.0, 0.0}));
}

// Obstacle guidance.

TEST(Guidance, InsideUsesLethalCost) {
  GuidanceConfig cfg;
  const Vec2 g = guidance_vector({-1.1, 0.0}, left_wall(), cfg);
  // Nearest face is the right one at x = -1.0, so push along +x.
  EXPECT_EQ(g, (Vec2{cfg.lethal_cost, 0.0}));
}

TEST(Guidance, SafetyBandUsesDistanceCost) {
  GuidanceConfig cfg;
  const Vec2 at_ds = guidance_vector({-1.0 + cfg.safety_distance, 0.0}, left_wall(), cfg);
  EXPECT_EQ(at_ds, (Vec2{cfg.distance_cost, 0.0}));
  const Vec2 close = guidance_vector({-0.9, 0.0}, left_wall(), cfg);
  EXPECT_EQ(close, (Vec2{cfg.distance_cost, 0.0}));
}

TEST(Guidance, ExponentialDecayBeyondSafetyDistance) {
  GuidanceConfig cfg;
  cfg.safety_distance = 0.5;
  cfg.decay = 4.0;
  const double d = cfg.safety_distance + 1.0 / cfg.decay;
  const Vec2 g = guidance_vector({-1.0 + d, 0.0}, left_wall(), cfg);
  EXPECT_NEAR(g.x, cfg.distance_cost * std::exp(-1.0), 1e-15);
  EXPECT_EQ(g.y, 0.0);
  for (double dist : {0.6, 1.0, 2.3}) {
    const Vec2 h = guidance_vector({-1.0 + dist, 0.0}, left_wall(), cfg);
    EXPECT_EQ(h.x, cfg.distance_cost * std::exp(cfg.decay * (cfg.safety_distance - (-1.0 + dist + 1.0))));
  }
}

TEST(Guidance, MagnitudeStrictlyDecreasingBeyondSafetyDistance) {
  GuidanceConfig cfg;
  double previous = cfg.distance_cost;
  for (int i = 1; i <= 100; ++i) {
    const double dist = cfg.safety_distance + 0.02 * i;
    const double m = guidance_vector({-1.0 + dist, 0.3}, left_wall(), cfg).norm();
    EXPECT_LT(m, previous) << dist;
    EXPECT_GT(m, 0.0);
    previous = m;
  }
}

TEST(Guidance, BoundaryUsesOutwardNormal) {
  GuidanceConfig cfg;
  EXPECT_EQ(guidance_vector({-1.0, 0.0}, left_wall(), cfg), (Vec2{cfg.distance_cost, 0.0}));
  ObstacleMap seg;
  seg.segments.push_back({{0, 0}, {2, 0}});
  const Vec2 g = guidance_vector({1.0, 0.0}, seg, cfg);
  EXPECT_NEAR(g.norm(), cfg.distance_cost, 1e-15);
}

TEST(Guidance, EmptyMapGivesZero) {
  EXPECT_EQ(guidance_vector({0, 0}, ObstacleMap{}, GuidanceConfig{}), (Vec2{0, 0}));
}

TEST(Guidance, DirectionAndMagnitudeBounds) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-4, 4);
  GuidanceConfig cfg;
  ObstacleMap map = left_wall();
  map.rectangles.push_back({{1.0, -1.0}, {2.0, 0.5}});
  map.segments.push_back({{-3, 3}, {3, 3.5}});
  for (int i = 0; i < 2000; ++i) {
    const Vec2 p{u(rng), u(rng)};
    const Vec2 g = guidance_vector(p, map, cfg);
    const ObstacleQuery q = obstacle_query(map, p);
    EXPECT_GT(g.norm(), 0.0);
    EXPECT_LE(g.norm(), std::max(cfg.distance_cost, cfg.lethal_cost) + 1e-15);
    EXPECT_GE(dot(g, q.outward_normal), -1e-15);
  }
}

TEST(Guidance, ConfigValidity) {
  GuidanceConfig cfg;
  EXPECT_TRUE(cfg.valid());
  cfg.lethal_cost = cfg.distance_cost / 2;
  EXPECT_FALSE(cfg.valid());
}

TEST(GuidedSampler, EmptyMapMatchesPlainSampler) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const ScoreFn score = target_score(s, 0.3, 0.4);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    NoiseSource a(seed), b(seed);
    const auto plain = sample_actions(score, 1, s, a);
    const auto guided = sample_action_obstacle_guided(score, {0, 0}, ObstacleMap{}, s, GuidanceConfig{}, 1.0, b);
    EXPECT_EQ(plain[0], guided[0]);
    EXPECT_EQ(plain[1], guided[1]);
  }
}

TEST(GuidedSampler, ZeroCostsMatchPlainSampler) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const ScoreFn score = target_score(s, -0.5, 0.1);
  GuidanceConfig off;
  off.distance_cost = 0.0;
  off.lethal_cost = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    NoiseSource a(seed), b(seed);
    const auto plain = sample_actions(score, 1, s, a);
    const auto guided = sample_action_obstacle_guided(score, {-0.7, 0}, left_wall(), s, off, 1.0, b);
    EXPECT_EQ(plain[0], guided[0]);
    EXPECT_EQ(plain[1], guided[1]);
  }
}

TEST(GuidedSampler, PushesAwayFromNearbyWall) {
  const DiffusionSchedule s = DiffusionSchedule::linear(10);
  const ScoreFn score = contracting_score(s, 0.9);  // symmetric about the origin
  int strictly = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    NoiseSource a(seed), b(seed);
    const auto plain = sample_actions(score, 1, s, a);
    const auto guided = sample_action_obstacle_guided(score, {-0.5, 0.0}, left_wall(), s, GuidanceConfig{}, 1.0, b);
    EXPECT_GE(guided[0], plain[0]);
    if (plain[0] < 1.0) {
      EXPECT_GT(guided[0], plain[0]) << seed;
      ++strictly;
    }
  }
  EXPECT_GT(strictly, 90);
}
