#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "colson/nets.hpp"
#include "colson/obstacles.hpp"
#include "colson/sim.hpp"

namespace colson {

// Per-step noise coefficients alpha_1..alpha_T, each in (0, 1).
struct DiffusionSchedule {
  std::vector<double> alpha;

  int steps() const { return static_cast<int>(alpha.size()); }
  double at(int tau) const { return alpha.at(static_cast<std::size_t>(tau - 1)); }
  bool valid() const;

  // alpha rises linearly from `first` at tau = 1 to `last` at tau = T.
  static DiffusionSchedule linear(int steps, double first = 1e-4, double last = 0.02);
};

// How a denoising step scales the score.
//   AsPrinted: x' = (x - sqrt(alpha) * score) / sqrt(1 - alpha)
//   Ddpm:      x' = (x - alpha / sqrt(1 - prod_{s<=tau}(1 - alpha_s)) * score)
//                   / sqrt(1 - alpha)
enum class DenoiseRule { AsPrinted, Ddpm };

// Standard-normal draws, or all zeros for algebraic checks.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : rng_(seed) {}
  static NoiseSource zeros() {
    NoiseSource n(0);
    n.zero_ = true;
    return n;
  }
  double normal() { return zero_ ? 0.0 : dist_(rng_); }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_;
  bool zero_ = false;
};

// Batched score: x is [rows, 2] row-major, out receives the same shape.
using ScoreFn = std::function<void(std::span<const double> x, int tau, std::span<double> out)>;

ScoreFn zero_score();

// Runs x_tau = sqrt(1 - alpha_tau) x_{tau-1} + sqrt(alpha_tau) z for
// tau = 1..up_to with a fresh z per step and per component.
std::vector<double> forward_noise(std::span<const double> x0, const DiffusionSchedule& schedule, int up_to,
                                  NoiseSource& noise);

// One deterministic denoising step applied in place.
void denoise_step(std::span<double> x, std::span<const double> score, int tau, const DiffusionSchedule& schedule,
                  DenoiseRule rule = DenoiseRule::AsPrinted);

void clip_to_box(std::span<double> x);

// Normalized action in [-1, 1]^2 to a physical velocity inside the speed disc.
Action to_physical(double nx, double ny, double v_pref);
std::array<double, 2> to_normalized(const Action& action, double v_pref);

// Pure reverse diffusion from x_T ~ N(0, I) for `rows` actions; returns
// clipped normalized actions [rows, 2].
std::vector<double> sample_actions(const ScoreFn& score, std::size_t rows, const DiffusionSchedule& schedule,
                                   NoiseSource& noise, DenoiseRule rule = DenoiseRule::AsPrinted);

// SDEdit: noise the previous normalized action `depth` steps (0 means the
// full schedule), then denoise back. Returns a clipped normalized action.
std::array<double, 2> sample_action_smoothed(const ScoreFn& score, std::array<double, 2> previous,
                                             const DiffusionSchedule& schedule, int depth, NoiseSource& noise,
                                             DenoiseRule rule = DenoiseRule::AsPrinted);

struct GuidanceConfig {
  double safety_distance = 0.5;  // d_s [m]
  double decay = 4.0;            // eta [1/m]
  double distance_cost = 0.1;    // c_d, normalized action units
  double lethal_cost = 0.3;      // c_l
  double dt = 0.25;

  bool valid() const {
    return safety_distance > 0.0 && decay > 0.0 && distance_cost > 0.0 && lethal_cost >= distance_cost &&
           dt > 0.0;
  }
};

// Repulsion from static obstacles for a predicted robot position.
Vec2 guidance_vector(const Vec2& predicted_position, const ObstacleMap& map, const GuidanceConfig& cfg);

// Reverse diffusion with the obstacle guidance added after every denoising
// step. The position prediction uses the physical velocity of x_tau.
std::array<double, 2> sample_action_obstacle_guided(const ScoreFn& score, const Vec2& robot_position,
                                                    const ObstacleMap& map, const DiffusionSchedule& schedule,
                                                    const GuidanceConfig& cfg, double v_pref, NoiseSource& noise,
                                                    DenoiseRule rule = DenoiseRule::AsPrinted);

// Score function of a network for a fixed batch of observations; the graph
// encoding is computed once. x must have one row per graph.
ScoreFn network_score(ScoreNetwork& net, const GraphBatch& batch);

}  // namespace colson
