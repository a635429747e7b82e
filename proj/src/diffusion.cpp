#include "colson/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace colson {

bool DiffusionSchedule::valid() const {
  return std::all_of(alpha.begin(), alpha.end(), [](double a) { return a > 0.0 && a < 1.0; });
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double first, double last) {
  if (steps < 0) throw std::invalid_argument("DiffusionSchedule: negative step count");
  DiffusionSchedule s;
  s.alpha.resize(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const double frac = steps > 1 ? static_cast<double>(k) / (steps - 1) : 0.0;
    s.alpha[static_cast<std::size_t>(k)] = first + (last - first) * frac;
  }
  return s;
}

ScoreFn zero_score() {
  return [](std::span<const double>, int, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
}

std::vector<double> forward_noise(std::span<const double> x0, const DiffusionSchedule& schedule, int up_to,
                                  NoiseSource& noise) {
  if (up_to < 0 || up_to > schedule.steps()) throw std::out_of_range("forward_noise: depth out of range");
  std::vector<double> x(x0.begin(), x0.end());
  for (int tau = 1; tau <= up_to; ++tau) {
    const double a = schedule.at(tau);
    const double keep = std::sqrt(1.0 - a);
    const double mix = std::sqrt(a);
    for (double& v : x) v = keep * v + mix * noise.normal();
  }
  return x;
}

void denoise_step(std::span<double> x, std::span<const double> score, int tau, const DiffusionSchedule& schedule,
                  DenoiseRule rule) {
  if (tau < 1 || tau > schedule.steps()) throw std::out_of_range("denoise_step: step out of range");
  if (score.size() != x.size()) throw std::invalid_argument("denoise_step: score shape mismatch");
  const double a = schedule.at(tau);
  double coeff = std::sqrt(a);
  if (rule == DenoiseRule::Ddpm) {
    double keep = 1.0;
    for (int s = 1; s <= tau; ++s) keep *= 1.0 - schedule.at(s);
    coeff = a / std::sqrt(1.0 - keep);
  }
  const double inv = 1.0 / std::sqrt(1.0 - a);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = inv * x[i] - inv * coeff * score[i];
}

void clip_to_box(std::span<double> x) {
  for (double& v : x) v = std::clamp(v, -1.0, 1.0);
}

Action to_physical(double nx, double ny, double v_pref) {
  const Vec2 v = clip_norm(Vec2{std::clamp(nx, -1.0, 1.0), std::clamp(ny, -1.0, 1.0)} * v_pref, v_pref);
  return {v.x, v.y};
}

std::array<double, 2> to_normalized(const Action& action, double v_pref) {
  return {std::clamp(action.vx / v_pref, -1.0, 1.0), std::clamp(action.vy / v_pref, -1.0, 1.0)};
}

namespace {

void run_reverse(const ScoreFn& score, std::vector<double>& x, int from_tau, const DiffusionSchedule& schedule,
                 DenoiseRule rule) {
  std::vector<double> s(x.size());
  for (int tau = from_tau; tau >= 1; --tau) {
    score(x, tau, s);
    denoise_step(x, s, tau, schedule, rule);
  }
}

}  // namespace

std::vector<double> sample_actions(const ScoreFn& score, std::size_t rows, const DiffusionSchedule& schedule,
                                   NoiseSource& noise, DenoiseRule rule) {
  std::vector<double> x(rows * kActionDim);
  for (double& v : x) v = noise.normal();
  run_reverse(score, x, schedule.steps(), schedule, rule);
  clip_to_box(x);
  return x;
}

std::array<double, 2> sample_action_smoothed(const ScoreFn& score, std::array<double, 2> previous,
                                             const DiffusionSchedule& schedule, int depth, NoiseSource& noise,
                                             DenoiseRule rule) {
  const int steps = depth <= 0 ? schedule.steps() : std::min(depth, schedule.steps());
  std::vector<double> x = forward_noise(previous, schedule, steps, noise);
  run_reverse(score, x, steps, schedule, rule);
  clip_to_box(x);
  return {x[0], x[1]};
}

Vec2 guidance_vector(const Vec2& predicted_position, const ObstacleMap& map, const GuidanceConfig& cfg) {
  const ObstacleQuery q = obstacle_query(map, predicted_position);
  if (!q.found) return {};
  const double dist = q.difference.norm();
  if (dist == 0.0) {
    // Touching the boundary: no direction in d, use the outward normal.
    return q.outward_normal * cfg.distance_cost;
  }
  const Vec2 dir = q.difference / dist;
  if (q.inside) return dir * cfg.lethal_cost;
  if (dist <= cfg.safety_distance) return dir * cfg.distance_cost;
  return dir * (cfg.distance_cost * std::exp(cfg.decay * (cfg.safety_distance - dist)));
}

std::array<double, 2> sample_action_obstacle_guided(const ScoreFn& score, const Vec2& robot_position,
                                                    const ObstacleMap& map, const DiffusionSchedule& schedule,
                                                    const GuidanceConfig& cfg, double v_pref, NoiseSource& noise,
                                                    DenoiseRule rule) {
  std::vector<double> x(kActionDim);
  for (double& v : x) v = noise.normal();
  std::vector<double> s(kActionDim);
  for (int tau = schedule.steps(); tau >= 1; --tau) {
    const Action v = to_physical(x[0], x[1], v_pref);
    const Vec2 predicted = robot_position + v.vec() * cfg.dt;
    const Vec2 g = guidance_vector(predicted, map, cfg);
    score(x, tau, s);
    denoise_step(x, s, tau, schedule, rule);
    x[0] += g.x;
    x[1] += g.y;
  }
  clip_to_box(x);
  return {x[0], x[1]};
}

ScoreFn network_score(ScoreNetwork& net, const GraphBatch& batch) {
  nd::Tensor features;
  {
    nd::Tape tape(false);
    features = tape.value(net.encode(tape, batch));
  }
  auto shared = std::make_shared<const nd::Tensor>(std::move(features));
  ScoreNetwork* model = &net;
  return [shared, model](std::span<const double> x, int tau, std::span<double> out) {
    const std::size_t rows = x.size() / kActionDim;
    if (rows != shared->rows()) throw std::invalid_argument("network_score: row count does not match batch");
    nd::Tape tape(false);
    const nd::Var h = tape.constant(*shared);
    const nd::Var xv = tape.constant(nd::Tensor({rows, kActionDim}, std::vector<double>(x.begin(), x.end())));
    const std::vector<int> taus(rows, tau);
    const auto& result = tape.value(model->score(tape, h, xv, taus));
    std::copy(result.storage().begin(), result.storage().end(), out.begin());
  };
}

}  // namespace colson
