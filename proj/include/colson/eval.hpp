#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colson/diffusion.hpp"
#include "colson/nets.hpp"
#include "colson/sim.hpp"
#include "colson/trainer.hpp"

namespace colson {

// A robot controller. Each evaluation worker owns its own clone; reset() is
// called with the episode seed before every episode.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual void reset(std::uint64_t episode_seed) = 0;
  virtual Action act(const WorldState& world) = 0;
  virtual std::unique_ptr<Policy> clone() const = 0;
};

class OrcaPolicy : public Policy {
 public:
  explicit OrcaPolicy(OrcaParams params = {}) : params_(params) {}
  std::string name() const override { return "orca"; }
  void reset(std::uint64_t) override {}
  Action act(const WorldState& world) override { return orca_robot_action(world, params_); }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<OrcaPolicy>(*this); }

 private:
  OrcaParams params_;
};

// Uniform normalized actions.
class RandomPolicy : public Policy {
 public:
  std::string name() const override { return "random"; }
  void reset(std::uint64_t episode_seed) override;
  Action act(const WorldState& world) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<RandomPolicy>(*this); }

 private:
  std::mt19937_64 rng_;
};

// Heads for the goal at v_pref, ignoring everyone.
class StraightPolicy : public Policy {
 public:
  std::string name() const override { return "straight"; }
  void reset(std::uint64_t) override {}
  Action act(const WorldState& world) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<StraightPolicy>(*this); }
};

enum class SamplingMode { Plain, Smoothed, ObstacleGuided };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(const std::string& text);  // plain | smooth | obstacle

struct DiffusionPolicyConfig {
  SamplingMode mode = SamplingMode::Plain;
  DiffusionSchedule schedule = DiffusionSchedule::linear(10);
  DenoiseRule rule = DenoiseRule::AsPrinted;
  GuidanceConfig guidance;
  int smoothing_depth = 0;  // 0 means the full schedule
};

class DiffusionPolicy : public Policy {
 public:
  DiffusionPolicy(ScoreNetwork actor, DiffusionPolicyConfig config);

  std::string name() const override { return "diffusion-" + to_string(config_.mode); }
  void reset(std::uint64_t episode_seed) override;
  Action act(const WorldState& world) override;
  std::unique_ptr<Policy> clone() const override { return std::make_unique<DiffusionPolicy>(*this); }

  const DiffusionPolicyConfig& config() const { return config_; }
  DiffusionPolicy with_mode(SamplingMode mode) const;

 private:
  ScoreNetwork actor_;
  DiffusionPolicyConfig config_;
  NoiseSource noise_{0};
  std::optional<std::array<double, 2>> previous_;
};

// Spectral smoothness of one action channel sampled at rate fs:
//   Sm = 2 / (n fs) * sum_i M_i f_i
// over the one-sided DFT bins i = 0..n/2 with f_i = i fs / n and amplitude
// M_i = 2 |X_i| / n (|X_i| / n for the DC and Nyquist bins).
double smoothness(std::span<const double> channel, double fs);
// Sum of the per-channel scores of a velocity sequence.
double smoothness(std::span<const Action> actions, double dt);

struct EpisodeTrace {
  std::vector<Vec2> robot;                     // positions, initial included
  std::vector<std::vector<Vec2>> pedestrians;  // per step, per pedestrian
  std::vector<Action> actions;                 // executed (clipped) velocities
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  std::uint64_t world_fingerprint = 0;  // initial world
  OutcomeKind outcome = OutcomeKind::Timeout;
  int steps = 0;
  double nav_time = 0.0;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
  std::optional<double> smoothness;  // raw, needs at least two actions
};

struct EvalReport {
  std::string policy;
  std::string scenario;
  int episodes = 0;
  std::uint64_t base_seed = 0;
  double success_rate = 0.0;  // percentages
  double collision_rate = 0.0;
  double pedestrian_collision_rate = 0.0;
  double wall_collision_rate = 0.0;
  double timeout_rate = 0.0;
  std::optional<double> mean_exec_time;  // seconds, successful episodes only
  double mean_return = 0.0;              // discounted
  double mean_undiscounted_return = 0.0;
  std::optional<double> smoothness;  // x1e3, mean over episodes
  std::string fingerprint;           // of policy, scenario and seed set
  std::vector<EpisodeRecord> records;
};

struct EvalOptions {
  int jobs = 1;
  bool record_traces = false;
};

struct EvalResult {
  EvalReport report;
  std::vector<EpisodeTrace> traces;  // filled when requested, seed order
};

std::string describe(const ScenarioConfig& scenario);

// Plays one episode from make(seed) to termination.
EpisodeRecord run_episode(Policy& policy, const ScenarioConfig& scenario, std::uint64_t seed,
                          EpisodeTrace* trace = nullptr);

// Aggregates records (in the given order) into a report.
EvalReport aggregate(std::string policy, const ScenarioConfig& scenario, std::uint64_t base_seed,
                     std::vector<EpisodeRecord> records);

// Episodes use seeds base_seed .. base_seed + n - 1. Workers each own a
// clone of `policy`; results are reduced in seed order.
EvalResult evaluate_full(const Policy& policy, const ScenarioConfig& scenario, int n_episodes,
                         std::uint64_t base_seed, const EvalOptions& options = {});
EvalReport evaluate(const Policy& policy, const ScenarioConfig& scenario, int n_episodes, std::uint64_t base_seed,
                    const EvalOptions& options = {});

std::vector<EvalReport> sweep_pedestrians(const Policy& policy, const ScenarioConfig& scenario,
                                          std::span<const int> counts, int n_episodes, std::uint64_t base_seed,
                                          const EvalOptions& options = {});

struct GuidanceComparison {
  std::vector<SamplingMode> modes;
  std::vector<EvalReport> reports;
  bool paired = true;  // every mode saw the same initial worlds
};

GuidanceComparison compare_guidance(const DiffusionPolicy& policy, const ScenarioConfig& scenario,
                                    std::span<const SamplingMode> modes, int n_episodes, std::uint64_t base_seed,
                                    const EvalOptions& options = {});

}  // namespace colson
