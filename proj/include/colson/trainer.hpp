#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "colson/diffusion.hpp"
#include "colson/nets.hpp"
#include "colson/sim.hpp"

namespace colson {

struct Transition {
  Observation observation;
  std::array<double, 2> action{};  // normalized
  double reward = 0.0;
  Observation next_observation;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

  // Uniform draws with replacement over the current contents.
  std::vector<std::size_t> sample_indices(std::size_t n, std::mt19937_64& rng) const;
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::vector<Transition> data_;
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::uint64_t inserted_ = 0;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::CircleCrossing;
  int pedestrians = 5;
  bool visible = true;
  SimConfig sim;
  PedestrianController controller;

  WorldState make(std::uint64_t seed) const;
};

struct TrainConfig {
  int episodes = 100000;
  int warm_start_episodes = 2000;
  std::size_t batch_size = 256;
  double gamma = 0.9;  // per second of travel at v_pref; see step_discount()
  double rho = 0.995;
  double alpha_qsm = 400.0;
  // Sign applied to alpha * grad_a Q when forming the score target. The
  // denoising update subtracts the score, so -1 makes sampling climb Q.
  double score_sign = -1.0;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double max_grad_norm = 0.0;
  std::size_t buffer_capacity = 1000000;
  int gradient_steps = 0;  // per episode; 0 means one per environment step
  double epsilon_start = 0.3;
  double epsilon_end = 0.0;
  double epsilon_anneal_fraction = 1.0 / 3.0;
  int diffusion_steps = 10;
  double schedule_first = 1e-4;  // alpha at tau = 1
  double schedule_last = 0.02;   // alpha at tau = T
  DenoiseRule rule = DenoiseRule::AsPrinted;
  NetConfig net;
  ScenarioConfig scenario;
  int checkpoint_every = 0;  // episodes; 0 disables periodic checkpoints

  // Discount per environment step, gamma^(dt * v_pref).
  double step_discount() const;
  double epsilon_at(int episode) const;
};

struct EpisodeMetrics {
  int episode = 0;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
  bool success = false;
  OutcomeKind outcome = OutcomeKind::Timeout;
  int steps = 0;
  double critic_loss = 0.0;
  double qsm_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  std::function<void(const EpisodeMetrics&)> on_episode;
  // episode == 0 for the initial checkpoint, -1 for the diagnostic one
  // written before a divergence abort.
  std::function<void(int episode, const nd::NamedTensors&)> on_checkpoint;
};

// Builds a batched graph of observations.
GraphBatch observation_batch(std::span<const Transition* const> batch, bool next);

// ORCA-driven robot action for the current world.
Action orca_robot_action(const WorldState& world, const OrcaParams& params);

class QsmTrainer {
 public:
  QsmTrainer(TrainConfig config, std::uint64_t seed);

  const TrainConfig& config() const { return config_; }
  ScoreNetwork& actor() { return actor_; }
  CriticPair& critics() { return critics_; }
  ReplayBuffer& buffer() { return buffer_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  // Runs the robot under ORCA for n episodes and stores every transition.
  void collect_warm_start(int n_episodes, std::uint64_t seed);

  // One critic regression step on both critics; returns the mean pre-step loss.
  double critic_update(std::span<const Transition* const> batch);
  // One Q-score-matching step on the score network; returns the pre-step loss.
  double actor_update(std::span<const Transition* const> batch);
  // The same step for given noised actions [n, 2] and their diffusion steps.
  double actor_update(const GraphBatch& observations, std::span<const double> noisy, std::span<const int> taus);
  // score_sign * alpha * grad_a min(Q1, Q2) at the given actions, [n, 2].
  std::vector<double> score_targets(const GraphBatch& observations, std::span<const double> actions);
  void update_targets();

  // Plays one exploration episode and stores it after it ends.
  EpisodeMetrics explore_episode(int episode, std::uint64_t world_seed);

  void train(std::uint64_t seed, const TrainHooks& hooks = {});

  // Normalized actions sampled by the current policy, one per graph.
  std::vector<double> sample(const GraphBatch& batch, NoiseSource& noise);

  nd::NamedTensors checkpoint();
  void load(const nd::NamedTensors& tensors);
  ParamList actor_params();
  ParamList critic_params(bool target, int which);

 private:
  TrainConfig config_;
  DiffusionSchedule schedule_;
  std::mt19937_64 rng_;
  NoiseSource noise_;
  ScoreNetwork actor_;
  CriticPair critics_;
  ReplayBuffer buffer_;
  std::unique_ptr<nd::Adam> actor_opt_;
  std::unique_ptr<nd::Adam> critic_opt_[2];
};

}  // namespace colson
