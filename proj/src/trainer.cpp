#include "colson/trainer.hpp"

#include <cmath>
#include <sstream>

#include "colson/seeding.hpp"

namespace colson {

using nd::Tape;
using nd::Tensor;
using nd::Var;

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
  ++inserted_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, std::mt19937_64& rng) const {
  if (data_.empty()) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(n, rng)) out.push_back(&data_[i]);
  return out;
}

WorldState ScenarioConfig::make(std::uint64_t seed) const {
  if (kind == ScenarioKind::Wall) return make_wall_scenario(seed, visible, sim);
  return make_circle_crossing(pedestrians, seed, visible, sim);
}

double TrainConfig::step_discount() const {
  return std::pow(gamma, scenario.sim.dt * scenario.sim.v_pref);
}

double TrainConfig::epsilon_at(int episode) const {
  const double horizon = epsilon_anneal_fraction * episodes;
  if (horizon <= 0.0 || episode >= horizon) return epsilon_end;
  const double f = episode / horizon;
  return epsilon_start + (epsilon_end - epsilon_start) * f;
}

GraphBatch observation_batch(std::span<const Transition* const> batch, bool next) {
  std::vector<const Observation*> obs;
  obs.reserve(batch.size());
  for (const Transition* t : batch) obs.push_back(next ? &t->next_observation : &t->observation);
  return GraphBatch::from_observations(obs);
}

Action orca_robot_action(const WorldState& world, const OrcaParams& params) {
  std::vector<AgentState> neighbors;
  for (const Pedestrian& p : world.pedestrians) neighbors.push_back(pedestrian_agent(p));
  const AgentState self = robot_agent(world.robot);
  OrcaParams robot_params = params;
  robot_params.max_speed = world.robot.v_pref;
  const Vec2 pref = preferred_velocity(world.robot.position, world.robot.goal, world.robot.v_pref);
  const Vec2 v = orca_velocity(self, neighbors, pref, robot_params);
  return {v.x, v.y};
}

namespace {

nd::AdamConfig adam_config(double lr, double clip) {
  nd::AdamConfig c;
  c.learning_rate = lr;
  c.max_grad_norm = clip;
  return c;
}

bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

QsmTrainer::QsmTrainer(TrainConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      schedule_(DiffusionSchedule::linear(config_.diffusion_steps, config_.schedule_first,
                                          config_.schedule_last)),
      rng_(derive_seed(seed, 1, 0)),
      noise_(derive_seed(seed, 2, 0)),
      buffer_(config_.buffer_capacity) {
  std::mt19937_64 init(derive_seed(seed, 0, 0));
  actor_ = ScoreNetwork(config_.net, config_.diffusion_steps, init);
  critics_ = CriticPair(config_.net, init);
  actor_opt_ = std::make_unique<nd::Adam>(tensors_of(actor_params()),
                                          adam_config(config_.actor_lr, config_.max_grad_norm));
  for (int i = 0; i < 2; ++i) {
    critic_opt_[i] = std::make_unique<nd::Adam>(tensors_of(critic_params(false, i + 1)),
                                                adam_config(config_.critic_lr, config_.max_grad_norm));
  }
}

ParamList QsmTrainer::actor_params() {
  ParamList out;
  actor_.collect("actor.", out);
  return out;
}

ParamList QsmTrainer::critic_params(bool target, int which) {
  ParamList out;
  critics_.get(which, target).collect(std::string(target ? "target" : "critic") + std::to_string(which) + ".", out);
  return out;
}

nd::NamedTensors QsmTrainer::checkpoint() {
  ParamList all = actor_params();
  critics_.collect(all);
  return snapshot(all);
}

void QsmTrainer::load(const nd::NamedTensors& tensors) {
  ParamList all = actor_params();
  critics_.collect(all);
  restore(all, tensors);
}

std::vector<double> QsmTrainer::sample(const GraphBatch& batch, NoiseSource& noise) {
  return sample_actions(network_score(actor_, batch), batch.batch, schedule_, noise, config_.rule);
}

void QsmTrainer::collect_warm_start(int n_episodes, std::uint64_t seed) {
  const ScenarioConfig& sc = config_.scenario;
  for (int e = 0; e < n_episodes; ++e) {
    WorldState world = sc.make(derive_seed(seed, 3, static_cast<std::uint64_t>(e)));
    world.visible = true;
    while (!world.terminal()) {
      Transition t;
      t.observation = observe(world);
      const Action a = orca_robot_action(world, sc.controller.orca);
      t.action = to_normalized(a, world.robot.v_pref);
      StepResult r = step(std::move(world), to_physical(t.action[0], t.action[1], sc.sim.v_pref),
                          sc.controller);
      world = std::move(r.world);
      t.reward = r.reward;
      t.next_observation = observe(world);
      t.terminal = world.terminal();
      buffer_.push(std::move(t));
    }
  }
}

double QsmTrainer::critic_update(std::span<const Transition* const> batch) {
  const std::size_t n = batch.size();
  const GraphBatch s = observation_batch(batch, false);
  const GraphBatch s_next = observation_batch(batch, true);

  // Bootstrapped target from the target critics at an action sampled by the
  // current policy.
  const std::vector<double> a_next = sample(s_next, noise_);
  std::vector<double> y(n);
  {
    Tape tape(false);
    const Var an = tape.constant(Tensor({n, kActionDim}, a_next));
    Critic& t1 = critics_.get(1, true);
    Critic& t2 = critics_.get(2, true);
    const Var q1 = t1.q(tape, t1.encode(tape, s_next), an);
    const Var q2 = t2.q(tape, t2.encode(tape, s_next), an);
    const Tensor& v1 = tape.value(q1);
    const Tensor& v2 = tape.value(q2);
    const double discount = config_.step_discount();
    for (std::size_t i = 0; i < n; ++i) {
      const double q = std::min(v1[i], v2[i]);
      y[i] = batch[i]->reward + (batch[i]->terminal ? 0.0 : discount * q);
    }
  }

  std::vector<double> actions(n * kActionDim);
  for (std::size_t i = 0; i < n; ++i) {
    actions[2 * i] = batch[i]->action[0];
    actions[2 * i + 1] = batch[i]->action[1];
  }

  double total = 0.0;
  for (int which = 1; which <= 2; ++which) {
    Tape tape;
    Critic& c = critics_.get(which, false);
    const Var q = c.q(tape, c.encode(tape, s), tape.constant(Tensor({n, kActionDim}, actions)));
    const Var diff = tape.sub(q, tape.constant(Tensor({n, 1}, y)));
    const Var loss = tape.mean(tape.mul(diff, diff));
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw TrainingDiverged("critic loss is not finite");
    tape.backward(loss);
    critic_opt_[which - 1]->step();
    total += value;
  }
  return total / 2.0;
}

double QsmTrainer::actor_update(std::span<const Transition* const> batch) {
  const std::size_t n = batch.size();
  std::uniform_int_distribution<int> pick_tau(1, schedule_.steps());
  std::vector<int> taus(n);
  std::vector<double> noisy(n * kActionDim);
  for (std::size_t i = 0; i < n; ++i) {
    taus[i] = pick_tau(rng_);
    const std::vector<double> x = forward_noise(batch[i]->action, schedule_, taus[i], noise_);
    noisy[2 * i] = x[0];
    noisy[2 * i + 1] = x[1];
  }
  return actor_update(observation_batch(batch, false), noisy, taus);
}

std::vector<double> QsmTrainer::score_targets(const GraphBatch& s, std::span<const double> actions) {
  const std::size_t n = s.batch;
  if (actions.size() != n * kActionDim) throw std::invalid_argument("score_targets: action count mismatch");
  // Rows are independent, so the gradient of the batch sum gives every
  // row's gradient.
  Tensor f1, f2;
  {
    Tape enc(false);
    f1 = enc.value(critics_.main[0].encode(enc, s));
    f2 = enc.value(critics_.main[1].encode(enc, s));
  }
  Tape tape;
  const Var a = tape.input(Tensor({n, kActionDim}, std::vector<double>(actions.begin(), actions.end())));
  const Var q1 = critics_.main[0].q(tape, tape.constant(std::move(f1)), a);
  const Var q2 = critics_.main[1].q(tape, tape.constant(std::move(f2)), a);
  const Tensor g = tape.gradient(tape.sum(tape.minimum(q1, q2)), a);
  const double k = config_.score_sign * config_.alpha_qsm;
  std::vector<double> target(n * kActionDim);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = k * g[i];
  return target;
}

double QsmTrainer::actor_update(const GraphBatch& s, std::span<const double> noisy, std::span<const int> taus) {
  const std::size_t n = s.batch;
  const std::vector<double> target = score_targets(s, noisy);
  if (!all_finite(target)) throw TrainingDiverged("critic action gradient is not finite");

  Tape tape;
  const Var x = tape.constant(Tensor({n, kActionDim}, std::vector<double>(noisy.begin(), noisy.end())));
  const Var psi = actor_.score(tape, actor_.encode(tape, s), x, taus);
  const Var diff = tape.sub(psi, tape.constant(Tensor({n, kActionDim}, target)));
  const Var loss = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / static_cast<double>(n));
  const double value = tape.value(loss).item();
  if (!std::isfinite(value)) throw TrainingDiverged("score matching loss is not finite");
  tape.backward(loss);
  actor_opt_->step();
  return value;
}

void QsmTrainer::update_targets() {
  for (int which = 1; which <= 2; ++which) {
    polyak_update(critic_params(false, which), critic_params(true, which), config_.rho);
  }
}

EpisodeMetrics QsmTrainer::explore_episode(int episode, std::uint64_t world_seed) {
  const ScenarioConfig& sc = config_.scenario;
  WorldState world = sc.make(world_seed);
  const double epsilon = config_.epsilon_at(episode);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> box(-1.0, 1.0);

  std::vector<Transition> episode_transitions;
  while (!world.terminal()) {
    Transition t;
    t.observation = observe(world);
    if (unit(rng_) < epsilon) {
      t.action = {box(rng_), box(rng_)};
    } else {
      const std::vector<double> x = sample(GraphBatch::single(t.observation), noise_);
      t.action = {x[0], x[1]};
    }
    StepResult r = step(std::move(world), to_physical(t.action[0], t.action[1], sc.sim.v_pref), sc.controller);
    world = std::move(r.world);
    t.reward = r.reward;
    t.next_observation = observe(world);
    t.terminal = world.terminal();
    episode_transitions.push_back(std::move(t));
  }
  for (auto& t : episode_transitions) buffer_.push(std::move(t));

  EpisodeMetrics m;
  m.episode = episode;
  m.outcome = world.outcome->kind;
  m.success = m.outcome == OutcomeKind::Success;
  m.steps = world.outcome->steps;
  m.discounted_return = world.outcome->discounted_return;
  m.undiscounted_return = world.outcome->undiscounted_return;
  return m;
}

void QsmTrainer::train(std::uint64_t seed, const TrainHooks& hooks) {
  auto emit_checkpoint = [&](int episode) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(episode, checkpoint());
  };
  collect_warm_start(config_.warm_start_episodes, derive_seed(seed, 4, 0));
  emit_checkpoint(0);
  for (int e = 1; e <= config_.episodes; ++e) {
    EpisodeMetrics m = explore_episode(e - 1, derive_seed(seed, 5, static_cast<std::uint64_t>(e)));
    m.episode = e;
    const int updates = config_.gradient_steps > 0 ? config_.gradient_steps : m.steps;
    double critic_sum = 0.0;
    double actor_sum = 0.0;
    try {
      for (int u = 0; u < updates; ++u) {
        const std::vector<const Transition*> batch = buffer_.sample(config_.batch_size, rng_);
        critic_sum += critic_update(batch);
        actor_sum += actor_update(batch);
        update_targets();
      }
    } catch (const TrainingDiverged& err) {
      emit_checkpoint(-1);
      std::ostringstream msg;
      msg << "training diverged at episode " << e << ": " << err.what();
      throw TrainingDiverged(msg.str());
    }
    m.critic_loss = updates > 0 ? critic_sum / updates : 0.0;
    m.qsm_loss = updates > 0 ? actor_sum / updates : 0.0;
    if (hooks.on_episode) hooks.on_episode(m);
    if ((config_.checkpoint_every > 0 && e % config_.checkpoint_every == 0) || e == config_.episodes) {
      emit_checkpoint(e);
    }
  }
}

}  // namespace colson
