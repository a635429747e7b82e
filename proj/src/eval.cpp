#include "colson/eval.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <exception>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "colson/seeding.hpp"

namespace colson {

void RandomPolicy::reset(std::uint64_t episode_seed) { rng_.seed(derive_seed(episode_seed, 6, 0)); }

Action RandomPolicy::act(const WorldState& world) {
  std::uniform_real_distribution<double> box(-1.0, 1.0);
  const double x = box(rng_);
  const double y = box(rng_);
  return to_physical(x, y, world.robot.v_pref);
}

Action StraightPolicy::act(const WorldState& world) {
  const Vec2 v = normalized(world.robot.goal_relative_position()) * world.robot.v_pref;
  return {v.x, v.y};
}

std::string to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::Plain:
      return "plain";
    case SamplingMode::Smoothed:
      return "smooth";
    case SamplingMode::ObstacleGuided:
      return "obstacle";
  }
  return "?";
}

SamplingMode parse_sampling_mode(const std::string& text) {
  if (text == "plain") return SamplingMode::Plain;
  if (text == "smooth" || text == "smoothed") return SamplingMode::Smoothed;
  if (text == "obstacle" || text == "obstacle_guided") return SamplingMode::ObstacleGuided;
  throw std::invalid_argument("unknown sampling mode '" + text + "' (expected plain, smooth or obstacle)");
}

DiffusionPolicy::DiffusionPolicy(ScoreNetwork actor, DiffusionPolicyConfig config)
    : actor_(std::move(actor)), config_(std::move(config)) {
  if (!config_.guidance.valid() && config_.mode == SamplingMode::ObstacleGuided) {
    throw std::invalid_argument("DiffusionPolicy: invalid guidance configuration");
  }
  if (config_.smoothing_depth < 0 || config_.smoothing_depth > config_.schedule.steps()) {
    throw std::invalid_argument("DiffusionPolicy: smoothing depth outside [0, T]");
  }
}

DiffusionPolicy DiffusionPolicy::with_mode(SamplingMode mode) const {
  DiffusionPolicy p = *this;
  p.config_.mode = mode;
  return p;
}

void DiffusionPolicy::reset(std::uint64_t episode_seed) {
  noise_ = NoiseSource(derive_seed(episode_seed, 6, 0));
  previous_.reset();
}

Action DiffusionPolicy::act(const WorldState& world) {
  const GraphBatch batch = GraphBatch::single(observe(world));
  const ScoreFn score = network_score(actor_, batch);
  std::array<double, 2> x{};
  switch (config_.mode) {
    case SamplingMode::Plain: {
      const auto s = sample_actions(score, 1, config_.schedule, noise_, config_.rule);
      x = {s[0], s[1]};
      break;
    }
    case SamplingMode::Smoothed:
      if (previous_) {
        x = sample_action_smoothed(score, *previous_, config_.schedule, config_.smoothing_depth, noise_,
                                   config_.rule);
      } else {
        const auto s = sample_actions(score, 1, config_.schedule, noise_, config_.rule);
        x = {s[0], s[1]};
      }
      break;
    case SamplingMode::ObstacleGuided:
      x = sample_action_obstacle_guided(score, world.robot.position, world.obstacles, config_.schedule,
                                        config_.guidance, world.robot.v_pref, noise_, config_.rule);
      break;
  }
  previous_ = x;
  return to_physical(x[0], x[1], world.robot.v_pref);
}

double smoothness(std::span<const double> channel, double fs) {
  const std::size_t n = channel.size();
  if (n < 2) throw std::invalid_argument("smoothness: need at least two samples");
  double total = 0.0;
  for (std::size_t i = 0; i <= n / 2; ++i) {
    std::complex<double> x = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>(i * k % n) / static_cast<double>(n);
      x += channel[k] * std::polar(1.0, phase);
    }
    const bool edge = i == 0 || 2 * i == n;
    const double amplitude = (edge ? 1.0 : 2.0) * std::abs(x) / static_cast<double>(n);
    const double freq = static_cast<double>(i) * fs / static_cast<double>(n);
    total += amplitude * freq;
  }
  return 2.0 / (static_cast<double>(n) * fs) * total;
}

double smoothness(std::span<const Action> actions, double dt) {
  std::vector<double> vx, vy;
  for (const Action& a : actions) {
    vx.push_back(a.vx);
    vy.push_back(a.vy);
  }
  return smoothness(vx, 1.0 / dt) + smoothness(vy, 1.0 / dt);
}

std::string describe(const ScenarioConfig& scenario) {
  std::ostringstream out;
  if (scenario.kind == ScenarioKind::Wall) {
    out << "wall";
  } else {
    out << "circle_crossing peds=" << scenario.pedestrians;
  }
  out << (scenario.visible ? " visible" : " invisible");
  out << (scenario.controller.kind == ControllerKind::Orca ? " orca" : " social_force");
  return out.str();
}

EpisodeRecord run_episode(Policy& policy, const ScenarioConfig& scenario, std::uint64_t seed, EpisodeTrace* trace) {
  WorldState world = scenario.make(seed);
  EpisodeRecord rec;
  rec.seed = seed;
  rec.world_fingerprint = world.fingerprint();
  policy.reset(seed);

  auto snapshot = [&](const WorldState& w) {
    if (!trace) return;
    trace->robot.push_back(w.robot.position);
    std::vector<Vec2> peds;
    for (const auto& p : w.pedestrians) peds.push_back(p.position);
    trace->pedestrians.push_back(std::move(peds));
  };
  snapshot(world);

  std::vector<Action> executed;
  while (!world.terminal()) {
    const Action a = policy.act(world);
    const Vec2 v = clip_norm(a.vec(), world.robot.v_pref);
    executed.push_back({v.x, v.y});
    StepResult r = step(std::move(world), a, scenario.controller);
    world = std::move(r.world);
    snapshot(world);
  }
  if (trace) trace->actions = executed;

  rec.outcome = world.outcome->kind;
  rec.steps = world.outcome->steps;
  rec.nav_time = world.outcome->nav_time;
  rec.discounted_return = world.outcome->discounted_return;
  rec.undiscounted_return = world.outcome->undiscounted_return;
  if (executed.size() >= 2) rec.smoothness = smoothness(executed, scenario.sim.dt);
  return rec;
}

namespace {

std::string hex_fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

EvalReport aggregate(std::string policy, const ScenarioConfig& scenario, std::uint64_t base_seed,
                     std::vector<EpisodeRecord> records) {
  EvalReport r;
  r.policy = std::move(policy);
  r.scenario = describe(scenario);
  r.episodes = static_cast<int>(records.size());
  r.base_seed = base_seed;
  std::ostringstream key;
  key << r.policy << '|' << r.scenario << '|' << r.episodes << '|' << base_seed << '|' << scenario.sim.dt << '|'
      << scenario.sim.time_limit;
  r.fingerprint = hex_fingerprint(key.str());
  if (records.empty()) return r;

  int success = 0, ped = 0, wall = 0, timeout = 0, smooth_n = 0;
  double exec = 0.0, ret = 0.0, uret = 0.0, smooth = 0.0;
  for (const auto& e : records) {
    switch (e.outcome) {
      case OutcomeKind::Success:
        ++success;
        exec += e.nav_time;
        break;
      case OutcomeKind::PedestrianCollision:
        ++ped;
        break;
      case OutcomeKind::WallCollision:
        ++wall;
        break;
      case OutcomeKind::Timeout:
        ++timeout;
        break;
    }
    ret += e.discounted_return;
    uret += e.undiscounted_return;
    if (e.smoothness) {
      smooth += *e.smoothness;
      ++smooth_n;
    }
  }
  const double n = static_cast<double>(records.size());
  r.success_rate = 100.0 * success / n;
  r.pedestrian_collision_rate = 100.0 * ped / n;
  r.wall_collision_rate = 100.0 * wall / n;
  r.collision_rate = 100.0 * (ped + wall) / n;
  r.timeout_rate = 100.0 * timeout / n;
  if (success > 0) r.mean_exec_time = exec / success;
  r.mean_return = ret / n;
  r.mean_undiscounted_return = uret / n;
  if (smooth_n > 0) r.smoothness = 1e3 * smooth / smooth_n;
  r.records = std::move(records);
  return r;
}

EvalResult evaluate_full(const Policy& policy, const ScenarioConfig& scenario, int n_episodes,
                         std::uint64_t base_seed, const EvalOptions& options) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate: n_episodes must be at least 1");
  const std::size_t n = static_cast<std::size_t>(n_episodes);
  const std::size_t jobs = static_cast<std::size_t>(std::clamp(options.jobs, 1, n_episodes));
  std::vector<EpisodeRecord> records(n);
  std::vector<EpisodeTrace> traces(options.record_traces ? n : 0);
  std::vector<std::exception_ptr> errors(jobs);

  auto work = [&](std::size_t worker) {
    try {
      std::unique_ptr<Policy> local = policy.clone();
      for (std::size_t i = worker; i < n; i += jobs) {
        records[i] = run_episode(*local, scenario, base_seed + i, options.record_traces ? &traces[i] : nullptr);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < jobs; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EvalResult out;
  out.report = aggregate(policy.name(), scenario, base_seed, std::move(records));
  out.traces = std::move(traces);
  return out;
}

EvalReport evaluate(const Policy& policy, const ScenarioConfig& scenario, int n_episodes, std::uint64_t base_seed,
                    const EvalOptions& options) {
  EvalOptions o = options;
  o.record_traces = false;
  return evaluate_full(policy, scenario, n_episodes, base_seed, o).report;
}

std::vector<EvalReport> sweep_pedestrians(const Policy& policy, const ScenarioConfig& scenario,
                                          std::span<const int> counts, int n_episodes, std::uint64_t base_seed,
                                          const EvalOptions& options) {
  std::vector<EvalReport> out;
  for (int count : counts) {
    ScenarioConfig sc = scenario;
    sc.kind = ScenarioKind::CircleCrossing;
    sc.pedestrians = count;
    out.push_back(evaluate(policy, sc, n_episodes, base_seed, options));
  }
  return out;
}

GuidanceComparison compare_guidance(const DiffusionPolicy& policy, const ScenarioConfig& scenario,
                                    std::span<const SamplingMode> modes, int n_episodes, std::uint64_t base_seed,
                                    const EvalOptions& options) {
  GuidanceComparison out;
  for (SamplingMode mode : modes) {
    out.modes.push_back(mode);
    out.reports.push_back(evaluate(policy.with_mode(mode), scenario, n_episodes, base_seed, options));
  }
  for (std::size_t m = 1; m < out.reports.size(); ++m) {
    const auto& a = out.reports[0].records;
    const auto& b = out.reports[m].records;
    if (a.size() != b.size()) {
      out.paired = false;
      continue;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].world_fingerprint != b[i].world_fingerprint) out.paired = false;
    }
  }
  return out;
}

}  // namespace colson
