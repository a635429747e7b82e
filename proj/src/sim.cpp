#include "colson/sim.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace colson {

int SimConfig::max_steps() const { return static_cast<int>(std::ceil(time_limit / dt - 1e-9)); }

std::string to_string(OutcomeKind kind) {
  switch (kind) {
    case OutcomeKind::Success: return "success";
    case OutcomeKind::PedestrianCollision: return "pedestrian_collision";
    case OutcomeKind::WallCollision: return "wall_collision";
    case OutcomeKind::Timeout: return "timeout";
  }
  return "unknown";
}

namespace {

class Fnv1a {
 public:
  void add(double v) { add_bits(std::bit_cast<std::uint64_t>(v)); }
  void add(const Vec2& v) { add(v.x); add(v.y); }
  void add_bits(std::uint64_t bits) {
    for (int k = 0; k < 8; ++k) {
      hash_ ^= (bits >> (8 * k)) & 0xffu;
      hash_ *= 0x100000001b3ull;
    }
  }
  std::uint64_t value() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

}  // namespace

std::uint64_t WorldState::fingerprint() const {
  Fnv1a h;
  h.add_bits(static_cast<std::uint64_t>(scenario));
  h.add_bits(visible ? 1 : 0);
  h.add_bits(static_cast<std::uint64_t>(step_count));
  h.add(robot.position);
  h.add(robot.velocity);
  h.add(robot.goal);
  h.add(robot.heading);
  h.add(robot.radius);
  for (const auto& p : pedestrians) {
    h.add(p.position);
    h.add(p.velocity);
    h.add(p.goal);
    h.add(p.radius);
  }
  for (const auto& r : obstacles.rectangles) {
    h.add(r.lo);
    h.add(r.hi);
  }
  for (const auto& s : obstacles.segments) {
    h.add(s.a);
    h.add(s.b);
  }
  return h.value();
}

Vec2 to_robot_frame_point(const RobotState& robot, const Vec2& p) {
  return rotate(p - robot.position, -robot.heading);
}
Vec2 to_robot_frame_vector(const RobotState& robot, const Vec2& v) { return rotate(v, -robot.heading); }
Vec2 from_robot_frame_point(const RobotState& robot, const Vec2& p) {
  return rotate(p, robot.heading) + robot.position;
}
Vec2 from_robot_frame_vector(const RobotState& robot, const Vec2& v) { return rotate(v, robot.heading); }

std::vector<PedestrianState> pedestrian_states(const WorldState& world) {
  std::vector<PedestrianState> out;
  out.reserve(world.pedestrians.size());
  for (const auto& p : world.pedestrians) {
    out.push_back({to_robot_frame_point(world.robot, p.position), to_robot_frame_vector(world.robot, p.velocity),
                   p.position, p.velocity, p.goal, p.radius, p.v_pref});
  }
  return out;
}

Observation observe(const WorldState& world) {
  Observation obs;
  const RobotState& r = world.robot;
  const Vec2 g = r.goal_relative_position();
  obs.robot = {g.x, g.y, r.velocity.x, r.velocity.y, r.heading};
  obs.pedestrians.reserve(world.pedestrians.size());
  for (const auto& p : world.pedestrians) {
    const Vec2 pos = to_robot_frame_point(r, p.position);
    const Vec2 vel = to_robot_frame_vector(r, p.velocity);
    obs.pedestrians.push_back({pos.x, pos.y, vel.x, vel.y});
  }
  return obs;
}

double min_separation(const RobotState& robot, const std::vector<Pedestrian>& pedestrians) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : pedestrians) {
    best = std::min(best, (p.position - robot.position).norm() - (p.radius + robot.radius));
  }
  return best;
}

double reward(double min_separation, bool at_goal, double discomfort_distance) {
  if (min_separation < 0.0) return -0.25;
  if (min_separation < discomfort_distance) return -0.1 + min_separation / 2.0;
  if (at_goal) return 1.0;
  return 0.0;
}

AgentState robot_agent(const RobotState& robot) {
  return {robot.position, robot.velocity, robot.radius, robot.v_pref};
}

AgentState pedestrian_agent(const Pedestrian& p) { return {p.position, p.velocity, p.radius, p.v_pref}; }

std::vector<AgentState> pedestrian_neighbors(const WorldState& world, std::size_t index) {
  std::vector<AgentState> neighbors;
  neighbors.reserve(world.pedestrians.size());
  for (std::size_t j = 0; j < world.pedestrians.size(); ++j) {
    if (j != index) neighbors.push_back(pedestrian_agent(world.pedestrians[j]));
  }
  if (world.visible) neighbors.push_back(robot_agent(world.robot));
  return neighbors;
}

namespace {

bool pedestrian_arrived(const Pedestrian& p) { return (p.goal - p.position).norm() < p.radius; }

}  // namespace

std::vector<Vec2> pedestrian_velocities(const WorldState& world, const PedestrianController& controller) {
  std::vector<Vec2> velocities(world.pedestrians.size());
  for (std::size_t i = 0; i < world.pedestrians.size(); ++i) {
    const Pedestrian& p = world.pedestrians[i];
    if (pedestrian_arrived(p)) continue;  // holds position
    const auto neighbors = pedestrian_neighbors(world, i);
    const AgentState self = pedestrian_agent(p);
    if (controller.kind == ControllerKind::Orca) {
      OrcaParams params = controller.orca;
      params.max_speed = p.v_pref;
      params.time_step = world.config.dt;
      velocities[i] = orca_velocity(self, neighbors, preferred_velocity(p.position, p.goal, p.v_pref), params);
    } else {
      SocialForceParams params = controller.social_force;
      params.max_speed = p.v_pref;
      velocities[i] = social_force_velocity(self, neighbors, p.goal, params, world.config.dt);
    }
  }
  return velocities;
}

StepResult step(WorldState world, const Action& robot_action, const PedestrianController& controller) {
  if (world.terminal()) throw std::logic_error("step: world is terminal");
  if (!std::isfinite(robot_action.vx) || !std::isfinite(robot_action.vy)) {
    throw std::invalid_argument("step: non-finite action component");
  }
  const double dt = world.config.dt;

  // Every agent reacts to the same pre-step snapshot.
  const std::vector<Vec2> ped_velocities = pedestrian_velocities(world, controller);
  const Vec2 robot_velocity = clip_norm(robot_action.vec(), world.robot.v_pref);

  world.robot.velocity = robot_velocity;
  world.robot.position += robot_velocity * dt;
  for (std::size_t i = 0; i < world.pedestrians.size(); ++i) {
    world.pedestrians[i].velocity = ped_velocities[i];
    world.pedestrians[i].position += ped_velocities[i] * dt;
  }

  const int t = world.step_count;
  world.step_count += 1;
  world.time = world.step_count * dt;

  const double separation = min_separation(world.robot, world.pedestrians);
  const bool at_goal = world.robot.goal_relative_position().norm() <= world.robot.radius;
  const bool hit_wall =
      !world.obstacles.empty() && signed_distance(world.obstacles, world.robot.position) < world.robot.radius;

  double r = reward(separation, at_goal, world.config.discomfort_distance);
  std::optional<OutcomeKind> kind;
  if (separation < 0.0) {
    kind = OutcomeKind::PedestrianCollision;
  } else if (hit_wall) {
    kind = OutcomeKind::WallCollision;
    r = -0.25;
  } else if (at_goal) {
    kind = OutcomeKind::Success;
  } else if (world.step_count >= world.config.max_steps()) {
    kind = OutcomeKind::Timeout;
  }

  world.undiscounted_return += r;
  world.discounted_return += std::pow(world.config.gamma, t * dt * world.robot.v_pref) * r;

  StepResult result;
  result.reward = r;
  if (kind) {
    EpisodeOutcome outcome;
    outcome.kind = *kind;
    outcome.steps = world.step_count;
    outcome.nav_time = world.step_count * dt;
    outcome.undiscounted_return = world.undiscounted_return;
    outcome.discounted_return = world.discounted_return;
    world.outcome = outcome;
    result.outcome = outcome;
  }
  result.world = std::move(world);
  return result;
}

namespace {

constexpr int kMaxPlacementAttempts = 1000;

RobotState make_robot(const SimConfig& config, const Vec2& start, const Vec2& goal) {
  RobotState robot;
  robot.position = start;
  robot.goal = goal;
  robot.radius = config.agent_radius;
  robot.v_pref = config.v_pref;
  const Vec2 d = goal - start;
  robot.heading = std::atan2(d.y, d.x);
  return robot;
}

}  // namespace

WorldState make_circle_crossing(int n_pedestrians, std::uint64_t seed, bool visible, const SimConfig& config) {
  if (n_pedestrians < 0) throw std::invalid_argument("make_circle_crossing: negative pedestrian count");
  WorldState world;
  world.config = config;
  world.scenario = ScenarioKind::CircleCrossing;
  world.visible = visible;
  const double R = config.circle_radius;
  world.robot = make_robot(config, {0.0, -R}, {0.0, R});

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < n_pedestrians; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const double angle = unit(rng) * 2.0 * std::numbers::pi;
      const double noise_x = (unit(rng) - 0.5) * config.v_pref;
      const double noise_y = (unit(rng) - 0.5) * config.v_pref;
      const Vec2 pos{R * std::cos(angle) + noise_x, R * std::sin(angle) + noise_y};
      const Vec2 goal = -pos;
      const double r = config.agent_radius;

      auto clear_of = [&](const Vec2& other_pos, const Vec2& other_goal, double other_r) {
        const double min_dist = r + other_r + config.discomfort_distance;
        return (pos - other_pos).norm() >= min_dist && (goal - other_goal).norm() >= min_dist;
      };
      bool ok = clear_of(world.robot.position, world.robot.goal, world.robot.radius);
      for (const auto& p : world.pedestrians) ok = ok && clear_of(p.position, p.goal, p.radius);
      if (!ok) continue;

      Pedestrian p;
      p.position = pos;
      p.goal = goal;
      p.radius = r;
      p.v_pref = config.v_pref;
      world.pedestrians.push_back(p);
      placed = true;
    }
    if (!placed) throw std::runtime_error("make_circle_crossing: could not place pedestrians without overlap");
  }
  return world;
}

WorldState make_wall_scenario(std::uint64_t seed, bool visible, const SimConfig& config) {
  WorldState world;
  world.config = config;
  world.scenario = ScenarioKind::Wall;
  world.visible = visible;

  const double half_w = config.corridor_width / 2.0;
  const double half_l = config.corridor_length / 2.0;
  const double th = config.wall_thickness;
  world.obstacles.rectangles.push_back({{-half_w - th, -half_l}, {-half_w, half_l}});
  world.obstacles.rectangles.push_back({{half_w, -half_l}, {half_w + th, half_l}});

  world.robot = make_robot(config, {0.0, -half_l + 1.0}, {0.0, half_l - 1.0});

  // Three oncoming pedestrians in loose single file along the centerline.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double rows[3] = {half_l - 3.5, half_l - 2.5, half_l - 1.5};
  for (double row : rows) {
    Pedestrian p;
    p.radius = config.agent_radius;
    p.v_pref = config.v_pref;
    p.position = {0.3 * jitter(rng), row + 0.15 * jitter(rng)};
    p.goal = {p.position.x, -half_l - 1.0};
    p.velocity = normalized(p.goal - p.position) * p.v_pref;
    world.pedestrians.push_back(p);
  }
  return world;
}

}  // namespace colson
