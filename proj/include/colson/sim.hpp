#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "colson/crowd.hpp"
#include "colson/obstacles.hpp"
#include "colson/vec2.hpp"

namespace colson {

struct SimConfig {
  double dt = 0.25;
  double time_limit = 25.0;
  double circle_radius = 4.0;
  double agent_radius = 0.3;
  double v_pref = 1.0;
  double discomfort_distance = 0.2;
  double gamma = 0.9;  // discount base for the reported return
  // Wall scenario geometry.
  double corridor_width = 3.0;
  double corridor_length = 10.0;
  double wall_thickness = 0.3;

  int max_steps() const;
};

// Holonomic robot. Heading is set at spawn (facing the goal) and stays fixed:
// velocity commands are absolute and never rotate the body.
struct RobotState {
  Vec2 position;
  Vec2 velocity;
  Vec2 goal;
  double heading = 0.0;
  double radius = 0.3;
  double v_pref = 1.0;

  Vec2 goal_relative_position() const { return goal - position; }
};

struct Pedestrian {
  Vec2 position;
  Vec2 velocity;
  Vec2 goal;
  double radius = 0.3;
  double v_pref = 1.0;
};

// A pedestrian as the policy perceives it: expressed in the robot frame.
struct PedestrianState {
  Vec2 position_robot_frame;
  Vec2 velocity_robot_frame;
  Vec2 absolute_position;
  Vec2 absolute_velocity;
  Vec2 goal;
  double radius = 0.3;
  double v_pref = 1.0;
};

struct Action {
  double vx = 0.0;
  double vy = 0.0;

  Vec2 vec() const { return {vx, vy}; }
  bool operator==(const Action&) const = default;
};

enum class OutcomeKind { Success, PedestrianCollision, WallCollision, Timeout };

std::string to_string(OutcomeKind kind);

struct EpisodeOutcome {
  OutcomeKind kind = OutcomeKind::Timeout;
  int steps = 0;
  double nav_time = 0.0;
  double undiscounted_return = 0.0;
  double discounted_return = 0.0;
};

enum class ScenarioKind { CircleCrossing, Wall };

struct WorldState {
  SimConfig config;
  ScenarioKind scenario = ScenarioKind::CircleCrossing;
  RobotState robot;
  std::vector<Pedestrian> pedestrians;
  ObstacleMap obstacles;
  bool visible = true;
  int step_count = 0;
  double time = 0.0;
  double undiscounted_return = 0.0;
  double discounted_return = 0.0;
  std::optional<EpisodeOutcome> outcome;

  bool terminal() const { return outcome.has_value(); }
  // FNV-1a over the initial-condition-relevant state; equal worlds hash equal.
  std::uint64_t fingerprint() const;
};

// Robot features: goal-relative position, velocity, heading.
using RobotObservation = std::array<double, 5>;
// Pedestrian features: robot-frame position, robot-frame velocity.
using PedestrianObservation = std::array<double, 4>;

struct Observation {
  RobotObservation robot{};
  std::vector<PedestrianObservation> pedestrians;
};

// Rigid transforms between the world and the robot frame.
Vec2 to_robot_frame_point(const RobotState& robot, const Vec2& p);
Vec2 to_robot_frame_vector(const RobotState& robot, const Vec2& v);
Vec2 from_robot_frame_point(const RobotState& robot, const Vec2& p);
Vec2 from_robot_frame_vector(const RobotState& robot, const Vec2& v);

std::vector<PedestrianState> pedestrian_states(const WorldState& world);
Observation observe(const WorldState& world);

// Minimum over pedestrians of (center distance - radii sum); +inf without
// pedestrians.
double min_separation(const RobotState& robot, const std::vector<Pedestrian>& pedestrians);

// Piecewise reward, branches checked in order: collision, discomfort band,
// goal, default.
double reward(double min_separation, bool at_goal, double discomfort_distance = 0.2);

enum class ControllerKind { Orca, SocialForce };

// Which model drives the pedestrians.
struct PedestrianController {
  ControllerKind kind = ControllerKind::Orca;
  OrcaParams orca;
  SocialForceParams social_force;
};

struct StepResult {
  WorldState world;
  double reward = 0.0;
  std::optional<EpisodeOutcome> outcome;  // set when the step ended the episode
};

// Clips the action to the robot's speed disc, advances every agent
// synchronously and evaluates reward and termination on the new positions.
// Throws std::invalid_argument on a non-finite action and std::logic_error on
// a terminal world.
StepResult step(WorldState world, const Action& robot_action, const PedestrianController& controller);

// Velocities the pedestrians would take from `world` this step.
std::vector<Vec2> pedestrian_velocities(const WorldState& world, const PedestrianController& controller);

// Neighbor list a pedestrian's controller perceives (robot only if visible).
std::vector<AgentState> pedestrian_neighbors(const WorldState& world, std::size_t index);

AgentState robot_agent(const RobotState& robot);
AgentState pedestrian_agent(const Pedestrian& p);

WorldState make_circle_crossing(int n_pedestrians, std::uint64_t seed, bool visible,
                                const SimConfig& config = {});
WorldState make_wall_scenario(std::uint64_t seed, bool visible = true, const SimConfig& config = {});

}  // namespace colson
