#pragma once

#include <span>
#include <vector>

#include "colson/vec2.hpp"

namespace colson {

// Kinematic snapshot of a disc agent as seen by a velocity controller.
struct AgentState {
  Vec2 position;
  Vec2 velocity;
  double radius = 0.3;
  double v_pref = 1.0;
};

struct OrcaParams {
  double time_horizon_agents = 5.0;
  double neighbor_distance = 10.0;
  double max_speed = 1.0;
  double safety_margin = 0.0;
  // Simulation step; only used to resolve already-overlapping pairs.
  double time_step = 0.25;

  bool valid() const {
    return time_horizon_agents > 0.0 && neighbor_distance > 0.0 && max_speed > 0.0 &&
           safety_margin >= 0.0 && time_step > 0.0;
  }
};

// Permitted velocities satisfy dot(v - point, normal) >= 0.
struct HalfPlane {
  Vec2 point;
  Vec2 normal;
};

// ORCA half-planes induced on `self` by each neighbor within range.
std::vector<HalfPlane> orca_half_planes(const AgentState& self, std::span<const AgentState> neighbors,
                                        const OrcaParams& params);

// Velocity closest to `preferred` inside every ORCA half-plane and the
// max-speed disc; when the constraints are infeasible, the velocity that
// minimizes the largest penetration.
Vec2 orca_velocity(const AgentState& self, std::span<const AgentState> neighbors,
                   const Vec2& preferred, const OrcaParams& params);

// Incremental 2D linear program over half-planes inside a disc. Exposed for
// testing; `orca_velocity` is the normal entry point.
Vec2 solve_half_planes(std::span<const HalfPlane> planes, double max_speed, const Vec2& preferred);

struct SocialForceParams {
  double relaxation_time = 0.5;
  double interaction_strength = 2.0;  // A [m/s^2]
  double interaction_range = 0.3;     // B [m]
  double max_speed = 1.0;

  bool valid() const {
    return relaxation_time > 0.0 && interaction_strength > 0.0 && interaction_range > 0.0 &&
           max_speed > 0.0;
  }
};

// Repulsive acceleration exerted on `self` by `other`.
Vec2 social_repulsion(const AgentState& self, const AgentState& other, const SocialForceParams& params);

Vec2 social_force_velocity(const AgentState& self, std::span<const AgentState> neighbors,
                           const Vec2& goal, const SocialForceParams& params, double dt);

// Goal-seeking preferred velocity: full speed toward the goal, shortened when
// the goal is nearer than one second of travel.
Vec2 preferred_velocity(const Vec2& position, const Vec2& goal, double v_pref);

}  // namespace colson
