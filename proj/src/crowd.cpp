#include "colson/crowd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace colson {

namespace {

constexpr double kEpsilon = 1e-9;

// Directed-line form used by the LP: the permitted side lies to the left of
// `direction` when standing on `point`.
struct Line {
  Vec2 point;
  Vec2 direction;
};

Line to_line(const HalfPlane& h) { return {h.point, {h.normal.y, -h.normal.x}}; }
HalfPlane to_half_plane(const Line& l) { return {l.point, {-l.direction.y, l.direction.x}}; }

bool linear_program1(const std::vector<Line>& lines, std::size_t line_no, double radius,
                     const Vec2& opt_velocity, bool direction_opt, Vec2& result) {
  const Line& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - line.point.squared_norm();
  if (discriminant < 0.0) return false;  // max-speed disc misses the line entirely

  const double sqrt_disc = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_disc;
  double t_right = -dot_product + sqrt_disc;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);
    if (std::abs(denominator) <= kEpsilon) {
      // Parallel lines.
      if (numerator < 0.0) return false;
      continue;
    }
    const double t = numerator / denominator;
    if (denominator >= 0.0) {
      t_right = std::min(t_right, t);
    } else {
      t_left = std::max(t_left, t);
    }
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(opt_velocity, line.direction) > 0.0 ? line.point + line.direction * t_right
                                                     : line.point + line.direction * t_left;
  } else {
    const double t = dot(line.direction, opt_velocity - line.point);
    result = line.point + line.direction * std::clamp(t, t_left, t_right);
  }
  return true;
}

std::size_t linear_program2(const std::vector<Line>& lines, double radius, const Vec2& opt_velocity,
                            bool direction_opt, Vec2& result) {
  if (direction_opt) {
    result = opt_velocity * radius;
  } else if (opt_velocity.squared_norm() > radius * radius) {
    result = normalized(opt_velocity) * radius;
  } else {
    result = opt_velocity;
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > 0.0) {
      const Vec2 previous = result;
      if (!linear_program1(lines, i, radius, opt_velocity, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return lines.size();
}

// Minimizes the largest constraint violation, starting from the first line
// that linear_program2 could not satisfy.
void linear_program3(const std::vector<Line>& lines, std::size_t begin_line, double radius, Vec2& result) {
  double distance = 0.0;
  for (std::size_t i = begin_line; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= distance) continue;

    std::vector<Line> projected;
    projected.reserve(i);
    for (std::size_t j = 0; j < i; ++j) {
      Line line;
      const double determinant = det(lines[i].direction, lines[j].direction);
      if (std::abs(determinant) <= kEpsilon) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) continue;  // same direction
        line.point = (lines[i].point + lines[j].point) * 0.5;
      } else {
        line.point = lines[i].point +
                     lines[i].direction *
                         (det(lines[j].direction, lines[i].point - lines[j].point) / determinant);
      }
      line.direction = normalized(lines[j].direction - lines[i].direction);
      projected.push_back(line);
    }

    const Vec2 previous = result;
    const Vec2 push{-lines[i].direction.y, lines[i].direction.x};
    if (linear_program2(projected, radius, push, true, result) < projected.size()) {
      // Only reachable through floating-point error; keep the last result.
      result = previous;
    }
    distance = det(lines[i].direction, lines[i].point - result);
  }
}

Line orca_line(const AgentState& self, const AgentState& other, double inv_horizon, double inv_step,
               double safety_margin) {
  const Vec2 rel_pos = other.position - self.position;
  const Vec2 rel_vel = self.velocity - other.velocity;
  const double dist_sq = rel_pos.squared_norm();
  const double combined_radius = self.radius + other.radius + safety_margin;
  const double combined_radius_sq = combined_radius * combined_radius;

  Line line;
  Vec2 u;
  if (dist_sq > combined_radius_sq) {
    const Vec2 w = rel_vel - rel_pos * inv_horizon;
    const double w_length_sq = w.squared_norm();
    const double dot1 = dot(w, rel_pos);
    if (dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_length_sq) {
      // Project on the cut-off circle.
      const double w_length = std::sqrt(w_length_sq);
      const Vec2 unit_w = w / w_length;
      line.direction = {unit_w.y, -unit_w.x};
      u = unit_w * (combined_radius * inv_horizon - w_length);
    } else {
      // Project on the nearer leg of the cone.
      const double leg = std::sqrt(dist_sq - combined_radius_sq);
      if (det(rel_pos, w) > 0.0) {
        line.direction = Vec2{rel_pos.x * leg - rel_pos.y * combined_radius,
                              rel_pos.x * combined_radius + rel_pos.y * leg} /
                         dist_sq;
      } else {
        line.direction = -Vec2{rel_pos.x * leg + rel_pos.y * combined_radius,
                               -rel_pos.x * combined_radius + rel_pos.y * leg} /
                         dist_sq;
      }
      u = line.direction * dot(rel_vel, line.direction) - rel_vel;
    }
  } else {
    // Already overlapping: resolve within one time step.
    const Vec2 w = rel_vel - rel_pos * inv_step;
    double w_length = w.norm();
    Vec2 unit_w = w_length > 0.0 ? w / w_length : Vec2{1.0, 0.0};
    line.direction = {unit_w.y, -unit_w.x};
    u = unit_w * (combined_radius * inv_step - w_length);
  }
  line.point = self.velocity + u * 0.5;
  return line;
}

std::vector<Line> orca_lines(const AgentState& self, std::span<const AgentState> neighbors,
                             const OrcaParams& params) {
  std::vector<std::size_t> order;
  const double range_sq = params.neighbor_distance * params.neighbor_distance;
  for (std::size_t k = 0; k < neighbors.size(); ++k) {
    if ((neighbors[k].position - self.position).squared_norm() < range_sq) order.push_back(k);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (neighbors[a].position - self.position).squared_norm() <
           (neighbors[b].position - self.position).squared_norm();
  });
  std::vector<Line> lines;
  lines.reserve(order.size());
  const double inv_horizon = 1.0 / params.time_horizon_agents;
  const double inv_step = 1.0 / params.time_step;
  for (std::size_t k : order) {
    lines.push_back(orca_line(self, neighbors[k], inv_horizon, inv_step, params.safety_margin));
  }
  return lines;
}

Vec2 solve_lines(const std::vector<Line>& lines, double max_speed, const Vec2& preferred) {
  Vec2 result;
  const std::size_t fail = linear_program2(lines, max_speed, preferred, false, result);
  if (fail < lines.size()) linear_program3(lines, fail, max_speed, result);
  return result;
}

}  // namespace

std::vector<HalfPlane> orca_half_planes(const AgentState& self, std::span<const AgentState> neighbors,
                                        const OrcaParams& params) {
  std::vector<HalfPlane> planes;
  for (const Line& l : orca_lines(self, neighbors, params)) planes.push_back(to_half_plane(l));
  return planes;
}

Vec2 solve_half_planes(std::span<const HalfPlane> planes, double max_speed, const Vec2& preferred) {
  std::vector<Line> lines;
  lines.reserve(planes.size());
  for (const auto& h : planes) lines.push_back(to_line(h));
  return solve_lines(lines, max_speed, preferred);
}

Vec2 orca_velocity(const AgentState& self, std::span<const AgentState> neighbors, const Vec2& preferred,
                   const OrcaParams& params) {
  return solve_lines(orca_lines(self, neighbors, params), params.max_speed, preferred);
}

Vec2 social_repulsion(const AgentState& self, const AgentState& other, const SocialForceParams& params) {
  const Vec2 diff = self.position - other.position;
  const double d = diff.norm();
  Vec2 n;
  if (d > 0.0) {
    n = diff / d;
  } else {
    // Coincident centers: push perpendicular to the agent's own heading.
    const Vec2 heading = self.velocity.squared_norm() > 0.0 ? normalized(self.velocity) : Vec2{1.0, 0.0};
    n = {-heading.y, heading.x};
  }
  const double magnitude =
      params.interaction_strength * std::exp((self.radius + other.radius - d) / params.interaction_range);
  return n * magnitude;
}

Vec2 social_force_velocity(const AgentState& self, std::span<const AgentState> neighbors, const Vec2& goal,
                           const SocialForceParams& params, double dt) {
  const Vec2 to_goal = goal - self.position;
  const Vec2 desired = to_goal.norm() > kEpsilon ? normalized(to_goal) * self.v_pref : Vec2{};
  Vec2 accel = (desired - self.velocity) / params.relaxation_time;
  for (const auto& other : neighbors) accel += social_repulsion(self, other, params);
  return clip_norm(self.velocity + accel * dt, params.max_speed);
}

Vec2 preferred_velocity(const Vec2& position, const Vec2& goal, double v_pref) {
  const Vec2 to_goal = goal - position;
  const double dist = to_goal.norm();
  if (dist > v_pref) return to_goal * (v_pref / dist);
  return to_goal;
}

}  // namespace colson
