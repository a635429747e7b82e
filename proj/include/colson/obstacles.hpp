#pragma once

#include <vector>

#include "colson/vec2.hpp"

namespace colson {

struct Segment {
  Vec2 a;
  Vec2 b;
};

// Axis-aligned box, lo.x <= hi.x and lo.y <= hi.y.
struct Rect {
  Vec2 lo;
  Vec2 hi;
};

struct ObstacleMap {
  std::vector<Segment> segments;
  std::vector<Rect> rectangles;

  bool empty() const { return segments.empty() && rectangles.empty(); }
};

// Result of a nearest-boundary query.
//
// `difference` points from the nearest boundary point toward the query point
// when the query is outside every obstacle, and from the query point toward
// the nearest boundary point when it is inside a rectangle. Either way,
// following it moves away from (or out of) the obstacle, and its length is
// the unsigned distance to the boundary. Boundary points count as outside.
struct ObstacleQuery {
  bool found = false;  // false for an empty map
  Vec2 difference;
  bool inside = false;
  Vec2 nearest;         // nearest boundary point
  Vec2 outward_normal;  // unit outward normal at `nearest`
};

ObstacleQuery obstacle_query(const ObstacleMap& map, const Vec2& point);

// Distance to the nearest boundary, negative inside rectangles. Returns
// +infinity on an empty map.
double signed_distance(const ObstacleMap& map, const Vec2& point);

// True when the closed segment [p, q] touches any obstacle.
bool segment_hits_obstacles(const ObstacleMap& map, const Vec2& p, const Vec2& q);

}  // namespace colson
