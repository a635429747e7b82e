#include "colson/obstacles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace colson {

namespace {

struct Candidate {
  double signed_dist = std::numeric_limits<double>::infinity();
  Vec2 nearest;
  Vec2 normal;
};

Candidate query_segment(const Segment& s, const Vec2& p) {
  const Vec2 ab = s.b - s.a;
  const double len2 = ab.squared_norm();
  double t = len2 > 0.0 ? dot(p - s.a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  Candidate c;
  c.nearest = s.a + ab * t;
  const Vec2 d = p - c.nearest;
  c.signed_dist = d.norm();
  if (c.signed_dist > 0.0) {
    c.normal = d / c.signed_dist;
  } else if (len2 > 0.0) {
    // On the segment: left-hand normal, deterministic.
    c.normal = normalized(Vec2{-ab.y, ab.x});
  } else {
    c.normal = Vec2{1.0, 0.0};
  }
  return c;
}

Candidate query_rect(const Rect& r, const Vec2& p) {
  Candidate c;
  const bool in_x = p.x >= r.lo.x && p.x <= r.hi.x;
  const bool in_y = p.y >= r.lo.y && p.y <= r.hi.y;
  if (!(in_x && in_y)) {
    c.nearest = {std::clamp(p.x, r.lo.x, r.hi.x), std::clamp(p.y, r.lo.y, r.hi.y)};
    const Vec2 d = p - c.nearest;
    c.signed_dist = d.norm();
    c.normal = d / c.signed_dist;
    return c;
  }
  // Inside or on the boundary: nearest face wins, ties go to the first face
  // in the order left, right, bottom, top.
  const double face_dist[4] = {p.x - r.lo.x, r.hi.x - p.x, p.y - r.lo.y, r.hi.y - p.y};
  const Vec2 face_normal[4] = {{-1.0, 0.0}, {1.0, 0.0}, {0.0, -1.0}, {0.0, 1.0}};
  int best = 0;
  for (int k = 1; k < 4; ++k) {
    if (face_dist[k] < face_dist[best]) best = k;
  }
  c.signed_dist = -face_dist[best];
  c.normal = face_normal[best];
  c.nearest = p + c.normal * face_dist[best];
  if (face_dist[best] == 0.0) {
    // Exactly on the boundary. At a corner, average the two face normals.
    Vec2 n;
    for (int k = 0; k < 4; ++k) {
      if (face_dist[k] == 0.0) n += face_normal[k];
    }
    c.normal = normalized(n);
    c.signed_dist = 0.0;
  }
  return c;
}

bool better(const Candidate& c, const Candidate& best) { return c.signed_dist < best.signed_dist; }

Candidate nearest_candidate(const ObstacleMap& map, const Vec2& p) {
  Candidate best;
  for (const auto& r : map.rectangles) {
    const Candidate c = query_rect(r, p);
    if (better(c, best)) best = c;
  }
  for (const auto& s : map.segments) {
    const Candidate c = query_segment(s, p);
    if (better(c, best)) best = c;
  }
  return best;
}

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  auto orient = [](const Vec2& a, const Vec2& b, const Vec2& c) { return det(b - a, c - a); };
  auto on_seg = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
  };
  const double d1 = orient(q1, q2, p1);
  const double d2 = orient(q1, q2, p2);
  const double d3 = orient(p1, p2, q1);
  const double d4 = orient(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_seg(q1, q2, p1)) return true;
  if (d2 == 0 && on_seg(q1, q2, p2)) return true;
  if (d3 == 0 && on_seg(p1, p2, q1)) return true;
  if (d4 == 0 && on_seg(p1, p2, q2)) return true;
  return false;
}

bool point_in_rect(const Rect& r, const Vec2& p) {
  return p.x >= r.lo.x && p.x <= r.hi.x && p.y >= r.lo.y && p.y <= r.hi.y;
}

}  // namespace

ObstacleQuery obstacle_query(const ObstacleMap& map, const Vec2& point) {
  ObstacleQuery q;
  if (map.empty()) return q;
  const Candidate c = nearest_candidate(map, point);
  q.found = true;
  q.nearest = c.nearest;
  q.outward_normal = c.normal;
  q.inside = c.signed_dist < 0.0;
  q.difference = q.inside ? c.nearest - point : point - c.nearest;
  return q;
}

double signed_distance(const ObstacleMap& map, const Vec2& point) {
  return nearest_candidate(map, point).signed_dist;
}

bool segment_hits_obstacles(const ObstacleMap& map, const Vec2& p, const Vec2& q) {
  for (const auto& s : map.segments) {
    if (segments_intersect(p, q, s.a, s.b)) return true;
  }
  for (const auto& r : map.rectangles) {
    if (point_in_rect(r, p) || point_in_rect(r, q)) return true;
    const Vec2 c[4] = {r.lo, {r.hi.x, r.lo.y}, r.hi, {r.lo.x, r.hi.y}};
    for (int k = 0; k < 4; ++k) {
      if (segments_intersect(p, q, c[k], c[(k + 1) % 4])) return true;
    }
  }
  return false;
}

}  // namespace colson
