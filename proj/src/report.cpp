#include "colson/report.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

namespace colson {

using nlohmann::ordered_json;

namespace {

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fixed_or_dash(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "-"; }

ordered_json point(const Vec2& p) { return ordered_json::array({p.x, p.y}); }

Vec2 read_point(const ordered_json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw std::invalid_argument("expected a point [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

ordered_json report_json(const EvalReport& r, bool include_records) {
  ordered_json j;
  j["policy"] = r.policy;
  j["scenario"] = r.scenario;
  j["episodes"] = r.episodes;
  j["base_seed"] = r.base_seed;
  j["success_rate"] = r.success_rate;
  j["collision_rate"] = r.collision_rate;
  j["col_p"] = r.pedestrian_collision_rate;
  j["col_w"] = r.wall_collision_rate;
  j["timeout_rate"] = r.timeout_rate;
  j["mean_exec_time"] = optional_number(r.mean_exec_time);
  j["mean_return"] = r.mean_return;
  j["mean_undiscounted_return"] = r.mean_undiscounted_return;
  j["smoothness_x1e3"] = optional_number(r.smoothness);
  j["fingerprint"] = r.fingerprint;
  if (include_records) {
    ordered_json rows = ordered_json::array();
    for (const auto& e : r.records) {
      ordered_json row;
      row["seed"] = e.seed;
      row["world"] = e.world_fingerprint;
      row["outcome"] = to_string(e.outcome);
      row["steps"] = e.steps;
      row["nav_time"] = e.nav_time;
      row["return"] = e.discounted_return;
      row["undiscounted_return"] = e.undiscounted_return;
      row["smoothness"] = optional_number(e.smoothness);
      rows.push_back(std::move(row));
    }
    j["records"] = std::move(rows);
  }
  return j;
}

std::string report_table(std::span<const std::pair<std::string, EvalReport>> rows) {
  const std::vector<std::string> header{"Method", "Success", "Col-P", "Col-W", "Timeout", "Time", "Return",
                                        "Smooth"};
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& [label, r] : rows) {
    cells.push_back({label, fixed(r.success_rate, 2), fixed(r.pedestrian_collision_rate, 2),
                     fixed(r.wall_collision_rate, 2), fixed(r.timeout_rate, 2), fixed_or_dash(r.mean_exec_time, 2),
                     fixed(r.mean_return, 4), fixed_or_dash(r.smoothness, 2)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& s = cells[r][c];
      if (c == 0) {
        out << s << std::string(width[c] - s.size(), ' ');
      } else {
        out << "  " << std::string(width[c] - s.size(), ' ') << s;
      }
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

std::string sweep_plot_data(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "# peds success collision timeout exec_time\n";
  for (const auto& r : reports) {
    // The scenario string carries the count as "peds=N".
    const auto at = r.scenario.find("peds=");
    const std::string peds =
        at == std::string::npos ? "0" : r.scenario.substr(at + 5, r.scenario.find(' ', at) - at - 5);
    out << peds << ' ' << fixed(r.success_rate, 4) << ' ' << fixed(r.collision_rate, 4) << ' '
        << fixed(r.timeout_rate, 4) << ' ' << fixed_or_dash(r.mean_exec_time, 4) << '\n';
  }
  return out.str();
}

TraceLog make_trace_log(const ScenarioConfig& scenario, const EpisodeRecord& record, const EpisodeTrace& trace) {
  const WorldState w = scenario.make(record.seed);
  TraceLog log;
  log.seed = record.seed;
  log.scenario = describe(scenario);
  log.outcome = to_string(record.outcome);
  log.dt = w.config.dt;
  log.robot_radius = w.robot.radius;
  log.pedestrian_radius = w.config.agent_radius;
  log.goal = w.robot.goal;
  log.obstacles = w.obstacles;
  log.robot = trace.robot;
  log.pedestrians = trace.pedestrians;
  log.actions = trace.actions;
  return log;
}

void write_trace_log(std::ostream& out, const TraceLog& log) {
  ordered_json h;
  h["kind"] = "episode";
  h["seed"] = log.seed;
  h["scenario"] = log.scenario;
  h["outcome"] = log.outcome;
  h["dt"] = log.dt;
  h["robot_radius"] = log.robot_radius;
  h["pedestrian_radius"] = log.pedestrian_radius;
  h["goal"] = point(log.goal);
  ordered_json rects = ordered_json::array();
  for (const auto& r : log.obstacles.rectangles) rects.push_back({r.lo.x, r.lo.y, r.hi.x, r.hi.y});
  h["walls"] = std::move(rects);
  ordered_json segs = ordered_json::array();
  for (const auto& s : log.obstacles.segments) segs.push_back({s.a.x, s.a.y, s.b.x, s.b.y});
  h["segments"] = std::move(segs);
  out << h.dump() << '\n';
  for (std::size_t t = 0; t < log.robot.size(); ++t) {
    ordered_json s;
    s["kind"] = "state";
    s["t"] = t;
    s["robot"] = point(log.robot[t]);
    ordered_json peds = ordered_json::array();
    if (t < log.pedestrians.size()) {
      for (const auto& p : log.pedestrians[t]) peds.push_back(point(p));
    }
    s["peds"] = std::move(peds);
    if (t < log.actions.size()) s["action"] = {log.actions[t].vx, log.actions[t].vy};
    out << s.dump() << '\n';
  }
}

std::vector<TraceLog> read_trace_logs(std::istream& in) {
  std::vector<TraceLog> logs;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const ordered_json j = ordered_json::parse(text);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "episode") {
        TraceLog log;
        log.seed = j.at("seed").get<std::uint64_t>();
        log.scenario = j.at("scenario").get<std::string>();
        log.outcome = j.at("outcome").get<std::string>();
        log.dt = j.at("dt").get<double>();
        log.robot_radius = j.at("robot_radius").get<double>();
        log.pedestrian_radius = j.at("pedestrian_radius").get<double>();
        log.goal = read_point(j.at("goal"));
        for (const auto& r : j.at("walls")) {
          const auto v = r.get<std::vector<double>>();
          if (v.size() != 4) throw std::invalid_argument("wall needs 4 numbers");
          log.obstacles.rectangles.push_back({{v[0], v[1]}, {v[2], v[3]}});
        }
        for (const auto& s : j.at("segments")) {
          const auto v = s.get<std::vector<double>>();
          if (v.size() != 4) throw std::invalid_argument("segment needs 4 numbers");
          log.obstacles.segments.push_back({{v[0], v[1]}, {v[2], v[3]}});
        }
        logs.push_back(std::move(log));
      } else if (kind == "state") {
        if (logs.empty()) throw std::invalid_argument("state line before any episode header");
        TraceLog& log = logs.back();
        log.robot.push_back(read_point(j.at("robot")));
        std::vector<Vec2> peds;
        for (const auto& p : j.at("peds")) peds.push_back(read_point(p));
        log.pedestrians.push_back(std::move(peds));
        if (j.contains("action")) {
          const Vec2 a = read_point(j.at("action"));
          log.actions.push_back({a.x, a.y});
        }
      } else {
        throw std::invalid_argument("unknown record kind '" + kind + "'");
      }
    } catch (const TraceParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw TraceParseError(line, e.what());
    }
  }
  return logs;
}

namespace {

struct Frame {
  double min_x, min_y, max_x, max_y;
  double scale = 50.0;
  double x(double v) const { return (v - min_x) * scale; }
  double y(double v) const { return (max_y - v) * scale; }
};

void extend(Frame& f, const Vec2& p) {
  f.min_x = std::min(f.min_x, p.x);
  f.max_x = std::max(f.max_x, p.x);
  f.min_y = std::min(f.min_y, p.y);
  f.max_y = std::max(f.max_y, p.y);
}

std::string num(double v) { return fixed(v, 2); }

// Polyline points, or empty when the path never moves.
std::string polyline(const Frame& f, const std::vector<Vec2>& pts) {
  bool moves = false;
  for (std::size_t i = 1; i < pts.size(); ++i) moves |= !(pts[i] == pts[0]);
  if (!moves) return {};
  std::string s;
  for (const Vec2& p : pts) {
    if (!s.empty()) s += ' ';
    s += num(f.x(p.x)) + "," + num(f.y(p.y));
  }
  return s;
}

const char* kPedColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"};

}  // namespace

std::string render_svg(std::span<const TraceLog> logs) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Frame f{inf, inf, -inf, -inf};
  for (const auto& log : logs) {
    extend(f, log.goal);
    for (const auto& p : log.robot) extend(f, p);
    for (const auto& step : log.pedestrians) {
      for (const auto& p : step) extend(f, p);
    }
    for (const auto& r : log.obstacles.rectangles) {
      extend(f, r.lo);
      extend(f, r.hi);
    }
    for (const auto& s : log.obstacles.segments) {
      extend(f, s.a);
      extend(f, s.b);
    }
  }
  if (f.min_x > f.max_x) f = Frame{-1, -1, 1, 1};
  f.min_x -= 1.0;
  f.min_y -= 1.0;
  f.max_x += 1.0;
  f.max_y += 1.0;
  const double width = (f.max_x - f.min_x) * f.scale;
  const double height = (f.max_y - f.min_y) * f.scale;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";
  for (const auto& log : logs) {
    out << "<g class=\"episode\" data-seed=\"" << log.seed << "\" data-outcome=\"" << log.outcome << "\">\n";
    for (const auto& r : log.obstacles.rectangles) {
      out << "<rect class=\"wall\" x=\"" << num(f.x(r.lo.x)) << "\" y=\"" << num(f.y(r.hi.y)) << "\" width=\""
          << num((r.hi.x - r.lo.x) * f.scale) << "\" height=\"" << num((r.hi.y - r.lo.y) * f.scale)
          << "\" fill=\"#444\"/>\n";
    }
    for (const auto& s : log.obstacles.segments) {
      out << "<line class=\"wall\" x1=\"" << num(f.x(s.a.x)) << "\" y1=\"" << num(f.y(s.a.y)) << "\" x2=\""
          << num(f.x(s.b.x)) << "\" y2=\"" << num(f.y(s.b.y)) << "\" stroke=\"#444\" stroke-width=\"3\"/>\n";
    }
    const std::size_t n_peds = log.pedestrians.empty() ? 0 : log.pedestrians.front().size();
    for (std::size_t k = 0; k < n_peds; ++k) {
      std::vector<Vec2> path;
      for (const auto& step : log.pedestrians) {
        if (k < step.size()) path.push_back(step[k]);
      }
      const char* color = kPedColors[k % std::size(kPedColors)];
      const std::string pts = polyline(f, path);
      if (!pts.empty()) {
        out << "<polyline class=\"pedestrian-path\" points=\"" << pts << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
      }
      if (!path.empty()) {
        out << "<circle class=\"pedestrian\" cx=\"" << num(f.x(path.back().x)) << "\" cy=\""
            << num(f.y(path.back().y)) << "\" r=\"" << num(log.pedestrian_radius * f.scale)
            << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
      }
    }
    if (!log.robot.empty()) {
      const Vec2 start = log.robot.front();
      out << "<rect class=\"start\" x=\"" << num(f.x(start.x) - 4) << "\" y=\"" << num(f.y(start.y) - 4)
          << "\" width=\"8\" height=\"8\" fill=\"#2ca02c\"/>\n";
    }
    out << "<path class=\"goal\" d=\"M " << num(f.x(log.goal.x) - 6) << ' ' << num(f.y(log.goal.y) - 6) << " L "
        << num(f.x(log.goal.x) + 6) << ' ' << num(f.y(log.goal.y) + 6) << " M " << num(f.x(log.goal.x) - 6) << ' '
        << num(f.y(log.goal.y) + 6) << " L " << num(f.x(log.goal.x) + 6) << ' ' << num(f.y(log.goal.y) - 6)
        << "\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    const std::string robot_pts = polyline(f, log.robot);
    if (!robot_pts.empty()) {
      out << "<polyline class=\"robot-path\" points=\"" << robot_pts
          << "\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n";
    }
    if (!log.robot.empty()) {
      out << "<circle class=\"robot\" cx=\"" << num(f.x(log.robot.back().x)) << "\" cy=\""
          << num(f.y(log.robot.back().y)) << "\" r=\"" << num(log.robot_radius * f.scale)
          << "\" fill=\"#d62728\" fill-opacity=\"0.5\"/>\n";
    }
    out << "</g>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::vector<SweepPoint> read_sweep_data(std::istream& in) {
  std::vector<SweepPoint> points;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream fields(text);
    SweepPoint p;
    std::string exec;
    if (!(fields >> p.pedestrians >> p.success >> p.collision >> p.timeout >> exec)) {
      throw TraceParseError(line, "expected: peds success collision timeout exec_time");
    }
    points.push_back(p);
  }
  return points;
}

std::string render_sweep_svg(std::span<const SweepPoint> points) {
  constexpr double width = 480, height = 320, left = 50, right = 20, top = 20, bottom = 40;
  int max_peds = 1;
  for (const auto& p : points) max_peds = std::max(max_peds, p.pedestrians);
  auto px = [&](double peds) { return left + (width - left - right) * peds / max_peds; };
  auto py = [&](double pct) { return top + (height - top - bottom) * (1.0 - pct / 100.0); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";
  out << "<line class=\"axis\" x1=\"" << num(left) << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(width - right)
      << "\" y2=\"" << num(py(0)) << "\" stroke=\"black\"/>\n";
  out << "<line class=\"axis\" x1=\"" << num(left) << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(left)
      << "\" y2=\"" << num(py(100)) << "\" stroke=\"black\"/>\n";
  for (int pct = 0; pct <= 100; pct += 25) {
    out << "<text x=\"" << num(left - 8) << "\" y=\"" << num(py(pct) + 4) << "\" font-size=\"10\" text-anchor=\"end\">"
        << pct << "</text>\n";
  }
  for (const auto& p : points) {
    out << "<text x=\"" << num(px(p.pedestrians)) << "\" y=\"" << num(height - bottom + 16)
        << "\" font-size=\"10\" text-anchor=\"middle\">" << p.pedestrians << "</text>\n";
  }
  out << "<text x=\"" << num((left + width - right) / 2) << "\" y=\"" << num(height - 6)
      << "\" font-size=\"11\" text-anchor=\"middle\">pedestrians</text>\n";
  struct Series {
    const char* name;
    const char* color;
    double SweepPoint::*field;
  };
  const Series series[] = {{"success", "#2ca02c", &SweepPoint::success},
                           {"collision", "#d62728", &SweepPoint::collision},
                           {"timeout", "#7f7f7f", &SweepPoint::timeout}};
  for (const auto& s : series) {
    std::string pts;
    for (const auto& p : points) {
      if (!pts.empty()) pts += ' ';
      pts += num(px(p.pedestrians)) + "," + num(py(p.*(s.field)));
    }
    if (points.size() >= 2) {
      out << "<polyline class=\"" << s.name << "\" points=\"" << pts << "\" fill=\"none\" stroke=\"" << s.color
          << "\" stroke-width=\"2\"/>\n";
    }
    for (const auto& p : points) {
      out << "<circle class=\"" << s.name << "\" cx=\"" << num(px(p.pedestrians)) << "\" cy=\"" << num(py(p.*(s.field)))
          << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace colson
