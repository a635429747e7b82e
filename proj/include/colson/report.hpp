#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "colson/eval.hpp"
#include "json.hpp"

namespace colson {

nlohmann::ordered_json report_json(const EvalReport& report, bool include_records = false);

// Aligned plain-text table, one row per labelled report.
std::string report_table(std::span<const std::pair<std::string, EvalReport>> rows);

// Whitespace-separated columns: peds success collision timeout exec_time.
std::string sweep_plot_data(std::span<const EvalReport> reports);

// One episode of a trajectory log: a header line followed by one line per
// recorded state, each a JSON object.
struct TraceLog {
  std::uint64_t seed = 0;
  std::string scenario;
  std::string outcome;
  double dt = 0.25;
  double robot_radius = 0.3;
  double pedestrian_radius = 0.3;
  Vec2 goal;
  ObstacleMap obstacles;
  std::vector<Vec2> robot;
  std::vector<std::vector<Vec2>> pedestrians;
  std::vector<Action> actions;
};

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

TraceLog make_trace_log(const ScenarioConfig& scenario, const EpisodeRecord& record, const EpisodeTrace& trace);
void write_trace_log(std::ostream& out, const TraceLog& log);
// Reads every episode in the stream.
std::vector<TraceLog> read_trace_logs(std::istream& in);

// Deterministic SVG rendering of one or more episodes.
std::string render_svg(std::span<const TraceLog> logs);

struct SweepPoint {
  int pedestrians = 0;
  double success = 0.0;
  double collision = 0.0;
  double timeout = 0.0;
};

// Reads sweep_plot_data output; malformed lines raise TraceParseError.
std::vector<SweepPoint> read_sweep_data(std::istream& in);
// Success, collision and timeout rates against crowd size.
std::string render_sweep_svg(std::span<const SweepPoint> points);

}  // namespace colson
