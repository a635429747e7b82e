// colson: train, evaluate and plot crowd-navigation policies.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "colson/config.hpp"
#include "colson/eval.hpp"
#include "colson/report.hpp"
#include "colson/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace colson;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

struct PolicyOptions {
  std::string policy;
  std::string checkpoint;
  std::string scenario;
  std::string controller;
  int peds = -1;
  bool visible = false;
  bool invisible = false;
  std::string mode;
  int episodes = -1;
  std::int64_t seed = -1;
  int jobs = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Config file (sectioned key = value)");
  cmd->add_option("--set", o.overrides, "Override, section.key=value (repeatable)");
}

void add_policy(CLI::App* cmd, PolicyOptions& p, bool with_episodes) {
  cmd->add_option("--policy", p.policy, "orca, random, straight or diffusion (default: diffusion with --checkpoint)");
  cmd->add_option("--checkpoint", p.checkpoint, "Trained checkpoint for the diffusion policy");
  cmd->add_option("--scenario", p.scenario, "circle or wall");
  cmd->add_option("--controller", p.controller, "Pedestrian model: orca or social_force");
  cmd->add_option("--peds", p.peds, "Pedestrian count");
  cmd->add_flag("--visible", p.visible, "Pedestrians react to the robot");
  cmd->add_flag("--invisible", p.invisible, "Pedestrians ignore the robot");
  cmd->add_option("--mode", p.mode, "Sampling mode: plain, smooth or obstacle");
  if (with_episodes) cmd->add_option("--episodes", p.episodes, "Episodes to run");
  cmd->add_option("--seed", p.seed, "First episode seed");
  cmd->add_option("--jobs", p.jobs, "Parallel evaluation workers");
  cmd->add_option("--out", p.out, "Output path");
}

// Config next to a checkpoint inside a run directory, if any.
std::string sibling_config(const std::string& checkpoint) {
  if (checkpoint.empty()) return {};
  const fs::path candidate = fs::path(checkpoint).parent_path().parent_path() / "config.cfg";
  return fs::exists(candidate) ? candidate.string() : std::string();
}

RunConfig resolve_config(const CommonOptions& o, const std::string& checkpoint = {}) {
  std::string path = o.config_path;
  if (path.empty()) path = sibling_config(checkpoint);
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  return cfg;
}

void apply_policy_flags(RunConfig& cfg, const PolicyOptions& p) {
  if (!p.scenario.empty()) set_value(cfg, "scenario", "type", p.scenario == "circle" ? "circle_crossing" : p.scenario);
  if (!p.controller.empty()) set_value(cfg, "controller", "kind", p.controller);
  if (p.peds >= 0) cfg.scenario().pedestrians = p.peds;
  if (p.visible && p.invisible) throw UsageError("--visible and --invisible are mutually exclusive");
  if (p.visible) cfg.scenario().visible = true;
  if (p.invisible) cfg.scenario().visible = false;
  if (!p.mode.empty()) set_value(cfg, "guidance", "mode", p.mode);
  if (p.episodes == 0 || p.episodes < -1) throw UsageError("--episodes must be at least 1");
  if (p.episodes > 0) cfg.eval_episodes = p.episodes;
  if (p.seed >= 0) cfg.eval_seed = static_cast<std::uint64_t>(p.seed);
  if (p.jobs < 0) throw UsageError("--jobs must be at least 1");
  if (p.jobs > 0) cfg.jobs = p.jobs;
}

std::string policy_kind(const PolicyOptions& p) {
  if (!p.policy.empty()) return p.policy;
  if (!p.checkpoint.empty()) return "diffusion";
  throw UsageError("choose a policy with --policy or pass --checkpoint");
}

ScoreNetwork load_actor(const RunConfig& cfg, const std::string& checkpoint) {
  std::mt19937_64 rng(0);
  ScoreNetwork actor(cfg.trainer.net, cfg.trainer.diffusion_steps, rng);
  ParamList params;
  actor.collect("actor.", params);
  restore(params, nd::load_checkpoint(checkpoint));
  return actor;
}

std::unique_ptr<Policy> make_policy(const RunConfig& cfg, const PolicyOptions& p) {
  const std::string kind = policy_kind(p);
  if (kind == "orca") return std::make_unique<OrcaPolicy>(cfg.scenario().controller.orca);
  if (kind == "random") return std::make_unique<RandomPolicy>();
  if (kind == "straight") return std::make_unique<StraightPolicy>();
  if (kind == "diffusion") {
    if (p.checkpoint.empty()) throw UsageError("the diffusion policy needs --checkpoint");
    return std::make_unique<DiffusionPolicy>(load_actor(cfg, p.checkpoint), cfg.policy_config());
  }
  throw UsageError("unknown policy '" + kind + "'");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string snapshot_text(const RunConfig& cfg, const std::string& command, const PolicyOptions& p) {
  std::ostringstream out;
  out << "# " << command << " policy=" << policy_kind(p);
  if (!p.checkpoint.empty()) out << " checkpoint=" << p.checkpoint;
  out << "\n" << to_text(cfg);
  return out.str();
}

std::string ckpt_name(int episode) {
  if (episode < 0) return "diverged.ndg";
  char buf[32];
  std::snprintf(buf, sizeof buf, "episode_%06d.ndg", episode);
  return buf;
}

int cmd_train(const CommonOptions& o, std::int64_t seed, const std::string& run_dir, bool quiet) {
  RunConfig cfg = resolve_config(o);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!run_dir.empty()) cfg.run_dir = run_dir;
  validate(cfg);

  const fs::path root(cfg.run_dir);
  fs::create_directories(root / "checkpoints");
  fs::create_directories(root / "logs");
  fs::create_directories(root / "reports");
  write_file(root / "config.cfg", to_text(cfg));
  std::ofstream metrics(root / "logs" / "metrics.jsonl", std::ios::binary);
  std::ofstream timing(root / "logs" / "timing.jsonl", std::ios::binary);

  const auto start = std::chrono::steady_clock::now();
  QsmTrainer trainer(cfg.trainer, cfg.seed);
  TrainHooks hooks;
  int window_success = 0;
  hooks.on_episode = [&](const EpisodeMetrics& m) {
    ordered_json j;
    j["episode"] = m.episode;
    j["return"] = m.discounted_return;
    j["undiscounted_return"] = m.undiscounted_return;
    j["success"] = m.success;
    j["outcome"] = to_string(m.outcome);
    j["steps"] = m.steps;
    j["critic_loss"] = m.critic_loss;
    j["qsm_loss"] = m.qsm_loss;
    metrics << j.dump() << '\n';
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ordered_json t;
    t["episode"] = m.episode;
    t["wall_time"] = wall;
    timing << t.dump() << '\n';
    window_success += m.success ? 1 : 0;
    if (!quiet && m.episode % 100 == 0) {
      std::cerr << "episode " << m.episode << "  success(last 100) " << window_success << "%  critic "
                << m.critic_loss << "  qsm " << m.qsm_loss << "  " << static_cast<int>(wall) << "s\n";
      window_success = 0;
    }
  };
  hooks.on_checkpoint = [&](int episode, const nd::NamedTensors& tensors) {
    nd::save_checkpoint((root / "checkpoints" / ckpt_name(episode)).string(), tensors);
    if (episode > 0 && episode == cfg.trainer.episodes) {
      nd::save_checkpoint((root / "checkpoints" / "final.ndg").string(), tensors);
    }
  };
  trainer.train(cfg.seed, hooks);
  if (!quiet) std::cerr << "run written to " << root.string() << "\n";
  return 0;
}

int cmd_collect(const CommonOptions& o, int episodes, std::int64_t seed, const std::string& out_path) {
  RunConfig cfg = resolve_config(o);
  if (episodes < 1) throw UsageError("--episodes must be at least 1");
  if (out_path.empty()) throw UsageError("--out is required");
  validate(cfg);
  QsmTrainer trainer(cfg.trainer, cfg.seed);
  trainer.collect_warm_start(episodes, seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seed);
  std::ostringstream out;
  for (std::size_t i = 0; i < trainer.buffer().size(); ++i) {
    const Transition& t = trainer.buffer()[i];
    ordered_json j;
    auto obs = [](const Observation& o) {
      ordered_json v;
      v["robot"] = o.robot;
      v["peds"] = o.pedestrians;
      return v;
    };
    j["observation"] = obs(t.observation);
    j["action"] = t.action;
    j["reward"] = t.reward;
    j["next_observation"] = obs(t.next_observation);
    j["terminal"] = t.terminal;
    out << j.dump() << '\n';
  }
  write_file(out_path, out.str());
  std::cout << trainer.buffer().size() << " transitions written to " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const PolicyOptions& p, bool traces) {
  RunConfig cfg = resolve_config(o, p.checkpoint);
  apply_policy_flags(cfg, p);
  validate(cfg);
  const std::unique_ptr<Policy> policy = make_policy(cfg, p);
  const fs::path out = p.out.empty() ? fs::path("reports") : fs::path(p.out);
  EvalOptions opts;
  opts.jobs = cfg.jobs;
  opts.record_traces = traces;
  const EvalResult res = evaluate_full(*policy, cfg.scenario(), cfg.eval_episodes, cfg.eval_seed, opts);
  const std::vector<std::pair<std::string, EvalReport>> rows{{policy->name(), res.report}};
  const std::string table = report_table(rows);
  write_file(out / "report.json", report_json(res.report, true).dump(2) + "\n");
  write_file(out / "report.txt", table);
  write_file(out / "config.cfg", snapshot_text(cfg, "eval", p));
  if (traces) {
    std::ostringstream log;
    for (std::size_t i = 0; i < res.traces.size(); ++i) {
      write_trace_log(log, make_trace_log(cfg.scenario(), res.report.records[i], res.traces[i]));
    }
    write_file(out / "traces.jsonl", log.str());
  }
  std::cout << describe(cfg.scenario()) << ", " << res.report.episodes << " episodes\n" << table;
  return 0;
}

int cmd_rollout(const CommonOptions& o, const PolicyOptions& p) {
  RunConfig cfg = resolve_config(o, p.checkpoint);
  apply_policy_flags(cfg, p);
  validate(cfg);
  if (p.out.empty()) throw UsageError("--out is required");
  std::unique_ptr<Policy> policy = make_policy(cfg, p);
  EpisodeTrace trace;
  const EpisodeRecord rec = run_episode(*policy, cfg.scenario(), cfg.eval_seed, &trace);
  std::ostringstream log;
  write_trace_log(log, make_trace_log(cfg.scenario(), rec, trace));
  write_file(p.out, log.str());
  std::cout << "seed " << rec.seed << ": " << to_string(rec.outcome) << " after " << rec.steps << " steps\n";
  return 0;
}

int cmd_sweep(const CommonOptions& o, const PolicyOptions& p, const std::vector<int>& counts) {
  RunConfig cfg = resolve_config(o, p.checkpoint);
  apply_policy_flags(cfg, p);
  validate(cfg);
  for (int c : counts) {
    if (c < 0) throw UsageError("--counts must be non-negative");
  }
  const std::unique_ptr<Policy> policy = make_policy(cfg, p);
  EvalOptions opts;
  opts.jobs = cfg.jobs;
  const auto table = sweep_pedestrians(*policy, cfg.scenario(), counts, cfg.eval_episodes, cfg.eval_seed, opts);
  std::vector<std::pair<std::string, EvalReport>> rows;
  ordered_json all = ordered_json::array();
  for (std::size_t i = 0; i < table.size(); ++i) {
    rows.emplace_back(policy->name() + " n=" + std::to_string(counts[i]), table[i]);
    all.push_back(report_json(table[i]));
  }
  const fs::path out = p.out.empty() ? fs::path("reports") : fs::path(p.out);
  write_file(out / "sweep.txt", report_table(rows));
  write_file(out / "sweep.dat", sweep_plot_data(table));
  write_file(out / "sweep.json", all.dump(2) + "\n");
  write_file(out / "config.cfg", snapshot_text(cfg, "sweep", p));
  std::cout << report_table(rows);
  return 0;
}

int cmd_compare(const CommonOptions& o, const PolicyOptions& p, const std::vector<std::string>& mode_names) {
  RunConfig cfg = resolve_config(o, p.checkpoint);
  apply_policy_flags(cfg, p);
  validate(cfg);
  if (policy_kind(p) != "diffusion") throw UsageError("compare needs the diffusion policy (--checkpoint)");
  std::vector<SamplingMode> modes;
  for (const auto& m : mode_names) {
    try {
      modes.push_back(parse_sampling_mode(m));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const DiffusionPolicy policy(load_actor(cfg, p.checkpoint), cfg.policy_config());
  EvalOptions opts;
  opts.jobs = cfg.jobs;
  const GuidanceComparison cmp =
      compare_guidance(policy, cfg.scenario(), modes, cfg.eval_episodes, cfg.eval_seed, opts);
  std::vector<std::pair<std::string, EvalReport>> rows;
  ordered_json all = ordered_json::object();
  for (std::size_t i = 0; i < modes.size(); ++i) {
    rows.emplace_back(to_string(modes[i]), cmp.reports[i]);
    all[to_string(modes[i])] = report_json(cmp.reports[i]);
  }
  all["paired"] = cmp.paired;
  const fs::path out = p.out.empty() ? fs::path("reports") : fs::path(p.out);
  write_file(out / "compare.txt", report_table(rows));
  write_file(out / "compare.json", all.dump(2) + "\n");
  write_file(out / "config.cfg", snapshot_text(cfg, "compare", p));
  std::cout << describe(cfg.scenario()) << ", " << cfg.eval_episodes << " paired episodes\n" << report_table(rows);
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_path) {
  if (inputs.empty()) throw UsageError("plot needs at least one input file");
  if (out_path.empty()) throw UsageError("--out is required");
  std::vector<TraceLog> logs;
  std::vector<SweepPoint> sweep;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    const bool is_sweep = in.peek() == '#';
    try {
      if (is_sweep) {
        auto pts = read_sweep_data(in);
        sweep.insert(sweep.end(), pts.begin(), pts.end());
      } else {
        auto l = read_trace_logs(in);
        logs.insert(logs.end(), l.begin(), l.end());
      }
    } catch (const TraceParseError& e) {
      throw TraceParseError(e.line(), path + ": " + e.what());
    }
  }
  if (!logs.empty() && !sweep.empty()) throw UsageError("cannot mix trajectory logs and sweep data in one plot");
  write_file(out_path, sweep.empty() ? render_svg(logs) : render_sweep_svg(sweep));
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colson: crowd navigation with diffusion policies"};
  app.require_subcommand(1);

  CommonOptions common;
  PolicyOptions popts;

  auto* train = app.add_subcommand("train", "Train a policy and write a run directory");
  add_common(train, common);
  std::int64_t train_seed = -1;
  std::string run_dir;
  bool quiet = false;
  train->add_option("--seed", train_seed, "Training seed (overrides trainer.seed)");
  train->add_option("--run-dir", run_dir, "Run directory (overrides io.run_dir)");
  train->add_flag("--quiet", quiet, "No progress output");

  auto* collect = app.add_subcommand("collect", "Record ORCA demonstrations as transitions");
  add_common(collect, common);
  int collect_episodes = 1;
  std::int64_t collect_seed = -1;
  std::string collect_out;
  collect->add_option("--episodes", collect_episodes, "Episodes to record");
  collect->add_option("--seed", collect_seed, "World seed");
  collect->add_option("--out", collect_out, "Output file (line-delimited JSON)");

  auto* eval = app.add_subcommand("eval", "Evaluate a policy over a batch of seeded episodes");
  add_common(eval, common);
  add_policy(eval, popts, true);
  bool traces = false;
  eval->add_flag("--traces", traces, "Also write per-episode trajectory logs");

  auto* rollout = app.add_subcommand("rollout", "Run one episode and write its trajectory log");
  add_common(rollout, common);
  add_policy(rollout, popts, false);

  auto* sweep = app.add_subcommand("sweep", "Evaluate over several crowd sizes");
  add_common(sweep, common);
  add_policy(sweep, popts, true);
  std::vector<int> counts;
  sweep->add_option("--counts", counts, "Pedestrian counts, comma separated")->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Paired evaluation of sampling modes");
  add_common(compare, common);
  add_policy(compare, popts, true);
  std::vector<std::string> modes{"plain", "smooth", "obstacle"};
  compare->add_option("--modes", modes, "Modes, comma separated")->delimiter(',');

  auto* plot = app.add_subcommand("plot", "Render trajectory logs or sweep data as SVG");
  std::vector<std::string> plot_inputs;
  std::string plot_out;
  plot->add_option("inputs", plot_inputs, "Trajectory logs or sweep .dat files");
  plot->add_option("--out", plot_out, "SVG file to write");

  auto* keys = app.add_subcommand("config", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(common, train_seed, run_dir, quiet);
    if (*collect) return cmd_collect(common, collect_episodes, collect_seed, collect_out);
    if (*eval) return cmd_eval(common, popts, traces);
    if (*rollout) return cmd_rollout(common, popts);
    if (*sweep) return cmd_sweep(common, popts, counts);
    if (*compare) return cmd_compare(common, popts, modes);
    if (*plot) return cmd_plot(plot_inputs, plot_out);
    if (*keys) {
      std::cout << describe_keys();
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
