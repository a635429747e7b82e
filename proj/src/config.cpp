#include "colson/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace colson {

namespace {

struct Key {
  std::string section;
  std::string name;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

template <typename Int>
Int parse_int(const std::string& v) {
  Int out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename Access>
Key real(std::string section, std::string name, std::string doc, Access access) {
  return {std::move(section), std::move(name), std::move(doc),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_double(v); },
          [access](const RunConfig& c) { return format_double(access(const_cast<RunConfig&>(c))); }};
}

template <typename Int, typename Access>
Key integer(std::string section, std::string name, std::string doc, Access access) {
  return {std::move(section), std::move(name), std::move(doc),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_int<Int>(v); },
          [access](const RunConfig& c) { return std::to_string(access(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Key boolean(std::string section, std::string name, std::string doc, Access access) {
  return {std::move(section), std::move(name), std::move(doc),
          [access](RunConfig& c, const std::string& v) { access(c) = parse_bool(v); },
          [access](const RunConfig& c) -> std::string {
            return access(const_cast<RunConfig&>(c)) ? "true" : "false";
          }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    // scenario
    k.push_back({"scenario", "type", "circle_crossing or wall",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "circle_crossing" || v == "circle") {
                     c.scenario().kind = ScenarioKind::CircleCrossing;
                   } else if (v == "wall") {
                     c.scenario().kind = ScenarioKind::Wall;
                   } else {
                     throw ConfigError("expected circle_crossing or wall, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.scenario().kind == ScenarioKind::Wall ? "wall" : "circle_crossing";
                 }});
    k.push_back(integer<int>("scenario", "pedestrians", "pedestrian count (circle crossing)",
                             [](RunConfig& c) -> int& { return c.scenario().pedestrians; }));
    k.push_back(boolean("scenario", "visible", "pedestrians react to the robot",
                        [](RunConfig& c) -> bool& { return c.scenario().visible; }));
    k.push_back(real("scenario", "dt", "simulation step [s]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.dt; }));
    k.push_back(real("scenario", "time_limit", "episode time limit [s]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.time_limit; }));
    k.push_back(real("scenario", "circle_radius", "circle crossing radius [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.circle_radius; }));
    k.push_back(real("scenario", "agent_radius", "robot and pedestrian radius [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.agent_radius; }));
    k.push_back(real("scenario", "v_pref", "preferred speed [m/s]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.v_pref; }));
    k.push_back(real("scenario", "discomfort_distance", "reward discomfort band [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.discomfort_distance; }));
    k.push_back(real("scenario", "return_gamma", "discount base of the reported return",
                     [](RunConfig& c) -> double& { return c.scenario().sim.gamma; }));
    k.push_back(real("scenario", "corridor_width", "wall scenario corridor width [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.corridor_width; }));
    k.push_back(real("scenario", "corridor_length", "wall scenario corridor length [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.corridor_length; }));
    k.push_back(real("scenario", "wall_thickness", "wall scenario wall thickness [m]",
                     [](RunConfig& c) -> double& { return c.scenario().sim.wall_thickness; }));
    // controller
    k.push_back({"controller", "kind", "orca or social_force",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "orca") {
                     c.scenario().controller.kind = ControllerKind::Orca;
                   } else if (v == "social_force") {
                     c.scenario().controller.kind = ControllerKind::SocialForce;
                   } else {
                     throw ConfigError("expected orca or social_force, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.scenario().controller.kind == ControllerKind::Orca ? "orca" : "social_force";
                 }});
    k.push_back(real("controller", "orca_time_horizon", "ORCA time horizon [s]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.orca.time_horizon_agents; }));
    k.push_back(real("controller", "orca_neighbor_distance", "ORCA neighbor range [m]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.orca.neighbor_distance; }));
    k.push_back(real("controller", "orca_max_speed", "ORCA pedestrian speed cap [m/s]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.orca.max_speed; }));
    k.push_back(real("controller", "orca_safety_margin", "extra ORCA clearance [m]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.orca.safety_margin; }));
    k.push_back(real("controller", "sf_relaxation_time", "social force relaxation time [s]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.social_force.relaxation_time; }));
    k.push_back(real("controller", "sf_strength", "social force interaction strength [m/s^2]",
                     [](RunConfig& c) -> double& {
                       return c.scenario().controller.social_force.interaction_strength;
                     }));
    k.push_back(real("controller", "sf_range", "social force interaction range [m]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.social_force.interaction_range; }));
    k.push_back(real("controller", "sf_max_speed", "social force speed cap [m/s]",
                     [](RunConfig& c) -> double& { return c.scenario().controller.social_force.max_speed; }));
    // model
    k.push_back(integer<std::size_t>("model", "hidden", "graph embedding width",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.net.hidden; }));
    k.push_back(integer<std::size_t>("model", "heads", "attention heads",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.net.heads; }));
    k.push_back(integer<std::size_t>("model", "mlp_hidden", "score and critic MLP width",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.net.mlp_hidden; }));
    k.push_back(integer<std::size_t>("model", "time_embedding", "diffusion step embedding width",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.net.time_embedding; }));
    k.push_back(real("model", "attention_slope", "leaky relu slope in attention",
                     [](RunConfig& c) -> double& { return c.trainer.net.attention_slope; }));
    k.push_back(boolean("model", "critic_pooled", "critic reads the max over all nodes",
                        [](RunConfig& c) -> bool& { return c.trainer.net.critic_pooled; }));
    k.push_back(integer<int>("model", "diffusion_steps", "T",
                             [](RunConfig& c) -> int& { return c.trainer.diffusion_steps; }));
    k.push_back(real("model", "schedule_first", "alpha at tau = 1",
                     [](RunConfig& c) -> double& { return c.trainer.schedule_first; }));
    k.push_back(real("model", "schedule_last", "alpha at tau = T",
                     [](RunConfig& c) -> double& { return c.trainer.schedule_last; }));
    k.push_back({"model", "rule", "as_printed or ddpm denoising coefficient",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "as_printed") {
                     c.trainer.rule = DenoiseRule::AsPrinted;
                   } else if (v == "ddpm") {
                     c.trainer.rule = DenoiseRule::Ddpm;
                   } else {
                     throw ConfigError("expected as_printed or ddpm, got '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) -> std::string {
                   return c.trainer.rule == DenoiseRule::AsPrinted ? "as_printed" : "ddpm";
                 }});
    // trainer
    k.push_back(integer<std::uint64_t>("trainer", "seed", "training seed",
                                       [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    k.push_back(integer<int>("trainer", "episodes", "exploration episodes",
                             [](RunConfig& c) -> int& { return c.trainer.episodes; }));
    k.push_back(integer<int>("trainer", "warm_start_episodes", "ORCA warm-start episodes",
                             [](RunConfig& c) -> int& { return c.trainer.warm_start_episodes; }));
    k.push_back(integer<std::size_t>("trainer", "batch_size", "minibatch size",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.batch_size; }));
    k.push_back(real("trainer", "gamma", "discount per second at v_pref",
                     [](RunConfig& c) -> double& { return c.trainer.gamma; }));
    k.push_back(real("trainer", "rho", "target network averaging",
                     [](RunConfig& c) -> double& { return c.trainer.rho; }));
    k.push_back(real("trainer", "alpha_qsm", "score target scale",
                     [](RunConfig& c) -> double& { return c.trainer.alpha_qsm; }));
    k.push_back(real("trainer", "score_sign", "sign of the score target",
                     [](RunConfig& c) -> double& { return c.trainer.score_sign; }));
    k.push_back(real("trainer", "actor_lr", "score network learning rate",
                     [](RunConfig& c) -> double& { return c.trainer.actor_lr; }));
    k.push_back(real("trainer", "critic_lr", "critic learning rate",
                     [](RunConfig& c) -> double& { return c.trainer.critic_lr; }));
    k.push_back(real("trainer", "max_grad_norm", "gradient clipping (0 disables)",
                     [](RunConfig& c) -> double& { return c.trainer.max_grad_norm; }));
    k.push_back(integer<std::size_t>("trainer", "buffer_capacity", "replay capacity",
                                     [](RunConfig& c) -> std::size_t& { return c.trainer.buffer_capacity; }));
    k.push_back(integer<int>("trainer", "gradient_steps", "updates per episode (0 = episode length)",
                             [](RunConfig& c) -> int& { return c.trainer.gradient_steps; }));
    k.push_back(real("trainer", "epsilon_start", "initial random-action probability",
                     [](RunConfig& c) -> double& { return c.trainer.epsilon_start; }));
    k.push_back(real("trainer", "epsilon_end", "final random-action probability",
                     [](RunConfig& c) -> double& { return c.trainer.epsilon_end; }));
    k.push_back(real("trainer", "epsilon_anneal_fraction", "fraction of episodes to anneal over",
                     [](RunConfig& c) -> double& { return c.trainer.epsilon_anneal_fraction; }));
    // guidance
    k.push_back({"guidance", "mode", "plain, smooth or obstacle",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.mode = parse_sampling_mode(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.mode); }});
    k.push_back(real("guidance", "safety_distance", "d_s [m]",
                     [](RunConfig& c) -> double& { return c.guidance.safety_distance; }));
    k.push_back(real("guidance", "decay", "eta [1/m]", [](RunConfig& c) -> double& { return c.guidance.decay; }));
    k.push_back(real("guidance", "distance_cost", "c_d",
                     [](RunConfig& c) -> double& { return c.guidance.distance_cost; }));
    k.push_back(real("guidance", "lethal_cost", "c_l", [](RunConfig& c) -> double& { return c.guidance.lethal_cost; }));
    k.push_back(real("guidance", "prediction_dt", "position prediction horizon [s]",
                     [](RunConfig& c) -> double& { return c.guidance.dt; }));
    k.push_back(integer<int>("guidance", "smoothing_depth", "SDEdit noising depth (0 = T)",
                             [](RunConfig& c) -> int& { return c.smoothing_depth; }));
    // eval
    k.push_back(integer<int>("eval", "episodes", "evaluation episodes",
                             [](RunConfig& c) -> int& { return c.eval_episodes; }));
    k.push_back(integer<std::uint64_t>("eval", "seed", "first evaluation seed",
                                       [](RunConfig& c) -> std::uint64_t& { return c.eval_seed; }));
    k.push_back(integer<int>("eval", "jobs", "evaluation workers", [](RunConfig& c) -> int& { return c.jobs; }));
    // io
    k.push_back({"io", "run_dir", "output directory",
                 [](RunConfig& c, const std::string& v) {
                   if (v.empty()) throw ConfigError("run_dir must not be empty");
                   c.run_dir = v;
                 },
                 [](const RunConfig& c) { return c.run_dir; }});
    k.push_back(integer<int>("io", "checkpoint_every", "episodes between checkpoints (0 = start and end only)",
                             [](RunConfig& c) -> int& { return c.trainer.checkpoint_every; }));
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& section, const std::string& name) {
  for (const Key& k : keys()) {
    if (k.section == section && k.name == name) return &k;
  }
  return nullptr;
}

bool known_section(const std::string& section) {
  for (const Key& k : keys()) {
    if (k.section == section) return true;
  }
  return false;
}

}  // namespace

DiffusionPolicyConfig RunConfig::policy_config() const {
  DiffusionPolicyConfig p;
  p.mode = mode;
  p.schedule = DiffusionSchedule::linear(trainer.diffusion_steps, trainer.schedule_first, trainer.schedule_last);
  p.rule = trainer.rule;
  p.guidance = guidance;
  p.smoothing_depth = smoothing_depth;
  return p;
}

void set_value(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  if (!known_section(section)) throw ConfigError("unknown section [" + section + "]");
  const Key* k = find_key(section, key);
  if (!k) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
  k->set(config, value);
}

RunConfig parse_config(std::istream& in, const std::string& source, RunConfig base) {
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (text.empty()) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(where + "malformed section header '" + text + "'");
      section = trim(text.substr(1, text.size() - 2));
      if (!known_section(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + text + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    try {
      set_value(base, section, trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path, std::move(base));
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  try {
    set_value(config, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
              trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& e) {
    throw ConfigError("--set " + assignment + ": " + e.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const Key& k : keys()) {
    if (k.section != section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.name << " = " << k.get(config) << '\n';
  }
  return out.str();
}

std::string describe_keys() {
  const RunConfig defaults;
  std::ostringstream out;
  for (const Key& k : keys()) {
    out << k.section << '.' << k.name << "  (default " << k.get(defaults) << ")  " << k.doc << '\n';
  }
  return out.str();
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid configuration: " + what);
  };
  const TrainConfig& t = c.trainer;
  const SimConfig& s = c.scenario().sim;
  require(c.scenario().pedestrians >= 0, "scenario.pedestrians must be >= 0");
  require(s.dt > 0 && s.time_limit > 0 && s.v_pref > 0 && s.agent_radius > 0, "scenario timing and sizes must be > 0");
  require(s.gamma > 0 && s.gamma <= 1, "scenario.return_gamma must be in (0, 1]");
  require(c.scenario().controller.orca.valid(), "controller ORCA parameters");
  require(c.scenario().controller.social_force.valid(), "controller social force parameters");
  require(t.net.hidden > 0 && t.net.heads > 0 && t.net.hidden % t.net.heads == 0,
          "model.hidden must be a positive multiple of model.heads");
  require(t.net.mlp_hidden > 0 && t.net.time_embedding > 0 && t.net.time_embedding % 2 == 0,
          "model.mlp_hidden > 0 and an even model.time_embedding");
  require(t.diffusion_steps >= 0, "model.diffusion_steps must be >= 0");
  require(DiffusionSchedule::linear(t.diffusion_steps, t.schedule_first, t.schedule_last).valid(),
          "model.schedule_first/last must lie in (0, 1)");
  require(t.episodes >= 0 && t.warm_start_episodes >= 0, "trainer episode counts must be >= 0");
  require(t.batch_size > 0 && t.buffer_capacity > 0, "trainer.batch_size and buffer_capacity must be > 0");
  require(t.gamma >= 0 && t.gamma <= 1, "trainer.gamma must be in [0, 1]");
  require(t.rho >= 0 && t.rho <= 1, "trainer.rho must be in [0, 1]");
  require(t.score_sign == 1.0 || t.score_sign == -1.0, "trainer.score_sign must be 1 or -1");
  require(t.actor_lr > 0 && t.critic_lr > 0 && t.max_grad_norm >= 0, "trainer learning rates");
  require(t.epsilon_start >= 0 && t.epsilon_start <= 1 && t.epsilon_end >= 0 && t.epsilon_end <= 1,
          "trainer.epsilon_* must be in [0, 1]");
  require(c.guidance.valid(), "guidance needs d_s > 0, eta > 0, c_l >= c_d > 0, dt > 0");
  require(c.smoothing_depth >= 0 && c.smoothing_depth <= t.diffusion_steps,
          "guidance.smoothing_depth must be in [0, T]");
  require(c.eval_episodes >= 1, "eval.episodes must be >= 1");
  require(c.jobs >= 1, "eval.jobs must be >= 1");
  require(t.checkpoint_every >= 0, "io.checkpoint_every must be >= 0");
}

}  // namespace colson
