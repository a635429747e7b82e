#include "colson/nets.hpp"

#include <cmath>
#include <set>

namespace colson {

using nd::Tape;
using nd::Tensor;
using nd::Var;

GraphBatch GraphBatch::from_observations(std::span<const Observation* const> observations) {
  GraphBatch g;
  g.batch = observations.size();
  for (const Observation* o : observations) g.max_peds = std::max(g.max_peds, o->pedestrians.size());
  g.robot.reserve(g.batch * kRobotFeatures);
  g.peds.assign(g.batch * g.max_peds * kPedestrianFeatures, 0.0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const Observation& o = *observations[b];
    g.robot.insert(g.robot.end(), o.robot.begin(), o.robot.end());
    for (std::size_t k = 0; k < o.pedestrians.size(); ++k) {
      std::copy(o.pedestrians[k].begin(), o.pedestrians[k].end(),
                g.peds.begin() + static_cast<std::ptrdiff_t>((b * g.max_peds + k) * kPedestrianFeatures));
    }
    g.counts.push_back(static_cast<int>(o.pedestrians.size()));
  }
  return g;
}

GraphBatch GraphBatch::single(const Observation& observation) {
  const Observation* p = &observation;
  return from_observations(std::span<const Observation* const>(&p, 1));
}

std::vector<std::pair<int, int>> graph_edges(int n_pedestrians) {
  std::vector<std::pair<int, int>> edges;
  for (int dst = 0; dst <= n_pedestrians; ++dst) {
    for (int src = 0; src <= n_pedestrians; ++src) edges.emplace_back(src, dst);
  }
  return edges;
}

namespace {

Tensor uniform_tensor(nd::Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& x : t.storage()) x = u(rng);
  return t;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_tensor({in, out}, bound, rng);
  bias = uniform_tensor({out}, bound, rng);
}

Var Linear::forward(Tape& tape, Var x) {
  return tape.add_row(tape.matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(const std::string& prefix, ParamList& out) {
  out.emplace_back(prefix + "weight", &weight);
  out.emplace_back(prefix + "bias", &bias);
}

Mlp::Mlp(std::vector<std::size_t> widths, std::mt19937_64& rng) {
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) layers.emplace_back(widths[k], widths[k + 1], rng);
}

Var Mlp::forward(Tape& tape, Var x) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    x = layers[k].forward(tape, x);
    if (k + 1 < layers.size()) x = tape.relu(x);
  }
  return x;
}

void Mlp::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t k = 0; k < layers.size(); ++k) layers[k].collect(prefix + std::to_string(k) + ".", out);
}

GraphEncoder::GraphEncoder(const NetConfig& cfg, std::mt19937_64& rng)
    : robot_embed(kRobotFeatures, cfg.hidden, rng),
      ped_embed(kPedestrianFeatures, cfg.hidden, rng),
      lin_source(cfg.hidden, cfg.hidden, rng),
      lin_target(cfg.hidden, cfg.hidden, rng),
      heads(cfg.heads),
      slope(cfg.attention_slope) {
  if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0) {
    throw std::invalid_argument("GraphEncoder: hidden width must be a multiple of the head count");
  }
  const std::size_t per_head = cfg.hidden / cfg.heads;
  const double bound = std::sqrt(6.0 / static_cast<double>(per_head + 1));
  attention = uniform_tensor({cfg.heads, per_head}, bound, rng);
  out_bias = Tensor({cfg.hidden}, 0.0);
}

Var GraphEncoder::forward(Tape& tape, const GraphBatch& batch,
                          std::vector<std::vector<std::vector<double>>>* weights) {
  const Var robot = tape.constant(Tensor({batch.batch, kRobotFeatures}, batch.robot));
  const Var peds = tape.constant(Tensor({batch.batch * batch.max_peds, kPedestrianFeatures}, batch.peds));
  const Var hr = robot_embed.forward(tape, robot);
  const Var hp = ped_embed.forward(tape, peds);
  const Var src_r = lin_source.forward(tape, hr);
  const Var src_p = lin_source.forward(tape, hp);
  const Var dst = lin_target.forward(tape, hr);
  const Var out = tape.gatv2_attention(src_r, src_p, dst, tape.param(attention), batch.counts, batch.max_peds,
                                       slope, weights);
  return tape.add_row(out, tape.param(out_bias));
}

Var GraphEncoder::pooled(Tape& tape, const GraphBatch& batch) {
  const Var robot = tape.constant(Tensor({batch.batch, kRobotFeatures}, batch.robot));
  const Var peds = tape.constant(Tensor({batch.batch * batch.max_peds, kPedestrianFeatures}, batch.peds));
  const Var src_r = lin_source.forward(tape, robot_embed.forward(tape, robot));
  const Var src_p = lin_source.forward(tape, ped_embed.forward(tape, peds));
  return tape.graph_max_pool(src_r, src_p, batch.counts, batch.max_peds);
}

void GraphEncoder::collect(const std::string& prefix, ParamList& out) {
  robot_embed.collect(prefix + "robot_embed.", out);
  ped_embed.collect(prefix + "ped_embed.", out);
  lin_source.collect(prefix + "lin_source.", out);
  lin_target.collect(prefix + "lin_target.", out);
  out.emplace_back(prefix + "attention", &attention);
  out.emplace_back(prefix + "out_bias", &out_bias);
}

Tensor time_embedding(std::span<const int> taus, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor t({taus.size(), dim}, 0.0);
  for (std::size_t b = 0; b < taus.size(); ++b) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      t.at(b, k) = std::sin(taus[b] * freq);
      t.at(b, half + k) = std::cos(taus[b] * freq);
    }
  }
  return t;
}

ScoreNetwork::ScoreNetwork(const NetConfig& cfg, int diffusion_steps, std::mt19937_64& rng)
    : encoder(cfg, rng),
      head({cfg.hidden + kActionDim + cfg.time_embedding, cfg.mlp_hidden, cfg.mlp_hidden, kActionDim}, rng),
      time_dim(cfg.time_embedding),
      max_tau(diffusion_steps) {}

Var ScoreNetwork::score(Tape& tape, Var features, Var x, std::span<const int> taus) {
  for (int tau : taus) {
    if (tau < 1 || (max_tau > 0 && tau > max_tau)) {
      throw std::out_of_range("ScoreNetwork: diffusion step " + std::to_string(tau) + " out of range");
    }
  }
  const Var temb = tape.constant(time_embedding(taus, time_dim));
  return head.forward(tape, tape.concat({features, x, temb}, 1));
}

void ScoreNetwork::collect(const std::string& prefix, ParamList& out) {
  encoder.collect(prefix + "encoder.", out);
  head.collect(prefix + "head.", out);
}

Critic::Critic(const NetConfig& cfg, std::mt19937_64& rng)
    : encoder(cfg, rng), head({cfg.hidden + kActionDim, cfg.mlp_hidden, cfg.mlp_hidden, 1}, rng),
      pooled(cfg.critic_pooled) {}

Var Critic::encode(Tape& tape, const GraphBatch& batch) {
  return pooled ? encoder.pooled(tape, batch) : encoder.forward(tape, batch);
}

Var Critic::q(Tape& tape, Var features, Var action) {
  return head.forward(tape, tape.concat({features, action}, 1));
}

void Critic::collect(const std::string& prefix, ParamList& out) {
  encoder.collect(prefix + "encoder.", out);
  head.collect(prefix + "head.", out);
}

CriticPair::CriticPair(const NetConfig& cfg, std::mt19937_64& rng)
    : main{Critic(cfg, rng), Critic(cfg, rng)}, target{main[0], main[1]} {}

void CriticPair::collect(ParamList& out) {
  main[0].collect("critic1.", out);
  main[1].collect("critic2.", out);
  target[0].collect("target1.", out);
  target[1].collect("target2.", out);
}

double q_value(CriticPair& critics, const Observation& obs, const Action& normalized_action, int which,
               bool use_target) {
  Tape tape(false);
  Critic& c = critics.get(which, use_target);
  const GraphBatch batch = GraphBatch::single(obs);
  const Var h = c.encode(tape, batch);
  const Var a = tape.constant(Tensor({1, kActionDim}, {normalized_action.vx, normalized_action.vy}));
  return tape.value(c.q(tape, h, a)).item();
}

void polyak_update(const ParamList& main, const ParamList& target, double rho) {
  if (main.size() != target.size()) throw nd::ShapeError("polyak_update: parameter count mismatch");
  for (std::size_t k = 0; k < main.size(); ++k) {
    const Tensor& m = *main[k].second;
    Tensor& t = *target[k].second;
    if (m.shape() != t.shape()) {
      throw nd::ShapeError("polyak_update: shape mismatch for " + target[k].first + " " +
                           nd::shape_string(t.shape()) + " vs " + nd::shape_string(m.shape()));
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rho * t[i] + (1.0 - rho) * m[i];
  }
}

nd::NamedTensors snapshot(const ParamList& params) {
  nd::NamedTensors out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t->shape(), t->storage()));
  return out;
}

void restore(const ParamList& params, const nd::NamedTensors& tensors) {
  std::string problems;
  for (const auto& [name, t] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      problems += " " + name + " (missing)";
    } else if (it->second.shape() != t->shape()) {
      problems += " " + name + " (expected " + nd::shape_string(t->shape()) + ", found " +
                  nd::shape_string(it->second.shape()) + ")";
    }
  }
  if (!problems.empty()) throw nd::ShapeError("checkpoint does not match model:" + problems);
  for (const auto& [name, t] : params) t->storage() = tensors.at(name).storage();
}

std::vector<Tensor*> tensors_of(const ParamList& params) {
  std::vector<Tensor*> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.second);
  return out;
}

}  // namespace colson
