#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "colson/ndgrad.hpp"
#include "colson/sim.hpp"

namespace colson {

struct NetConfig {
  std::size_t hidden = 64;       // node embedding / GNN output width
  std::size_t heads = 4;
  std::size_t mlp_hidden = 256;  // score network and critic MLP width
  std::size_t time_embedding = 16;
  double attention_slope = 0.2;
  // Critic consumes the max over all node features instead of the robot node.
  bool critic_pooled = false;
};

inline constexpr std::size_t kRobotFeatures = 5;
inline constexpr std::size_t kPedestrianFeatures = 4;
inline constexpr std::size_t kActionDim = 2;

// A batch of robot-centred graphs. Pedestrian rows are padded to
// `max_peds` per graph; `counts` says how many are real.
struct GraphBatch {
  std::size_t batch = 0;
  std::size_t max_peds = 0;
  std::vector<double> robot;  // [batch, 5]
  std::vector<double> peds;   // [batch * max_peds, 4]
  std::vector<int> counts;

  static GraphBatch from_observations(std::span<const Observation* const> observations);
  static GraphBatch single(const Observation& observation);
};

// Directed edges (source, destination) of a graph with n pedestrians: every
// ordered node pair plus self-loops; node 0 is the robot.
std::vector<std::pair<int, int>> graph_edges(int n_pedestrians);

using ParamList = std::vector<std::pair<std::string, nd::Tensor*>>;

struct Linear {
  nd::Tensor weight;  // [in, out]
  nd::Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  nd::Var forward(nd::Tape& tape, nd::Var x);
  void collect(const std::string& prefix, ParamList& out);
};

struct Mlp {
  std::vector<Linear> layers;  // relu between layers, none after the last

  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, std::mt19937_64& rng);
  nd::Var forward(nd::Tape& tape, nd::Var x);
  void collect(const std::string& prefix, ParamList& out);
};

// Per-type embedding followed by one multi-head GATv2 layer. Only the robot
// node's output is produced since nothing downstream reads the others.
struct GraphEncoder {
  Linear robot_embed;
  Linear ped_embed;
  Linear lin_source;
  Linear lin_target;
  nd::Tensor attention;  // [heads, hidden / heads]
  nd::Tensor out_bias;   // [hidden]
  std::size_t heads = 1;
  double slope = 0.2;

  GraphEncoder() = default;
  GraphEncoder(const NetConfig& cfg, std::mt19937_64& rng);

  // Robot feature [batch, hidden]. `weights` optionally receives the
  // attention weights per graph, head and source node (robot first).
  nd::Var forward(nd::Tape& tape, const GraphBatch& batch,
                  std::vector<std::vector<std::vector<double>>>* weights = nullptr);
  // Max over the robot and real pedestrian embeddings after the value
  // transform; used by the pooled critic variant.
  nd::Var pooled(nd::Tape& tape, const GraphBatch& batch);
  void collect(const std::string& prefix, ParamList& out);
  std::size_t hidden() const { return out_bias.size(); }
};

// Sinusoidal embedding of the diffusion step, [taus.size(), dim].
nd::Tensor time_embedding(std::span<const int> taus, std::size_t dim);

// Diffusion score network conditioned on the encoded robot feature.
struct ScoreNetwork {
  GraphEncoder encoder;
  Mlp head;
  std::size_t time_dim = 16;
  int max_tau = 0;  // checked against incoming diffusion steps when > 0

  ScoreNetwork() = default;
  ScoreNetwork(const NetConfig& cfg, int diffusion_steps, std::mt19937_64& rng);

  nd::Var encode(nd::Tape& tape, const GraphBatch& batch) { return encoder.forward(tape, batch); }
  // Score [batch, 2] for noisy actions x [batch, 2] at steps taus (1-based).
  nd::Var score(nd::Tape& tape, nd::Var features, nd::Var x, std::span<const int> taus);
  void collect(const std::string& prefix, ParamList& out);
};

struct Critic {
  GraphEncoder encoder;
  Mlp head;
  bool pooled = false;

  Critic() = default;
  Critic(const NetConfig& cfg, std::mt19937_64& rng);

  nd::Var encode(nd::Tape& tape, const GraphBatch& batch);
  // Q [batch, 1] from encoded features and normalized actions [batch, 2].
  nd::Var q(nd::Tape& tape, nd::Var features, nd::Var action);
  void collect(const std::string& prefix, ParamList& out);
};

struct CriticPair {
  Critic main[2];
  Critic target[2];

  CriticPair() = default;
  CriticPair(const NetConfig& cfg, std::mt19937_64& rng);

  Critic& get(int which, bool use_target) { return use_target ? target[which - 1] : main[which - 1]; }
  void collect(ParamList& out);  // critic1./critic2./target1./target2.
};

// Single-sample convenience: Q of one observation/action pair.
double q_value(CriticPair& critics, const Observation& obs, const Action& normalized_action, int which,
               bool use_target);

// target <- rho * target + (1 - rho) * main, elementwise. Throws
// nd::ShapeError if the lists do not line up.
void polyak_update(const ParamList& main, const ParamList& target, double rho);

// Copies all parameters into a named-tensor map, or loads them back. Loading
// throws nd::ShapeError naming every missing or mis-shaped tensor.
nd::NamedTensors snapshot(const ParamList& params);
void restore(const ParamList& params, const nd::NamedTensors& tensors);

std::vector<nd::Tensor*> tensors_of(const ParamList& params);

}  // namespace colson
