#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "colson/nets.hpp"
#include "gradcheck.hpp"

using namespace colson;
using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

NetConfig small_config() {
  NetConfig c;
  c.hidden = 8;
  c.heads = 2;
  c.mlp_hidden = 8;
  c.time_embedding = 4;
  return c;
}

Observation random_observation(std::mt19937_64& rng, int n_peds) {
  std::uniform_real_distribution<double> u(-3, 3);
  Observation o;
  for (double& v : o.robot) v = u(rng);
  for (int k = 0; k < n_peds; ++k) o.pedestrians.push_back({u(rng), u(rng), u(rng) / 3, u(rng) / 3});
  return o;
}

GraphBatch batch_of(const std::vector<Observation>& obs) {
  std::vector<const Observation*> ptrs;
  for (const auto& o : obs) ptrs.push_back(&o);
  return GraphBatch::from_observations(ptrs);
}

// Dense re-implementation of the encoder equations with plain loops.
std::vector<double> affine(const Linear& l, const std::vector<double>& x) {
  const std::size_t in = l.weight.rows(), out = l.weight.cols();
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = l.bias[o];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * l.weight.at(i, o);
    y[o] = s;
  }
  return y;
}

std::vector<double> dense_encode(const GraphEncoder& enc, const Observation& obs,
                                 std::vector<std::vector<double>>* weights = nullptr) {
  std::vector<std::vector<double>> src;
  const std::vector<double> robot(obs.robot.begin(), obs.robot.end());
  const std::vector<double> h_robot = affine(enc.robot_embed, robot);
  src.push_back(affine(enc.lin_source, h_robot));
  for (const auto& p : obs.pedestrians) {
    src.push_back(affine(enc.lin_source, affine(enc.ped_embed, std::vector<double>(p.begin(), p.end()))));
  }
  const std::vector<double> dst = affine(enc.lin_target, h_robot);
  const std::size_t heads = enc.attention.rows(), C = enc.attention.cols();
  std::vector<double> out(heads * C, 0.0);
  if (weights) weights->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> e;
    for (const auto& s : src) {
      double l = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double z = s[h * C + c] + dst[h * C + c];
        l += enc.attention.at(h, c) * (z > 0 ? z : enc.slope * z);
      }
      e.push_back(l);
    }
    const double mx = *std::max_element(e.begin(), e.end());
    double total = 0.0;
    for (double& v : e) total += (v = std::exp(v - mx));
    for (double& v : e) v /= total;
    for (std::size_t j = 0; j < src.size(); ++j) {
      for (std::size_t c = 0; c < C; ++c) out[h * C + c] += e[j] * src[j][h * C + c];
    }
    if (weights) weights->push_back(e);
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += enc.out_bias[k];
  return out;
}

Tensor encode(GraphEncoder& enc, const GraphBatch& batch,
              std::vector<std::vector<std::vector<double>>>* weights = nullptr) {
  Tape tape(false);
  return tape.value(enc.forward(tape, batch, weights));
}

}  // namespace

TEST(GraphBatch, PadsAndCounts) {
  std::mt19937_64 rng(1);
  const std::vector<Observation> obs{random_observation(rng, 0), random_observation(rng, 3),
                                     random_observation(rng, 1)};
  const GraphBatch g = batch_of(obs);
  EXPECT_EQ(g.batch, 3u);
  EXPECT_EQ(g.max_peds, 3u);
  EXPECT_EQ(g.counts, (std::vector<int>{0, 3, 1}));
  EXPECT_EQ(g.peds.size(), 3u * 3u * kPedestrianFeatures);
  EXPECT_EQ(g.peds[(1 * 3 + 2) * 4 + 1], obs[1].pedestrians[2][1]);
  EXPECT_EQ(g.peds[(2 * 3 + 1) * 4], 0.0);
}

TEST(GraphBatch, FullyConnectedTopology) {
  for (int n = 0; n < 6; ++n) {
    const auto edges = graph_edges(n);
    EXPECT_EQ(edges.size(), static_cast<std::size_t>((n + 1) * (n + 1)));
    for (int a = 0; a <= n; ++a) {
      for (int b = 0; b <= n; ++b) {
        EXPECT_EQ(std::count(edges.begin(), edges.end(), std::make_pair(a, b)), 1);
      }
    }
  }
}

TEST(Encoder, ZeroPedestriansIsSelfLoopTransform) {
  std::mt19937_64 rng(2);
  GraphEncoder enc(NetConfig{}, rng);
  const Observation o = random_observation(rng, 0);
  const Tensor h = encode(enc, GraphBatch::single(o));
  // Single node: attention weight 1 on itself, output is its value transform.
  const std::vector<double> src =
      affine(enc.lin_source, affine(enc.robot_embed, std::vector<double>(o.robot.begin(), o.robot.end())));
  for (std::size_t k = 0; k < src.size(); ++k) EXPECT_NEAR(h[k], src[k] + enc.out_bias[k], 1e-12);
}

TEST(Encoder, IdenticalNodesShareAttentionEqually) {
  std::mt19937_64 rng(3);
  GraphEncoder enc(NetConfig{}, rng);
  // Make every node embed to the same vector.
  std::fill(enc.robot_embed.weight.storage().begin(), enc.robot_embed.weight.storage().end(), 0.0);
  std::fill(enc.ped_embed.weight.storage().begin(), enc.ped_embed.weight.storage().end(), 0.0);
  enc.ped_embed.bias = enc.robot_embed.bias;
  for (int k = 1; k <= 6; ++k) {
    std::vector<std::vector<std::vector<double>>> w;
    encode(enc, GraphBatch::single(random_observation(rng, k)), &w);
    for (const auto& head : w[0]) {
      ASSERT_EQ(head.size(), static_cast<std::size_t>(k + 1));
      for (double a : head) EXPECT_NEAR(a, 1.0 / (k + 1), 1e-12);
    }
  }
}

TEST(Encoder, IdenticalPedestriansGetEqualWeights) {
  std::mt19937_64 rng(4);
  GraphEncoder enc(NetConfig{}, rng);
  Observation o = random_observation(rng, 1);
  for (int k = 0; k < 4; ++k) o.pedestrians.push_back(o.pedestrians[0]);
  std::vector<std::vector<std::vector<double>>> w;
  encode(enc, GraphBatch::single(o), &w);
  for (const auto& head : w[0]) {
    double total = 0.0;
    for (double a : head) total += a;
    EXPECT_NEAR(total, 1.0, 1e-12);
    for (std::size_t j = 2; j < head.size(); ++j) EXPECT_NEAR(head[j], head[1], 1e-15);
  }
}

TEST(Encoder, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    GraphEncoder enc(NetConfig{}, rng);
    for (double& v : enc.out_bias.storage()) v = std::normal_distribution<double>(0, 0.1)(rng);
    std::vector<Observation> obs;
    for (int k : {0, 5, 2, 9}) obs.push_back(random_observation(rng, k));
    std::vector<std::vector<std::vector<double>>> w;
    const Tensor h = encode(enc, batch_of(obs), &w);
    for (std::size_t b = 0; b < obs.size(); ++b) {
      std::vector<std::vector<double>> dense_w;
      const std::vector<double> expected = dense_encode(enc, obs[b], &dense_w);
      for (std::size_t k = 0; k < expected.size(); ++k) ASSERT_NEAR(h.at(b, k), expected[k], 1e-9) << seed;
      for (std::size_t hd = 0; hd < dense_w.size(); ++hd) {
        for (std::size_t j = 0; j < dense_w[hd].size(); ++j) ASSERT_NEAR(w[b][hd][j], dense_w[hd][j], 1e-12);
      }
    }
  }
}

TEST(Encoder, PermutationInvariant) {
  std::mt19937_64 rng(5);
  GraphEncoder enc(NetConfig{}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Observation o = random_observation(rng, 7);
    const Tensor a = encode(enc, GraphBatch::single(o));
    std::shuffle(o.pedestrians.begin(), o.pedestrians.end(), rng);
    const Tensor b = encode(enc, GraphBatch::single(o));
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-9);
  }
}

TEST(Encoder, AcceptsAnyPedestrianCount) {
  std::mt19937_64 rng(6);
  GraphEncoder enc(NetConfig{}, rng);
  for (int k : {0, 1, 20, 40}) {
    const Tensor h = encode(enc, GraphBatch::single(random_observation(rng, k)));
    EXPECT_EQ(h.shape(), (nd::Shape{1, 64}));
    for (double v : h.storage()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Encoder, BatchRowsAreIndependent) {
  std::mt19937_64 rng(7);
  GraphEncoder enc(NetConfig{}, rng);
  const std::vector<Observation> obs{random_observation(rng, 2), random_observation(rng, 6)};
  const Tensor together = encode(enc, batch_of(obs));
  for (std::size_t b = 0; b < 2; ++b) {
    const Tensor alone = encode(enc, GraphBatch::single(obs[b]));
    for (std::size_t k = 0; k < alone.size(); ++k) EXPECT_NEAR(together.at(b, k), alone[k], 1e-12);
  }
}

TEST(Encoder, HiddenMustSplitIntoHeads) {
  std::mt19937_64 rng(1);
  NetConfig bad;
  bad.hidden = 10;
  bad.heads = 4;
  EXPECT_THROW(GraphEncoder(bad, rng), std::invalid_argument);
}

TEST(Encoder, PooledIsElementwiseMax) {
  std::mt19937_64 rng(8);
  GraphEncoder enc(small_config(), rng);
  const Observation o = random_observation(rng, 3);
  Tape tape(false);
  const Tensor pooled = tape.value(enc.pooled(tape, GraphBatch::single(o)));
  std::vector<std::vector<double>> rows{
      affine(enc.lin_source, affine(enc.robot_embed, std::vector<double>(o.robot.begin(), o.robot.end())))};
  for (const auto& p : o.pedestrians) {
    rows.push_back(affine(enc.lin_source, affine(enc.ped_embed, std::vector<double>(p.begin(), p.end()))));
  }
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    double mx = -1e300;
    for (const auto& r : rows) mx = std::max(mx, r[k]);
    EXPECT_NEAR(pooled[k], mx, 1e-12);
  }
}

TEST(TimeEmbedding, SinCosLayout) {
  const std::vector<int> taus{1, 7};
  const Tensor t = time_embedding(taus, 4);
  EXPECT_NEAR(t.at(0, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(t.at(0, 2), std::cos(1.0), 1e-15);
  EXPECT_NEAR(t.at(1, 1), std::sin(7.0 * std::exp(-std::log(10000.0) / 2)), 1e-15);
}

TEST(ScoreNetwork, ShapeDeterminismAndRange) {
  std::mt19937_64 rng(9);
  ScoreNetwork net(NetConfig{}, 10, rng);
  const GraphBatch g = GraphBatch::single(random_observation(rng, 4));
  auto run = [&](int tau) {
    Tape tape(false);
    const Var h = net.encode(tape, g);
    const Var x = tape.constant(Tensor({1, 2}, std::vector<double>{0.3, -0.4}));
    const std::vector<int> taus{tau};
    return tape.value(net.score(tape, h, x, taus));
  };
  const Tensor a = run(3);
  EXPECT_EQ(a.shape(), (nd::Shape{1, 2}));
  EXPECT_EQ(a.storage(), run(3).storage());
  EXPECT_NE(a.storage(), run(4).storage());
  EXPECT_THROW(run(0), std::out_of_range);
  EXPECT_THROW(run(11), std::out_of_range);
  EXPECT_NO_THROW(run(10));
}

TEST(Gradcheck, EncoderParameters) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    GraphEncoder enc(small_config(), rng);
    const std::vector<Observation> obs{random_observation(rng, static_cast<int>(seed % 4)),
                                       random_observation(rng, 3)};
    const GraphBatch g = batch_of(obs);
    const Tensor r = check::random_tensor({2, 8}, rng);
    ParamList params;
    enc.collect("enc.", params);
    const auto res = check::gradcheck_tensors(params, [&](Tape& t) {
      return t.sum(t.mul(enc.forward(t, g), t.constant(r)));
    });
    ASSERT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " " << res.worst;
  }
}

TEST(Gradcheck, PooledEncoderParameters) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 1000);
    GraphEncoder enc(small_config(), rng);
    const std::vector<Observation> obs{random_observation(rng, 2), random_observation(rng, 0)};
    const GraphBatch g = batch_of(obs);
    const Tensor r = check::random_tensor({2, 8}, rng);
    ParamList params;
    enc.collect("enc.", params);
    const auto res = check::gradcheck_tensors(params, [&](Tape& t) {
      return t.sum(t.mul(enc.pooled(t, g), t.constant(r)));
    });
    ASSERT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " " << res.worst;
  }
}

TEST(Gradcheck, ScoreNetworkParameters) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 2000);
    ScoreNetwork net(small_config(), 10, rng);
    const std::vector<Observation> obs{random_observation(rng, 3), random_observation(rng, 1)};
    const GraphBatch g = batch_of(obs);
    const Tensor x = check::random_tensor({2, 2}, rng);
    const std::vector<int> taus{1 + static_cast<int>(seed % 10), 5};
    const Tensor r = check::random_tensor({2, 2}, rng);
    ParamList params;
    net.collect("actor.", params);
    const auto res = check::gradcheck_tensors(params, [&](Tape& t) {
      const Var out = net.score(t, net.encode(t, g), t.constant(x), taus);
      return t.sum(t.mul(out, t.constant(r)));
    });
    ASSERT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " " << res.worst;
  }
}

TEST(Gradcheck, CriticParameters) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 3000);
    NetConfig cfg = small_config();
    cfg.critic_pooled = seed % 2 == 1;
    Critic critic(cfg, rng);
    const std::vector<Observation> obs{random_observation(rng, 2), random_observation(rng, 4)};
    const GraphBatch g = batch_of(obs);
    const Tensor a = check::random_tensor({2, 2}, rng);
    ParamList params;
    critic.collect("critic1.", params);
    const auto res = check::gradcheck_tensors(params, [&](Tape& t) {
      return t.sum(critic.q(t, critic.encode(t, g), t.constant(a)));
    });
    ASSERT_LT(res.max_relative_error, 1e-4) << "seed " << seed << " " << res.worst;
  }
}

TEST(Gradcheck, CriticActionInput) {
  // Full-size critic, as used in training.
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed + 4000);
    CriticPair critics(NetConfig{}, rng);
    const Observation o = random_observation(rng, static_cast<int>(seed % 6));
    std::uniform_real_distribution<double> u(-1, 1);
    const Action a{u(rng), u(rng)};
    Tape tape;
    Critic& c = critics.get(1 + static_cast<int>(seed % 2), false);
    const GraphBatch g = GraphBatch::single(o);
    const Var av = tape.input(Tensor({1, 2}, std::vector<double>{a.vx, a.vy}));
    const Tensor grad = tape.gradient(c.q(tape, c.encode(tape, g), av), av);
    const double h = 1e-5;
    const int which = 1 + static_cast<int>(seed % 2);
    const double gx = (q_value(critics, o, {a.vx + h, a.vy}, which, false) -
                       q_value(critics, o, {a.vx - h, a.vy}, which, false)) / (2 * h);
    const double gy = (q_value(critics, o, {a.vx, a.vy + h}, which, false) -
                       q_value(critics, o, {a.vx, a.vy - h}, which, false)) / (2 * h);
    EXPECT_LT(check::relative_error(grad[0], gx), 1e-3) << seed;
    EXPECT_LT(check::relative_error(grad[1], gy), 1e-3) << seed;
  }
}

TEST(CriticPair, TargetsStartAsCopiesAndPolyakZeroCopies) {
  std::mt19937_64 rng(10);
  CriticPair critics(NetConfig{}, rng);
  const Observation o = random_observation(rng, 3);
  for (int which : {1, 2}) {
    EXPECT_EQ(q_value(critics, o, {0.2, 0.1}, which, false), q_value(critics, o, {0.2, 0.1}, which, true));
  }
  EXPECT_NE(q_value(critics, o, {0.2, 0.1}, 1, false), q_value(critics, o, {0.2, 0.1}, 2, false));

  // Perturb the main critic, then a rho = 0 update must copy it exactly.
  ParamList main, target;
  critics.main[0].collect("critic1.", main);
  critics.target[0].collect("target1.", target);
  for (auto& [name, t] : main) {
    for (double& v : t->storage()) v += 0.01;
  }
  EXPECT_NE(q_value(critics, o, {0.2, 0.1}, 1, false), q_value(critics, o, {0.2, 0.1}, 1, true));
  polyak_update(main, target, 0.0);
  EXPECT_EQ(q_value(critics, o, {0.2, 0.1}, 1, false), q_value(critics, o, {0.2, 0.1}, 1, true));
  const double q1 = q_value(critics, o, {0.5, -0.5}, 1, false);
  const double q2 = q_value(critics, o, {0.5, -0.5}, 2, false);
  EXPECT_LE(std::min(q1, q2), q1);
  EXPECT_LE(std::min(q1, q2), q2);
}

TEST(CriticPair, CollectNames) {
  std::mt19937_64 rng(11);
  CriticPair critics(small_config(), rng);
  ParamList all;
  critics.collect(all);
  for (const char* prefix : {"critic1.", "critic2.", "target1.", "target2."}) {
    EXPECT_TRUE(std::any_of(all.begin(), all.end(), [&](const auto& p) { return p.first.rfind(prefix, 0) == 0; }));
  }
}

TEST(Polyak, Cases) {
  Tensor m({1}, std::vector<double>{4.0}), t({1}, std::vector<double>{2.0});
  const ParamList main{{"w", &m}}, target{{"w", &t}};
  polyak_update(main, target, 0.5);
  EXPECT_EQ(t[0], 3.0);
  polyak_update(main, target, 1.0);
  EXPECT_EQ(t[0], 3.0);
  polyak_update(main, target, 0.0);
  EXPECT_EQ(t[0], 4.0);
  Tensor wrong({2}, 0.0);
  EXPECT_THROW(polyak_update(main, ParamList{{"w", &wrong}}, 0.5), nd::ShapeError);
  EXPECT_THROW(polyak_update(main, ParamList{}, 0.5), nd::ShapeError);
}

TEST(Polyak, ContractsDistanceGeometrically) {
  std::mt19937_64 rng(12);
  Tensor m = check::random_tensor({20}, rng), t = check::random_tensor({20}, rng);
  const ParamList main{{"w", &m}}, target{{"w", &t}};
  auto distance = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < 20; ++i) s += (t[i] - m[i]) * (t[i] - m[i]);
    return std::sqrt(s);
  };
  const double d0 = distance();
  for (int k = 1; k <= 50; ++k) {
    polyak_update(main, target, 0.9);
    EXPECT_NEAR(distance(), d0 * std::pow(0.9, k), 1e-12 * d0);
  }
}

TEST(Snapshot, RestoreNamesOffendingTensors) {
  std::mt19937_64 rng(13);
  ScoreNetwork a(small_config(), 10, rng);
  ScoreNetwork b(small_config(), 10, rng);
  ParamList pa, pb;
  a.collect("actor.", pa);
  b.collect("actor.", pb);
  restore(pb, snapshot(pa));
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].second->storage(), pb[k].second->storage());

  NetConfig wide = small_config();
  wide.hidden = 12;
  ScoreNetwork c(wide, 10, rng);
  ParamList pc;
  c.collect("actor.", pc);
  try {
    restore(pc, snapshot(pa));
    FAIL() << "expected ShapeError";
  } catch (const nd::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("actor.encoder.robot_embed.weight"), std::string::npos);
  }
  nd::NamedTensors partial = snapshot(pa);
  partial.erase("actor.head.0.bias");
  try {
    restore(pb, partial);
    FAIL() << "expected ShapeError";
  } catch (const nd::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("actor.head.0.bias (missing)"), std::string::npos);
  }
}
