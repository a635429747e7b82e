#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>

#include "colson/ndgrad.hpp"
#include "gradcheck.hpp"

using namespace colson::nd;
using colson::check::GradcheckResult;
using colson::check::gradcheck;
using colson::check::random_tensor;

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
}

TEST(Ops, IdentityMatmul) {
  std::mt19937_64 rng(1);
  Tape tape;
  Tensor eye({3, 3}, 0.0);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const Tensor a = random_tensor({3, 4}, rng);
  const Var out = tape.matmul(tape.constant(eye), tape.constant(a));
  EXPECT_EQ(tape.value(out).storage(), a.storage());
  EXPECT_THROW(tape.matmul(tape.constant(a), tape.constant(a)), ShapeError);
}

TEST(Ops, SoftmaxOfEqualLogits) {
  for (std::size_t k = 1; k <= 7; ++k) {
    Tape tape;
    const Var s = tape.softmax(tape.constant(Tensor({1, k}, 2.5)), 1);
    for (double v : tape.value(s).storage()) EXPECT_NEAR(v, 1.0 / k, 1e-15);
  }
}

TEST(Ops, LeakyRelu) {
  Tape tape;
  const Var y = tape.leaky_relu(tape.constant(Tensor({2}, std::vector<double>{-1.0, 2.0})), 0.2);
  EXPECT_DOUBLE_EQ(tape.value(y)[0], -0.2);
  EXPECT_DOUBLE_EQ(tape.value(y)[1], 2.0);
  const Var r = tape.relu(tape.constant(Tensor({2}, std::vector<double>{-1.0, 2.0})));
  EXPECT_EQ(tape.value(r)[0], 0.0);
}

TEST(Ops, ShapeMismatchIsTyped) {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({3, 2}));
  EXPECT_THROW(tape.add(a, b), ShapeError);
  EXPECT_THROW(tape.mul(a, b), ShapeError);
  EXPECT_THROW(tape.add_row(a, tape.constant(Tensor({2}))), ShapeError);
  EXPECT_THROW(tape.slice(a, 1, 2, 5), ShapeError);
  EXPECT_THROW(tape.reshape(a, {4}), ShapeError);
  EXPECT_THROW(tape.concat({a, b}, 0), ShapeError);
  EXPECT_THROW(tape.softmax(a, 2), ShapeError);
}

TEST(Ops, ConcatSliceReshape) {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  const Var b = tape.constant(Tensor({2, 1}, std::vector<double>{5, 6}));
  const Var c = tape.concat({a, b}, 1);
  EXPECT_EQ(tape.value(c).storage(), (std::vector<double>{1, 2, 5, 3, 4, 6}));
  const Var s = tape.slice(c, 1, 1, 3);
  EXPECT_EQ(tape.value(s).storage(), (std::vector<double>{2, 5, 4, 6}));
  const Var r = tape.reshape(c, {3, 2});
  EXPECT_EQ(tape.value(r).shape(), (Shape{3, 2}));
  const Var rows = tape.concat({a, a}, 0);
  EXPECT_EQ(tape.value(rows).storage(), (std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4}));
  EXPECT_EQ(tape.value(tape.sum(a, 0)).storage(), (std::vector<double>{4, 6}));
  EXPECT_EQ(tape.value(tape.sum(a, 1)).storage(), (std::vector<double>{3, 7}));
  EXPECT_EQ(tape.value(tape.mean(a)).item(), 2.5);
}

TEST(Backward, PowerRule) {
  Tensor x({}, std::vector<double>{3.0});
  Tape tape;
  const Var xv = tape.param(x);
  tape.backward(tape.mul(xv, xv));
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, LinearityGivesColumnSums) {
  std::mt19937_64 rng(3);
  const Tensor w = random_tensor({4, 3}, rng);
  Tensor x = random_tensor({3, 1}, rng);
  Tape tape;
  const Var xv = tape.param(x);
  tape.backward(tape.sum(tape.matmul(tape.constant(w), xv)));
  for (std::size_t j = 0; j < 3; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 4; ++i) col += w.at(i, j);
    EXPECT_NEAR(x.grad()[j], col, 1e-14);
  }
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x({2}, 1.0);
  Tape tape;
  const Var xv = tape.param(x);
  EXPECT_THROW(tape.backward(tape.scale(xv, 2.0)), ShapeError);
  Tape inference(false);
  const Var y = inference.param(x);
  EXPECT_THROW(inference.backward(inference.sum(y)), std::logic_error);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x({}, std::vector<double>{2.0});
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    const Var xv = tape.param(x);
    tape.backward(tape.mul(xv, xv));
  }
  EXPECT_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, MinimumRoutesToSmallerAndTiesToFirst) {
  Tensor a({3}, std::vector<double>{1.0, 5.0, 2.0});
  Tensor b({3}, std::vector<double>{3.0, 4.0, 2.0});
  Tape tape;
  tape.backward(tape.sum(tape.minimum(tape.param(a), tape.param(b))));
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_EQ(a.grad()[1], 0.0);
  EXPECT_EQ(a.grad()[2], 1.0);
  EXPECT_EQ(b.grad()[0], 0.0);
  EXPECT_EQ(b.grad()[1], 1.0);
  EXPECT_EQ(b.grad()[2], 0.0);
}

TEST(Backward, LeavesForwardValuesUnchanged) {
  std::mt19937_64 rng(8);
  Tensor w = random_tensor({3, 3}, rng);
  const Tensor w_before = w;
  Tape tape;
  const Var x = tape.constant(random_tensor({2, 3}, rng));
  const Var h = tape.tanh(tape.matmul(x, tape.param(w)));
  const Var loss = tape.sum(tape.mul(h, h));
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < tape.size(); ++i) before.push_back(tape.value(Var{i}));
  tape.backward(loss);
  for (std::size_t i = 0; i < tape.size(); ++i) EXPECT_EQ(tape.value(Var{i}).storage(), before[i].storage());
  EXPECT_EQ(w.storage(), w_before.storage());
}

TEST(Backward, BitwiseDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor w1 = random_tensor({5, 8}, rng), w2 = random_tensor({8, 1}, rng);
    const Tensor x = random_tensor({6, 5}, rng);
    Tape tape;
    const Var h = tape.leaky_relu(tape.matmul(tape.constant(x), tape.param(w1)), 0.2);
    tape.backward(tape.mean(tape.matmul(h, tape.param(w2))));
    std::vector<double> g(w1.grad().begin(), w1.grad().end());
    g.insert(g.end(), w2.grad().begin(), w2.grad().end());
    return g;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

TEST(InputGradient, DotProduct) {
  Tape tape;
  const Tensor a({1, 3}, std::vector<double>{0.5, -1.0, 2.0});
  const Var av = tape.input(a);
  const Tensor g = tape.gradient(tape.sum(tape.mul(av, av)), av);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(g[i], 2.0 * a[i]);
}

TEST(InputGradient, LinearIsIndependentOfInput) {
  const Tensor w({3, 1}, std::vector<double>{0.3, -0.7, 1.1});
  for (double shift : {-2.0, 0.0, 5.0}) {
    Tape tape;
    const Var av = tape.input(Tensor({1, 3}, shift));
    const Tensor g = tape.gradient(tape.sum(tape.matmul(av, tape.constant(w))), av);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(g[i], w[i]);
  }
}

TEST(InputGradient, DoesNotTouchParameters) {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor({3, 1}, rng);
  Tape tape;
  const Var av = tape.input(random_tensor({2, 3}, rng));
  const Var q = tape.sum(tape.tanh(tape.matmul(av, tape.param(w))));
  const Tensor g = tape.gradient(q, av);
  EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(g.shape(), (Shape{2, 3}));
}

TEST(InputGradient, RejectsForeignInput) {
  Tape tape;
  const Var c = tape.constant(Tensor({1}, 1.0));
  const Var x = tape.input(Tensor({1}, 1.0));
  EXPECT_THROW(tape.gradient(tape.sum(x), c), std::invalid_argument);
  EXPECT_THROW(tape.gradient(tape.sum(x), Var{999}), std::invalid_argument);
}

TEST(InputGradient, UnreachableOutputGivesZero) {
  Tape tape;
  const Var x = tape.input(Tensor({2}, 1.0));
  const Var y = tape.input(Tensor({2}, 3.0));
  const Tensor g = tape.gradient(tape.sum(y), x);
  EXPECT_EQ(g.storage(), (std::vector<double>{0.0, 0.0}));
}

// Finite-difference checks, one per op, randomized over seeds.

namespace {

void expect_gradcheck(const char* name, const std::function<Var(Tape&, std::vector<Var>&)>& fn,
                      const std::vector<Shape>& shapes, double positive_shift = 0.0) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 13);
    std::vector<Tensor> leaves;
    for (const auto& s : shapes) {
      Tensor t = random_tensor(s, rng);
      for (double& v : t.storage()) v += positive_shift;
      leaves.push_back(std::move(t));
    }
    const GradcheckResult r = gradcheck(fn, leaves, seed);
    ASSERT_LT(r.max_relative_error, 1e-4) << name << " seed " << seed << " worst " << r.worst;
  }
}

}  // namespace

TEST(Gradcheck, Matmul) {
  expect_gradcheck("matmul", [](Tape& t, std::vector<Var>& v) { return t.matmul(v[0], v[1]); },
                   {{3, 4}, {4, 2}});
}

TEST(Gradcheck, Elementwise) {
  expect_gradcheck("add", [](Tape& t, std::vector<Var>& v) { return t.add(v[0], v[1]); }, {{2, 3}, {2, 3}});
  expect_gradcheck("sub", [](Tape& t, std::vector<Var>& v) { return t.sub(v[0], v[1]); }, {{2, 3}, {2, 3}});
  expect_gradcheck("mul", [](Tape& t, std::vector<Var>& v) { return t.mul(v[0], v[1]); }, {{2, 3}, {2, 3}});
  expect_gradcheck("minimum", [](Tape& t, std::vector<Var>& v) { return t.minimum(v[0], v[1]); },
                   {{4, 3}, {4, 3}});
  expect_gradcheck("add_row", [](Tape& t, std::vector<Var>& v) { return t.add_row(v[0], v[1]); }, {{3, 4}, {4}});
  expect_gradcheck("scale", [](Tape& t, std::vector<Var>& v) { return t.scale(v[0], -1.7); }, {{5}});
  expect_gradcheck("add_scalar", [](Tape& t, std::vector<Var>& v) { return t.mul(t.add_scalar(v[0], 0.3), v[0]); },
                   {{5}});
}

TEST(Gradcheck, Activations) {
  expect_gradcheck("relu", [](Tape& t, std::vector<Var>& v) { return t.relu(v[0]); }, {{4, 5}});
  expect_gradcheck("leaky_relu", [](Tape& t, std::vector<Var>& v) { return t.leaky_relu(v[0], 0.2); }, {{4, 5}});
  expect_gradcheck("tanh", [](Tape& t, std::vector<Var>& v) { return t.tanh(v[0]); }, {{4, 5}});
  expect_gradcheck("softmax0", [](Tape& t, std::vector<Var>& v) { return t.softmax(v[0], 0); }, {{4, 3}});
  expect_gradcheck("softmax1", [](Tape& t, std::vector<Var>& v) { return t.softmax(v[0], 1); }, {{4, 3}});
}

TEST(Gradcheck, Reductions) {
  expect_gradcheck("sum", [](Tape& t, std::vector<Var>& v) { return t.mul(t.sum(v[0]), t.sum(v[0])); }, {{3, 2}});
  expect_gradcheck("sum0", [](Tape& t, std::vector<Var>& v) { return t.sum(v[0], 0); }, {{3, 2}});
  expect_gradcheck("sum1", [](Tape& t, std::vector<Var>& v) { return t.sum(v[0], 1); }, {{3, 2}});
  expect_gradcheck("mean", [](Tape& t, std::vector<Var>& v) { return t.mul(t.mean(v[0]), t.mean(v[0])); },
                   {{3, 2}});
}

TEST(Gradcheck, Structural) {
  expect_gradcheck("concat1", [](Tape& t, std::vector<Var>& v) { return t.concat({v[0], v[1], v[0]}, 1); },
                   {{2, 3}, {2, 1}});
  expect_gradcheck("concat0", [](Tape& t, std::vector<Var>& v) { return t.concat({v[0], v[1]}, 0); },
                   {{2, 3}, {1, 3}});
  expect_gradcheck("slice", [](Tape& t, std::vector<Var>& v) { return t.slice(v[0], 1, 1, 3); }, {{3, 4}});
  expect_gradcheck("slice0", [](Tape& t, std::vector<Var>& v) { return t.slice(v[0], 0, 1, 2); }, {{3, 4}});
  expect_gradcheck("reshape", [](Tape& t, std::vector<Var>& v) { return t.tanh(t.reshape(v[0], {4, 3})); },
                   {{3, 4}});
}

TEST(Gradcheck, ThreeLayerMlp) {
  expect_gradcheck(
      "mlp",
      [](Tape& t, std::vector<Var>& v) {
        Var h = t.relu(t.add_row(t.matmul(v[0], v[1]), v[2]));
        h = t.relu(t.add_row(t.matmul(h, v[3]), v[4]));
        return t.add_row(t.matmul(h, v[5]), v[6]);
      },
      {{4, 3}, {3, 8}, {8}, {8, 8}, {8}, {8, 2}, {2}});
}

TEST(Gradcheck, Gatv2Attention) {
  const std::vector<int> counts{0, 2, 3};
  expect_gradcheck(
      "gatv2",
      [&](Tape& t, std::vector<Var>& v) { return t.gatv2_attention(v[0], v[1], v[2], v[3], counts, 3, 0.2); },
      {{3, 6}, {9, 6}, {3, 6}, {2, 3}});
}

TEST(Gradcheck, GraphMaxPool) {
  const std::vector<int> counts{0, 2, 3, 1};
  expect_gradcheck(
      "max_pool", [&](Tape& t, std::vector<Var>& v) { return t.graph_max_pool(v[0], v[1], counts, 3); },
      {{4, 5}, {12, 5}});
}

TEST(Gatv2, PaddingRowsGetNoGradient) {
  std::mt19937_64 rng(5);
  Tensor r = random_tensor({2, 4}, rng), p = random_tensor({6, 4}, rng), d = random_tensor({2, 4}, rng),
         a = random_tensor({2, 2}, rng);
  const std::vector<int> counts{1, 2};
  Tape tape;
  const Var out = tape.gatv2_attention(tape.param(r), tape.param(p), tape.param(d), tape.param(a), counts, 3, 0.2);
  tape.backward(tape.sum(tape.mul(out, out)));
  // Graph 0 uses row 0 only; graph 1 uses rows 3 and 4.
  for (std::size_t row : {1u, 2u, 5u}) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(p.grad()[row * 4 + c], 0.0);
  }
}

TEST(Gatv2, RejectsBadCounts) {
  Tape tape;
  const Var r = tape.constant(Tensor({1, 4})), p = tape.constant(Tensor({2, 4})), a = tape.constant(Tensor({2, 2}));
  const std::vector<int> too_many{3};
  EXPECT_THROW(tape.gatv2_attention(r, p, r, a, too_many, 2, 0.2), ShapeError);
  const std::vector<int> ok{1};
  EXPECT_THROW(tape.gatv2_attention(r, p, r, tape.constant(Tensor({3, 2})), ok, 2, 0.2), ShapeError);
}

// Optimizer.

TEST(Adam, FirstStepIsSignedLearningRate) {
  Tensor x({3}, std::vector<double>{1.0, -2.0, 0.5});
  const Tensor start = x;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  Adam opt({&x}, cfg);
  Tape tape;
  const Var xv = tape.param(x);
  tape.backward(tape.sum(tape.mul(xv, xv)));
  opt.step();
  for (int i = 0; i < 3; ++i) {
    const double g = 2.0 * start[i];
    EXPECT_NEAR(x[i], start[i] - 0.01 * g / (std::abs(g) + 1e-8), 1e-15);
  }
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor x({2}, std::vector<double>{3.0, -4.0});
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  Adam opt({&x}, cfg);
  for (int k = 0; k < 2000; ++k) {
    Tape tape;
    const Var xv = tape.param(x);
    tape.backward(tape.sum(tape.mul(xv, xv)));
    opt.step();
  }
  EXPECT_NEAR(x[0], 0.0, 1e-3);
  EXPECT_NEAR(x[1], 0.0, 1e-3);
}

TEST(Adam, ClippingMatchesScalarReference) {
  Tensor a({2}, std::vector<double>{1.0, -1.0});
  AdamConfig cfg;
  cfg.max_grad_norm = 0.5;
  Adam opt({&a}, cfg);
  double x[2] = {1.0, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const double grads[3][2] = {{3.0, 4.0}, {0.1, 0.2}, {-6.0, 8.0}};
  for (int t = 1; t <= 3; ++t) {
    a.accumulate_grad(std::vector<double>{grads[t - 1][0], grads[t - 1][1]});
    opt.step();
    const double norm = std::hypot(grads[t - 1][0], grads[t - 1][1]);
    const double clip = norm > 0.5 ? 0.5 / norm : 1.0;
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i] * clip;
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 3e-4 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(a[i], x[i], 1e-15) << t;
    }
  }
}

// Checkpoints.

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(11);
  NamedTensors t;
  t.emplace("b.weight", random_tensor({3, 2}, rng));
  t.emplace("a.bias", random_tensor({2}, rng));
  t.emplace("scalar", Tensor::scalar(-0.0));
  std::stringstream ss;
  write_checkpoint(ss, t);
  const NamedTensors back = read_checkpoint(ss);
  ASSERT_EQ(back.size(), 3u);
  for (const auto& [name, tensor] : t) {
    EXPECT_EQ(back.at(name).shape(), tensor.shape());
    EXPECT_EQ(std::memcmp(back.at(name).storage().data(), tensor.storage().data(), tensor.size() * 8), 0);
  }
}

TEST(Checkpoint, ExactByteLayout) {
  NamedTensors t;
  t.emplace("w", Tensor({2}, std::vector<double>{1.0, -2.0}));
  std::stringstream ss;
  write_checkpoint(ss, t);
  const std::string bytes = ss.str();
  std::string expected = "NDGRADCK";
  auto u32 = [&](std::uint32_t v) {
    for (int k = 0; k < 4; ++k) expected.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  };
  auto u64 = [&](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) expected.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  };
  u32(1);
  u32(1);
  u32(1);
  expected += "w";
  u32(1);
  u64(2);
  u64(0x3ff0000000000000ULL);  // 1.0
  u64(0xc000000000000000ULL);  // -2.0
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, ByteStable) {
  std::mt19937_64 rng(4);
  NamedTensors t;
  t.emplace("z", random_tensor({4, 4}, rng));
  t.emplace("y", random_tensor({1}, rng));
  std::stringstream a, b;
  write_checkpoint(a, t);
  write_checkpoint(b, read_checkpoint(a));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTMAGIC");
  EXPECT_THROW(read_checkpoint(bad), CheckpointError);
  NamedTensors t;
  t.emplace("w", Tensor({8}, 1.0));
  std::stringstream ss;
  write_checkpoint(ss, t);
  std::string truncated = ss.str();
  truncated.resize(truncated.size() - 5);
  std::stringstream ts(truncated);
  EXPECT_THROW(read_checkpoint(ts), CheckpointError);
  std::string wrong_version = ss.str();
  wrong_version[8] = 9;
  std::stringstream vs(wrong_version);
  EXPECT_THROW(read_checkpoint(vs), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/file.ck"), CheckpointError);
}
