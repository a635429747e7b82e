#pragma once

// Minimal dense tensors with reverse-mode automatic differentiation.
//
// A Tape records operations on Vars (indices of recorded nodes). Parameters
// are Tensors owned by the caller; binding one to a tape with `param` makes
// `backward` accumulate into the Tensor's gradient buffer. `gradient` computes
// the derivative of an output with respect to any single recorded node without
// touching parameter gradients, which is how critics are differentiated with
// respect to their action input.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace colson::nd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  // Leading/trailing extent of a rank-2 tensor.
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double item() const;

  // Gradient buffer; absent until something accumulates into it.
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void accumulate_grad(std::span<const double> g);
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  // With record == false the tape only evaluates values (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf not bound to a parameter.
  Var input(Tensor value);
  // Leaf bound to a parameter; `backward` accumulates into `p`'s gradient.
  Var param(Tensor& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var minimum(Var a, Var b);
  // Adds a length-n vector to every row of an [m, n] matrix.
  Var add_row(Var m, Var row);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var tanh(Var a);
  Var softmax(Var a, std::size_t axis);
  Var sum(Var a);
  Var sum(Var a, std::size_t axis);
  Var mean(Var a);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var concat(std::initializer_list<Var> parts, std::size_t axis);
  Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
  Var reshape(Var a, Shape shape);

  // GATv2 attention restricted to one destination per graph (the robot).
  //
  // Graph b has source rows robot_src[b] and ped_src[b * max_peds + k] for
  // k < counts[b]; dst[b] is the destination's target transform. For every
  // head h with channel slice c in [h*C, (h+1)*C):
  //   logit_j = sum_c att[h, c] * leaky_relu(src_j[c] + dst[c], slope)
  //   out[b, c] = sum_j softmax_j(logit)_j * src_j[c]
  // Shapes: robot_src [B, H*C], ped_src [B*max_peds, H*C], dst [B, H*C],
  // att [H, C]; result [B, H*C]. If `weights_out` is given it receives the
  // attention weights as [B][h][j] with j = 0 the robot self-loop.
  Var gatv2_attention(Var robot_src, Var ped_src, Var dst, Var att, std::span<const int> counts,
                      std::size_t max_peds, double slope,
                      std::vector<std::vector<std::vector<double>>>* weights_out = nullptr);

  // Elementwise max over each graph's robot row and its real pedestrian rows.
  // Shapes: robot [B, D], peds [B*max_peds, D]; result [B, D].
  Var graph_max_pool(Var robot, Var peds, std::span<const int> counts, std::size_t max_peds);

  // Populates gradients of a scalar loss on every node and accumulates them
  // into bound parameters. Throws ShapeError for a non-scalar loss.
  void backward(Var loss);
  // Gradient of scalar `output` with respect to node `wrt`. Leaves parameter
  // gradients untouched. Throws std::invalid_argument if `wrt` is not a
  // differentiable node of this tape.
  Tensor gradient(Var output, Var wrt);
  // Gradient stored on a node by the last `backward` call.
  Tensor grad(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backprop;
    bool requires_grad = false;
    Tensor* param = nullptr;
  };

  Var push(Tensor value, std::vector<std::size_t> parents, std::function<void(Tape&, std::size_t)> backprop);
  bool needs_grad(std::initializer_list<Var> parents) const;
  // Gradient buffer of a node during a sweep, or nullptr if it is not needed.
  double* grad_buffer(std::size_t id);
  const std::vector<double>& out_grad(std::size_t id) const { return grads_[id]; }
  void sweep(std::size_t loss, const std::vector<char>& active);

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> active_;
};

// Adam with bias correction. Parameters are referenced, not owned.
struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables global-norm clipping
};

class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig config);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::int64_t t_ = 0;
};

// Named-tensor checkpoint container.
//
// Layout (all integers little-endian):
//   "NDGRADCK" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | u32 rank | rank x u64 dim |
//             prod(dims) x f64 payload }
// Entries are written in lexicographic name order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::map<std::string, Tensor>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace colson::nd
