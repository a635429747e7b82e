#include "colson/ndgrad.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace colson::nd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  s.n = shape[axis];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t k = 0; k < shape.size(); ++k) os << (k ? "," : "") << shape[k];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor is not a scalar: " + shape_string(shape_));
  return data_[0];
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != data_.size()) throw ShapeError("accumulate_grad: size mismatch");
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

// ---------------------------------------------------------------------------
// Tape bookkeeping

Var Tape::push(Tensor value, std::vector<std::size_t> parents, std::function<void(Tape&, std::size_t)> backprop) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (std::size_t p : parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
    if (node.requires_grad) {
      node.parents = std::move(parents);
      node.backprop = std::move(backprop);
    }
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

bool Tape::needs_grad(std::initializer_list<Var> parents) const {
  if (!record_) return false;
  for (Var v : parents) {
    if (nodes_.at(v.id).requires_grad) return true;
  }
  return false;
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::input(Tensor value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_.back().requires_grad = record_;
  return v;
}

Var Tape::param(Tensor& p) {
  Var v = push(p, {}, nullptr);
  nodes_.back().requires_grad = record_;
  nodes_.back().param = record_ ? &p : nullptr;
  return v;
}

double* Tape::grad_buffer(std::size_t id) {
  if (!active_[id]) return nullptr;
  auto& g = grads_[id];
  if (g.empty()) g.assign(nodes_[id].value.size(), 0.0);
  return g.data();
}

void Tape::sweep(std::size_t loss, const std::vector<char>& active) {
  const Tensor& lv = nodes_.at(loss).value;
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(lv.shape()));
  grads_.assign(nodes_.size(), {});
  active_ = active;
  grads_[loss].assign(1, 1.0);
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (grads_[i].empty() || !nodes_[i].backprop) continue;
    nodes_[i].backprop(*this, i);
  }
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward: tape is not recording");
  std::vector<char> active(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) active[i] = nodes_[i].requires_grad;
  sweep(loss.id, active);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].param && !grads_[i].empty()) nodes_[i].param->accumulate_grad(grads_[i]);
  }
}

Tensor Tape::gradient(Var output, Var wrt) {
  if (!record_) throw std::logic_error("gradient: tape is not recording");
  if (wrt.id >= nodes_.size() || !nodes_[wrt.id].requires_grad) {
    throw std::invalid_argument("gradient: input is not a differentiable node of this tape");
  }
  // Only nodes downstream of `wrt` carry gradient toward it.
  std::vector<char> active(nodes_.size(), 0);
  active[wrt.id] = 1;
  for (std::size_t i = wrt.id + 1; i < nodes_.size(); ++i) {
    for (std::size_t p : nodes_[i].parents) {
      if (active[p]) {
        active[i] = 1;
        break;
      }
    }
  }
  Tensor result(nodes_[wrt.id].value.shape(), 0.0);
  if (!active[output.id]) return result;
  sweep(output.id, active);
  if (!grads_[wrt.id].empty()) result.storage() = grads_[wrt.id];
  return result;
}

Tensor Tape::grad(Var v) const {
  Tensor out(nodes_.at(v.id).value.shape(), 0.0);
  if (v.id < grads_.size() && !grads_[v.id].empty()) out.storage() = grads_[v.id];
  return out;
}

// ---------------------------------------------------------------------------
// Operations

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require_rank("matmul", A, 2);
  require_rank("matmul", B, 2);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C({m, n});
  Map(C.data().data(), m, n).noalias() = MapC(A.data().data(), m, k) * MapC(B.data().data(), k, n);
  if (!needs_grad({a, b})) return push(std::move(C), {}, nullptr);
  return push(std::move(C), {a.id, b.id}, [m, k, n](Tape& t, std::size_t self) {
    const std::size_t ia = t.nodes_[self].parents[0], ib = t.nodes_[self].parents[1];
    MapC G(t.out_grad(self).data(), m, n);
    if (double* ga = t.grad_buffer(ia)) {
      Map(ga, m, k).noalias() += G * MapC(t.nodes_[ib].value.data().data(), k, n).transpose();
    }
    if (double* gb = t.grad_buffer(ib)) {
      Map(gb, k, n).noalias() += MapC(t.nodes_[ia].value.data().data(), m, k).transpose() * G;
    }
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape("add", value(a), value(b));
  Tensor out = value(a);
  const auto& bd = value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    for (std::size_t p : t.nodes_[self].parents) {
      if (double* gp = t.grad_buffer(p)) {
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
      }
    }
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape("sub", value(a), value(b));
  Tensor out = value(a);
  const auto& bd = value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (double* ga = t.grad_buffer(t.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = t.grad_buffer(t.nodes_[self].parents[1])) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape("mul", value(a), value(b));
  Tensor out = value(a);
  const auto& bd = value(b).storage();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const std::size_t ia = t.nodes_[self].parents[0], ib = t.nodes_[self].parents[1];
    // Same node on both sides (x * x) is handled by two accumulations.
    if (double* ga = t.grad_buffer(ia)) {
      const auto& bv = t.nodes_[ib].value.storage();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (double* gb = t.grad_buffer(ib)) {
      const auto& av = t.nodes_[ia].value.storage();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var Tape::minimum(Var a, Var b) {
  require_same_shape("minimum", value(a), value(b));
  const auto& av = value(a).storage();
  const auto& bv = value(b).storage();
  Tensor out(value(a).shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(av[i], bv[i]);
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const std::size_t ia = t.nodes_[self].parents[0], ib = t.nodes_[self].parents[1];
    const auto& av = t.nodes_[ia].value.storage();
    const auto& bv = t.nodes_[ib].value.storage();
    double* ga = t.grad_buffer(ia);
    double* gb = t.grad_buffer(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Ties route to the first argument.
      if (av[i] <= bv[i]) {
        if (ga) ga[i] += g[i];
      } else if (gb) {
        gb[i] += g[i];
      }
    }
  });
}

Var Tape::add_row(Var m, Var row) {
  const Tensor& M = value(m);
  const Tensor& r = value(row);
  require_rank("add_row", M, 2);
  if (r.size() != M.cols()) {
    throw ShapeError("add_row: row " + shape_string(r.shape()) + " does not match " + shape_string(M.shape()));
  }
  Tensor out = M;
  const std::size_t rows = M.rows(), cols = M.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += r[j];
  }
  return push(std::move(out), {m.id, row.id}, [rows, cols](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (double* gm = t.grad_buffer(t.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (double* gr = t.grad_buffer(t.nodes_[self].parents[1])) {
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g[i * cols + j];
      }
    }
  });
}

Var Tape::scale(Var a, double s) {
  Tensor out = value(a);
  for (double& x : out.storage()) x *= s;
  return push(std::move(out), {a.id}, [s](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (double* ga = t.grad_buffer(t.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    }
  });
}

Var Tape::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (double& x : out.storage()) x += s;
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    if (double* ga = t.grad_buffer(t.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::leaky_relu(Var a, double slope) {
  Tensor out = value(a);
  for (double& x : out.storage()) x = x > 0.0 ? x : slope * x;
  return push(std::move(out), {a.id}, [slope](Tape& t, std::size_t self) {
    const std::size_t ia = t.nodes_[self].parents[0];
    const auto& g = t.out_grad(self);
    const auto& x = t.nodes_[ia].value.storage();
    if (double* ga = t.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += x[i] > 0.0 ? g[i] : slope * g[i];
    }
  });
}

Var Tape::tanh(Var a) {
  Tensor out = value(a);
  for (double& x : out.storage()) x = std::tanh(x);
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    const auto& y = t.nodes_[self].value.storage();
    if (double* ga = t.grad_buffer(t.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

Var Tape::softmax(Var a, std::size_t axis) {
  const Tensor& A = value(a);
  const AxisSplit s = split_axis(A.shape(), axis);
  Tensor out(A.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, A[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double e = std::exp(A[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  }
  return push(std::move(out), {a.id}, [s](Tape& t, std::size_t self) {
    double* ga = t.grad_buffer(t.nodes_[self].parents[0]);
    if (!ga) return;
    const auto& g = t.out_grad(self);
    const auto& y = t.nodes_[self].value.storage();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot_gy = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot_gy += g[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t idx = base + k * s.inner;
          ga[idx] += y[idx] * (g[idx] - dot_gy);
        }
      }
    }
  });
}

Var Tape::sum(Var a) {
  const auto& d = value(a).storage();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return push(Tensor::scalar(total), {a.id}, [](Tape& t, std::size_t self) {
    const std::size_t ia = t.nodes_[self].parents[0];
    if (double* ga = t.grad_buffer(ia)) {
      const double g = t.out_grad(self)[0];
      for (std::size_t i = 0; i < t.nodes_[ia].value.size(); ++i) ga[i] += g;
    }
  });
}

Var Tape::sum(Var a, std::size_t axis) {
  const Tensor& A = value(a);
  const AxisSplit s = split_axis(A.shape(), axis);
  Shape shape = A.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(shape, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.n; ++k) {
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += A[(o * s.n + k) * s.inner + in];
    }
  }
  return push(std::move(out), {a.id}, [s](Tape& t, std::size_t self) {
    double* ga = t.grad_buffer(t.nodes_[self].parents[0]);
    if (!ga) return;
    const auto& g = t.out_grad(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.n; ++k) {
        for (std::size_t in = 0; in < s.inner; ++in) ga[(o * s.n + k) * s.inner + in] += g[o * s.inner + in];
      }
    }
  });
}

Var Tape::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var Tape::concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = value(parts[0]).shape();
  Shape shape = first;
  const AxisSplit s0 = split_axis(first, axis);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Shape& sh = value(p).shape();
    if (sh.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t k = 0; k < sh.size(); ++k) {
      if (k != axis && sh[k] != first[k]) {
        throw ShapeError("concat: shape mismatch " + shape_string(sh) + " vs " + shape_string(first));
      }
    }
    widths.push_back(sh[axis] * s0.inner);
    total += sh[axis];
  }
  shape[axis] = total;
  Tensor out(shape);
  const std::size_t row = total * s0.inner;
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& src = value(parts[pi]).storage();
    for (std::size_t o = 0; o < s0.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.storage().begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[pi];
    ids.push_back(parts[pi].id);
  }
  const std::size_t outer = s0.outer;
  return push(std::move(out), std::move(ids), [widths, outer, row](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    std::size_t offset = 0;
    const auto& parents = t.nodes_[self].parents;
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      if (double* gp = t.grad_buffer(parents[pi])) {
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < widths[pi]; ++i) gp[o * widths[pi] + i] += g[o * row + offset + i];
        }
      }
      offset += widths[pi];
    }
  });
}

Var Tape::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& A = value(a);
  const AxisSplit s = split_axis(A.shape(), axis);
  if (begin > end || end > s.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
                     shape_string(A.shape()));
  }
  Shape shape = A.shape();
  shape[axis] = end - begin;
  Tensor out(shape);
  const std::size_t width = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(A.storage().begin() + static_cast<std::ptrdiff_t>((o * s.n + begin) * s.inner), width,
                out.storage().begin() + static_cast<std::ptrdiff_t>(o * width));
  }
  return push(std::move(out), {a.id}, [s, begin, width](Tape& t, std::size_t self) {
    double* ga = t.grad_buffer(t.nodes_[self].parents[0]);
    if (!ga) return;
    const auto& g = t.out_grad(self);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < width; ++i) ga[(o * s.n + begin) * s.inner + i] += g[o * width + i];
    }
  });
}

Var Tape::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    if (double* ga = t.grad_buffer(t.nodes_[self].parents[0])) {
      const auto& g = t.out_grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Var Tape::gatv2_attention(Var robot_src, Var ped_src, Var dst, Var att, std::span<const int> counts,
                          std::size_t max_peds, double slope,
                          std::vector<std::vector<std::vector<double>>>* weights_out) {
  const Tensor& R = value(robot_src);
  const Tensor& P = value(ped_src);
  const Tensor& D = value(dst);
  const Tensor& A = value(att);
  require_rank("gatv2_attention", R, 2);
  require_rank("gatv2_attention", P, 2);
  require_rank("gatv2_attention", A, 2);
  require_same_shape("gatv2_attention", R, D);
  const std::size_t B = R.rows();
  const std::size_t heads = A.rows(), C = A.cols(), HC = heads * C;
  if (R.cols() != HC || P.cols() != HC || P.rows() != B * max_peds || counts.size() != B) {
    throw ShapeError("gatv2_attention: inconsistent shapes robot " + shape_string(R.shape()) + " peds " +
                     shape_string(P.shape()) + " att " + shape_string(A.shape()));
  }
  for (int c : counts) {
    if (c < 0 || static_cast<std::size_t>(c) > max_peds) throw ShapeError("gatv2_attention: bad pedestrian count");
  }
  const std::size_t J = max_peds + 1;
  // Source row j of graph b: j == 0 is the robot itself.
  auto src_row = [&](const Tensor& Rt, const Tensor& Pt, std::size_t b, std::size_t j) {
    return j == 0 ? Rt.data().data() + b * HC : Pt.data().data() + (b * max_peds + j - 1) * HC;
  };

  std::vector<double> alpha(B * heads * J, 0.0);
  Tensor out({B, HC}, 0.0);
  std::vector<double> logit(J);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n = static_cast<std::size_t>(counts[b]) + 1;
    const double* y = D.data().data() + b * HC;
    for (std::size_t h = 0; h < heads; ++h) {
      const double* a = A.data().data() + h * C;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const double* x = src_row(R, P, b, j) + h * C;
        double l = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double s = x[c] + y[h * C + c];
          l += a[c] * (s > 0.0 ? s : slope * s);
        }
        logit[j] = l;
        mx = std::max(mx, l);
      }
      double z = 0.0;
      double* al = alpha.data() + (b * heads + h) * J;
      for (std::size_t j = 0; j < n; ++j) {
        al[j] = std::exp(logit[j] - mx);
        z += al[j];
      }
      double* o = out.data().data() + b * HC + h * C;
      for (std::size_t j = 0; j < n; ++j) {
        al[j] /= z;
        const double* x = src_row(R, P, b, j) + h * C;
        for (std::size_t c = 0; c < C; ++c) o[c] += al[j] * x[c];
      }
    }
  }
  if (weights_out) {
    weights_out->assign(B, {});
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t n = static_cast<std::size_t>(counts[b]) + 1;
      for (std::size_t h = 0; h < heads; ++h) {
        const double* al = alpha.data() + (b * heads + h) * J;
        (*weights_out)[b].emplace_back(al, al + n);
      }
    }
  }
  if (!needs_grad({robot_src, ped_src, dst, att})) return push(std::move(out), {}, nullptr);

  std::vector<int> cnt(counts.begin(), counts.end());
  return push(std::move(out), {robot_src.id, ped_src.id, dst.id, att.id},
              [alpha = std::move(alpha), cnt = std::move(cnt), B, heads, C, HC, J, max_peds, slope](
                  Tape& t, std::size_t self) {
                const auto& parents = t.nodes_[self].parents;
                const Tensor& Rt = t.nodes_[parents[0]].value;
                const Tensor& Pt = t.nodes_[parents[1]].value;
                const Tensor& Dt = t.nodes_[parents[2]].value;
                const Tensor& At = t.nodes_[parents[3]].value;
                double* gR = t.grad_buffer(parents[0]);
                double* gP = t.grad_buffer(parents[1]);
                double* gD = t.grad_buffer(parents[2]);
                double* gA = t.grad_buffer(parents[3]);
                const auto& G = t.out_grad(self);
                std::vector<double> dlogit(J);
                for (std::size_t b = 0; b < B; ++b) {
                  const std::size_t n = static_cast<std::size_t>(cnt[b]) + 1;
                  const double* y = Dt.data().data() + b * HC;
                  for (std::size_t h = 0; h < heads; ++h) {
                    const double* a = At.data().data() + h * C;
                    const double* al = alpha.data() + (b * heads + h) * J;
                    const double* g = G.data() + b * HC + h * C;
                    auto src = [&](std::size_t j) {
                      return j == 0 ? Rt.data().data() + b * HC + h * C
                                    : Pt.data().data() + (b * max_peds + j - 1) * HC + h * C;
                    };
                    auto src_grad = [&](std::size_t j) -> double* {
                      if (j == 0) return gR ? gR + b * HC + h * C : nullptr;
                      return gP ? gP + (b * max_peds + j - 1) * HC + h * C : nullptr;
                    };
                    double weighted = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double* x = src(j);
                      double d = 0.0;
                      for (std::size_t c = 0; c < C; ++c) d += g[c] * x[c];
                      dlogit[j] = d;
                      weighted += al[j] * d;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double dl = al[j] * (dlogit[j] - weighted);
                      const double* x = src(j);
                      double* gx = src_grad(j);
                      for (std::size_t c = 0; c < C; ++c) {
                        const double s = x[c] + y[h * C + c];
                        const double e = s > 0.0 ? s : slope * s;
                        if (gA) gA[h * C + c] += dl * e;
                        const double ds = dl * a[c] * (s > 0.0 ? 1.0 : slope);
                        if (gx) gx[c] += ds + al[j] * g[c];
                        if (gD) gD[b * HC + h * C + c] += ds;
                      }
                    }
                  }
                }
              });
}

Var Tape::graph_max_pool(Var robot, Var peds, std::span<const int> counts, std::size_t max_peds) {
  const Tensor& R = value(robot);
  const Tensor& P = value(peds);
  require_rank("graph_max_pool", R, 2);
  require_rank("graph_max_pool", P, 2);
  const std::size_t B = R.rows(), D = R.cols();
  if (P.cols() != D || P.rows() != B * max_peds || counts.size() != B) {
    throw ShapeError("graph_max_pool: inconsistent shapes " + shape_string(R.shape()) + " / " +
                     shape_string(P.shape()));
  }
  Tensor out = R;
  // argmax source per output entry: 0 is the robot row, k > 0 pedestrian k-1.
  std::vector<std::uint32_t> arg(B * D, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(counts[b]); ++k) {
      const double* row = P.data().data() + (b * max_peds + k) * D;
      for (std::size_t d = 0; d < D; ++d) {
        if (row[d] > out[b * D + d]) {
          out[b * D + d] = row[d];
          arg[b * D + d] = static_cast<std::uint32_t>(k + 1);
        }
      }
    }
  }
  return push(std::move(out), {robot.id, peds.id}, [arg = std::move(arg), B, D, max_peds](Tape& t, std::size_t self) {
    const auto& g = t.out_grad(self);
    double* gr = t.grad_buffer(t.nodes_[self].parents[0]);
    double* gp = t.grad_buffer(t.nodes_[self].parents[1]);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) {
        const std::uint32_t k = arg[b * D + d];
        if (k == 0) {
          if (gr) gr[b * D + d] += g[b * D + d];
        } else if (gp) {
          gp[(b * max_peds + k - 1) * D + d] += g[b * D + d];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->clear_grad();
}

void Adam::step() {
  ++t_;
  double clip = 1.0;
  if (config_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor* p : params_) {
      for (double g : p->grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = *params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      p[i] -= config_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
    }
  }
  zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'N', 'D', 'G', 'R', 'A', 'D', 'C', 'K'};

template <typename U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t k = 0; k < sizeof(U); ++k) bytes[k] = static_cast<char>((value >> (8 * k)) & 0xffu);
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw CheckpointError("checkpoint: truncated file");
  U value = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) value |= static_cast<U>(bytes[k]) << (8 * k);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const NamedTensors& tensors) {
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double x : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  if (!out) throw CheckpointError("checkpoint: write failed");
}

NamedTensors read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in);
  NamedTensors tensors;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = get_le<std::uint32_t>(in);
    if (name_len > (1u << 16)) throw CheckpointError("checkpoint: implausible name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in);
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 28)) throw CheckpointError("checkpoint: implausible size for " + name);
    std::vector<double> data(n);
    for (auto& x : data) x = std::bit_cast<double>(get_le<std::uint64_t>(in));
    tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return tensors;
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  write_checkpoint(out, tensors);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace colson::nd
