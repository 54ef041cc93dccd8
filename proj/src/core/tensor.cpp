// Copyright 2026 The Pacmac Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "pacmac/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pacmac/error.hpp"

namespace pacmac::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutableMap = Eigen::Map<RowMatrix>;

thread_local bool g_grad_enabled = true;

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) fail(ErrorCode::kInvalidAttribute, std::string(what) + ": undefined tensor");
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

double* grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.values.size(), 0.0);
  return n.grad.data();
}

Tensor make_result(Shape shape, std::vector<double> values, PrimitiveKind kind,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> adjoint) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool any_tracked = false;
  for (const Tensor* t : inputs) any_tracked = any_tracked || t->tracked();
  if (any_tracked && g_grad_enabled) {
    node->requires_grad = true;
    node->kind = kind;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->adjoint = std::move(adjoint);
  }
  return Tensor::from_node(std::move(node));
}

Tensor make_result_n(Shape shape, std::vector<double> values, PrimitiveKind kind,
                     std::span<const Tensor> inputs, std::function<void(Node&)> adjoint) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool any_tracked = false;
  for (const Tensor& t : inputs) any_tracked = any_tracked || t.tracked();
  if (any_tracked && g_grad_enabled) {
    node->requires_grad = true;
    node->kind = kind;
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->adjoint = std::move(adjoint);
  }
  return Tensor::from_node(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.empty() || small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

double gelu_value(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

double gelu_derivative(double x) {
  constexpr double kC = 0.7978845608028654;
  const double u = kC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * 0.044715 * x * x);
}

// Splits `shape` around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t row_length(const Tensor& t) { return t.shape().back(); }

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

const char* primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kAdd: return "add";
    case PrimitiveKind::kMul: return "mul";
    case PrimitiveKind::kMatmul: return "matmul";
    case PrimitiveKind::kSoftmaxRows: return "softmax_rows";
    case PrimitiveKind::kLayerNorm: return "layer_norm";
    case PrimitiveKind::kGelu: return "gelu";
    case PrimitiveKind::kCrossEntropyFromLogits: return "cross_entropy_from_logits";
    case PrimitiveKind::kMseMasked: return "mse_masked";
    case PrimitiveKind::kTranspose: return "transpose";
    case PrimitiveKind::kReshape: return "reshape";
    case PrimitiveKind::kMean: return "mean";
    case PrimitiveKind::kScale: return "scale";
    case PrimitiveKind::kConcat: return "concat";
    case PrimitiveKind::kSlice: return "slice";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    fail(ErrorCode::kShapeMismatch, "constant: shape " + shape_string(shape) + " holds " +
                                        std::to_string(shape_size(shape)) + " values, got " +
                                        std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> v(shape_size(shape), 0.0);
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) fail(ErrorCode::kOutOfRange, "dim: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  if (node_->kind) fail(ErrorCode::kInvalidAttribute, "mutable_values: tensor is not a leaf");
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorCode::kNotScalar, "item: shape " + shape_string(shape()));
  return node_->values[0];
}

bool Tensor::tracked() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && !node_->kind; }
std::optional<PrimitiveKind> Tensor::producer() const {
  return node_ ? node_->kind : std::nullopt;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return constant(shape(), node_->values); }

Tensor Tensor::clone_leaf() const {
  Tensor t = detach();
  t.node_->requires_grad = is_leaf() && tracked();
  return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Primitives

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(out), PrimitiveKind::kAdd, {&a, &b}, [](Node& self) {
      for (auto& in : self.inputs) {
        if (!in->requires_grad) continue;
        double* g = grad_of(*in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (!is_suffix(b.shape(), a.shape())) shape_error("add", a, b);
  const std::size_t n = b.size();
  const std::size_t rows = a.size() / n;
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] + bv[j];
  return make_result(a.shape(), std::move(out), PrimitiveKind::kAdd, {&a, &b},
                     [rows, n](Node& self) {
                       Node& in_a = *self.inputs[0];
                       Node& in_b = *self.inputs[1];
                       if (in_a.requires_grad) {
                         double* g = grad_of(in_a);
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                       }
                       if (in_b.requires_grad) {
                         double* g = grad_of(in_b);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), PrimitiveKind::kMul, {&a, &b}, [](Node& self) {
    Node& in_a = *self.inputs[0];
    Node& in_b = *self.inputs[1];
    if (in_a.requires_grad) {
      double* g = grad_of(in_a);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * in_b.values[i];
    }
    if (in_b.requires_grad) {
      double* g = grad_of(in_b);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * in_a.values[i];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.rank() == 2 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
    const std::size_t k = b.dim(0);
    const std::size_t m = b.dim(1);
    const std::size_t rows = a.size() / k;
    Shape shape = a.shape();
    shape.back() = m;
    std::vector<double> out(rows * m);
    MutableMap(out.data(), rows, m).noalias() =
        ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, m);
    return make_result(std::move(shape), std::move(out), PrimitiveKind::kMatmul, {&a, &b},
                       [rows, k, m](Node& self) {
                         Node& in_a = *self.inputs[0];
                         Node& in_b = *self.inputs[1];
                         ConstMap dc(self.grad.data(), rows, m);
                         if (in_a.requires_grad) {
                           MutableMap(grad_of(in_a), rows, k).noalias() +=
                               dc * ConstMap(in_b.values.data(), k, m).transpose();
                         }
                         if (in_b.requires_grad) {
                           MutableMap(grad_of(in_b), k, m).noalias() +=
                               ConstMap(in_a.values.data(), rows, k).transpose() * dc;
                         }
                       });
  }
  if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1)) {
    const std::size_t batch = a.dim(0);
    const std::size_t n = a.dim(1);
    const std::size_t k = a.dim(2);
    const std::size_t m = b.dim(2);
    std::vector<double> out(batch * n * m);
    for (std::size_t i = 0; i < batch; ++i) {
      MutableMap(out.data() + i * n * m, n, m).noalias() =
          ConstMap(a.values().data() + i * n * k, n, k) *
          ConstMap(b.values().data() + i * k * m, k, m);
    }
    return make_result({batch, n, m}, std::move(out), PrimitiveKind::kMatmul, {&a, &b},
                       [batch, n, k, m](Node& self) {
                         Node& in_a = *self.inputs[0];
                         Node& in_b = *self.inputs[1];
                         double* ga = in_a.requires_grad ? grad_of(in_a) : nullptr;
                         double* gb = in_b.requires_grad ? grad_of(in_b) : nullptr;
                         for (std::size_t i = 0; i < batch; ++i) {
                           ConstMap dc(self.grad.data() + i * n * m, n, m);
                           if (ga) {
                             MutableMap(ga + i * n * k, n, k).noalias() +=
                                 dc * ConstMap(in_b.values.data() + i * k * m, k, m).transpose();
                           }
                           if (gb) {
                             MutableMap(gb + i * k * m, k, m).noalias() +=
                                 ConstMap(in_a.values.data() + i * n * k, n, k).transpose() * dc;
                           }
                         }
                       });
  }
  shape_error("matmul", a, b);
}

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  if (x.rank() < 1 || x.size() == 0) fail(ErrorCode::kShapeMismatch, "softmax_rows: empty input");
  const std::size_t n = row_length(x);
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result(x.shape(), std::move(out), PrimitiveKind::kSoftmaxRows, {&x},
                     [rows, n](Node& self) {
                       Node& in = *self.inputs[0];
                       double* g = grad_of(in);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.values.data() + r * n;
                         const double* dy = self.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
                       }
                     });
}

namespace {

Tensor layer_norm_impl(const Tensor& x, const Tensor* gain, const Tensor* bias, double epsilon) {
  require_defined(x, "layer_norm");
  if (!(epsilon > 0.0)) fail(ErrorCode::kInvalidAttribute, "layer_norm: epsilon must be > 0");
  if (x.rank() < 1 || x.size() == 0) fail(ErrorCode::kShapeMismatch, "layer_norm: empty input");
  const std::size_t n = row_length(x);
  const std::size_t rows = x.size() / n;
  if (gain) {
    if (gain->shape() != Shape{n}) shape_error("layer_norm gain", x, *gain);
    if (bias->shape() != Shape{n}) shape_error("layer_norm bias", x, *bias);
  }
  std::vector<double> xhat(x.size());
  std::vector<double> rstd(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < n; ++j) xhat[r * n + j] = (in[j] - mu) * rstd[r];
  }
  std::vector<double> out = xhat;
  if (gain) {
    const auto gv = gain->values();
    const auto bv = bias->values();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
  }
  const bool affine = gain != nullptr;
  auto adjoint = [rows, n, affine, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
    Node& in = *self.inputs[0];
    const double* gamma = affine ? self.inputs[1]->values.data() : nullptr;
    if (affine) {
      Node& g_node = *self.inputs[1];
      Node& b_node = *self.inputs[2];
      double* gg = g_node.requires_grad ? grad_of(g_node) : nullptr;
      double* gb = b_node.requires_grad ? grad_of(b_node) : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
          const double dy = self.grad[r * n + j];
          if (gg) gg[j] += dy * xhat[r * n + j];
          if (gb) gb[j] += dy;
        }
      }
    }
    if (!in.requires_grad) return;
    double* gx = grad_of(in);
    std::vector<double> dxhat(n);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_d = 0.0;
      double sum_dx = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        dxhat[j] = self.grad[r * n + j] * (gamma ? gamma[j] : 1.0);
        sum_d += dxhat[j];
        sum_dx += dxhat[j] * xhat[r * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        gx[r * n + j] += rstd[r] * (dxhat[j] - sum_d * inv_n - xhat[r * n + j] * sum_dx * inv_n);
      }
    }
  };
  if (gain) {
    return make_result(x.shape(), std::move(out), PrimitiveKind::kLayerNorm, {&x, gain, bias},
                       std::move(adjoint));
  }
  return make_result(x.shape(), std::move(out), PrimitiveKind::kLayerNorm, {&x},
                     std::move(adjoint));
}

}  // namespace

Tensor layer_norm(const Tensor& x, double epsilon) {
  return layer_norm_impl(x, nullptr, nullptr, epsilon);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  return layer_norm_impl(x, &gain, &bias, epsilon);
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  return make_result(x.shape(), std::move(out), PrimitiveKind::kGelu, {&x}, [](Node& self) {
    Node& in = *self.inputs[0];
    double* g = grad_of(in);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * gelu_derivative(in.values[i]);
  });
}

namespace {

struct CeGeometry {
  std::size_t rows = 0;
  std::size_t classes = 0;
};

CeGeometry ce_geometry(const Tensor& logits) {
  if (logits.rank() == 1 && logits.size() > 0) return {1, logits.size()};
  if (logits.rank() == 2 && logits.size() > 0) return {logits.dim(0), logits.dim(1)};
  fail(ErrorCode::kShapeMismatch,
       "cross_entropy_from_logits: logits must be [C] or [R, C], got " +
           shape_string(logits.shape()));
}

std::vector<double> log_softmax_rows(std::span<const double> z, std::size_t rows, std::size_t c) {
  std::vector<double> out(rows * c);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = z.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = in[j] - lse;
  }
  return out;
}

std::vector<double> resolve_weights(std::vector<double> w, std::size_t rows) {
  if (w.empty()) return std::vector<double>(rows, 1.0);
  if (w.size() != rows)
    fail(ErrorCode::kShapeMismatch, "cross_entropy_from_logits: row_weights length mismatch");
  return w;
}

double resolve_denominator(std::optional<double> d, std::size_t rows) {
  const double v = d.value_or(static_cast<double>(rows));
  if (!(v > 0.0)) fail(ErrorCode::kInvalidAttribute, "cross_entropy_from_logits: denominator <= 0");
  return v;
}

}  // namespace

Tensor cross_entropy_from_logits(const Tensor& logits, std::vector<int> targets,
                                 double label_smoothing, std::vector<double> row_weights,
                                 std::optional<double> denominator) {
  require_defined(logits, "cross_entropy_from_logits");
  const auto [rows, c] = ce_geometry(logits);
  if (targets.size() != rows)
    fail(ErrorCode::kShapeMismatch, "cross_entropy_from_logits: target count mismatch");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= c)
      fail(ErrorCode::kInvalidAttribute, "cross_entropy_from_logits: label out of range");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    fail(ErrorCode::kInvalidAttribute, "cross_entropy_from_logits: label_smoothing outside [0,1)");
  const std::vector<double> w = resolve_weights(std::move(row_weights), rows);
  const double denom = resolve_denominator(denominator, rows);

  std::vector<double> ls = log_softmax_rows(logits.values(), rows, c);
  const double off = label_smoothing / static_cast<double>(c);
  const double on = 1.0 - label_smoothing + off;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (w[r] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = (static_cast<int>(j) == targets[r]) ? on : off;
      if (t != 0.0) row -= t * ls[r * c + j];
    }
    loss += w[r] * row;
  }
  loss /= denom;
  return make_result(
      {1}, {loss}, PrimitiveKind::kCrossEntropyFromLogits, {&logits},
      [rows, c, on, off, denom, w, targets = std::move(targets), ls = std::move(ls)](Node& self) {
        Node& in = *self.inputs[0];
        double* g = grad_of(in);
        const double up = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
          if (w[r] == 0.0) continue;
          const double k = up * w[r] / denom;
          for (std::size_t j = 0; j < c; ++j) {
            const double t = (static_cast<int>(j) == targets[r]) ? on : off;
            g[r * c + j] += k * (std::exp(ls[r * c + j]) - t);
          }
        }
      });
}

Tensor cross_entropy_soft(const Tensor& logits, const Tensor& targets,
                          std::vector<double> row_weights, std::optional<double> denominator) {
  require_defined(logits, "cross_entropy_from_logits");
  require_defined(targets, "cross_entropy_from_logits");
  const auto [rows, c] = ce_geometry(logits);
  if (targets.size() != logits.size()) shape_error("cross_entropy_from_logits", logits, targets);
  const std::vector<double> w = resolve_weights(std::move(row_weights), rows);
  const double denom = resolve_denominator(denominator, rows);
  std::vector<double> ls = log_softmax_rows(logits.values(), rows, c);
  const auto tv = targets.values();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) row -= tv[r * c + j] * ls[r * c + j];
    loss += w[r] * row;
  }
  loss /= denom;
  return make_result(
      {1}, {loss}, PrimitiveKind::kCrossEntropyFromLogits, {&logits, &targets},
      [rows, c, denom, w, ls = std::move(ls)](Node& self) {
        Node& z = *self.inputs[0];
        Node& t = *self.inputs[1];
        const double up = self.grad[0];
        double* gz = z.requires_grad ? grad_of(z) : nullptr;
        double* gt = t.requires_grad ? grad_of(t) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const double k = up * w[r] / denom;
          if (k == 0.0) continue;
          double mass = 0.0;
          for (std::size_t j = 0; j < c; ++j) mass += t.values[r * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            if (gz) gz[r * c + j] += k * (std::exp(ls[r * c + j]) * mass - t.values[r * c + j]);
            if (gt) gt[r * c + j] -= k * ls[r * c + j];
          }
        }
      });
}

Tensor mse_masked(const Tensor& prediction, const Tensor& target,
                  std::vector<std::uint8_t> row_mask) {
  require_defined(prediction, "mse_masked");
  require_defined(target, "mse_masked");
  if (prediction.shape() != target.shape()) shape_error("mse_masked", prediction, target);
  if (prediction.size() == 0) fail(ErrorCode::kShapeMismatch, "mse_masked: empty input");
  const std::size_t n = row_length(prediction);
  const std::size_t rows = prediction.size() / n;
  if (row_mask.empty()) row_mask.assign(rows, 1);
  if (row_mask.size() != rows)
    fail(ErrorCode::kShapeMismatch, "mse_masked: row_mask length " +
                                        std::to_string(row_mask.size()) + " != rows " +
                                        std::to_string(rows));
  std::size_t selected = 0;
  for (auto m : row_mask) selected += m ? 1 : 0;
  if (selected == 0) fail(ErrorCode::kInvalidAttribute, "mse_masked: no rows selected");
  const double count = static_cast<double>(selected * n);
  const auto pv = prediction.values();
  const auto tv = target.values();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!row_mask[r]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = pv[r * n + j] - tv[r * n + j];
      loss += d * d;
    }
  }
  loss /= count;
  return make_result({1}, {loss}, PrimitiveKind::kMseMasked, {&prediction, &target},
                     [rows, n, count, row_mask = std::move(row_mask)](Node& self) {
                       Node& p = *self.inputs[0];
                       Node& t = *self.inputs[1];
                       const double k = 2.0 * self.grad[0] / count;
                       double* gp = p.requires_grad ? grad_of(p) : nullptr;
                       double* gt = t.requires_grad ? grad_of(t) : nullptr;
                       for (std::size_t r = 0; r < rows; ++r) {
                         if (!row_mask[r]) continue;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double d = k * (p.values[r * n + j] - t.values[r * n + j]);
                           if (gp) gp[r * n + j] += d;
                           if (gt) gt[r * n + j] -= d;
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() < 2) fail(ErrorCode::kShapeMismatch, "transpose: rank < 2");
  const std::size_t n = x.dim(x.rank() - 2);
  const std::size_t m = x.dim(x.rank() - 1);
  const std::size_t batch = x.size() / (n * m);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[b * n * m + j * n + i] = xv[b * n * m + i * m + j];
  return make_result(std::move(shape), std::move(out), PrimitiveKind::kTranspose, {&x},
                     [batch, n, m](Node& self) {
                       double* g = grad_of(*self.inputs[0]);
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j)
                             g[b * n * m + i * m + j] += self.grad[b * n * m + j * n + i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_size(shape) != x.size())
    fail(ErrorCode::kShapeMismatch,
         "reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), PrimitiveKind::kReshape, {&x},
                     [](Node& self) {
                       double* g = grad_of(*self.inputs[0]);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.size() == 0) fail(ErrorCode::kShapeMismatch, "mean: empty input");
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  const double n = static_cast<double>(x.size());
  return make_result({1}, {total / n}, PrimitiveKind::kMean, {&x}, [n](Node& self) {
    Node& in = *self.inputs[0];
    double* g = grad_of(in);
    const double d = self.grad[0] / n;
    for (std::size_t i = 0; i < in.values.size(); ++i) g[i] += d;
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  require_defined(x, "mean");
  if (axis >= x.rank()) fail(ErrorCode::kInvalidAttribute, "mean: axis out of range");
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.extent == 0) fail(ErrorCode::kShapeMismatch, "mean: empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
  const double n = static_cast<double>(s.extent);
  for (double& v : out) v /= n;
  return make_result(std::move(shape), std::move(out), PrimitiveKind::kMean, {&x},
                     [s, n](Node& self) {
                       double* g = grad_of(*self.inputs[0]);
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i] / n;
                     });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), PrimitiveKind::kScale, {&x}, [factor](Node& self) {
    double* g = grad_of(*self.inputs[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::kInvalidAttribute, "concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) fail(ErrorCode::kInvalidAttribute, "concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) shape_error("concat", parts[0], p);
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
  }
  const AxisSplit out_split = split_axis(shape, axis);
  std::vector<double> out(shape_size(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    const std::size_t block = extents[k] * out_split.inner;
    for (std::size_t o = 0; o < out_split.outer; ++o) {
      std::copy_n(pv.data() + o * block, block,
                  out.data() + o * out_split.extent * out_split.inner + offset);
    }
    offset += block;
  }
  return make_result_n(std::move(shape), std::move(out), PrimitiveKind::kConcat, parts,
                       [out_split, extents](Node& self) {
                         std::size_t off = 0;
                         for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                           Node& in = *self.inputs[k];
                           const std::size_t block = extents[k] * out_split.inner;
                           if (in.requires_grad) {
                             double* g = grad_of(in);
                             for (std::size_t o = 0; o < out_split.outer; ++o) {
                               const double* src = self.grad.data() +
                                                   o * out_split.extent * out_split.inner + off;
                               for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
                             }
                           }
                           off += block;
                         }
                       });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  if (axis >= x.rank()) fail(ErrorCode::kInvalidAttribute, "slice: axis out of range");
  if (length == 0 || start + length > x.dim(axis))
    fail(ErrorCode::kInvalidAttribute, "slice: range [" + std::to_string(start) + ", " +
                                           std::to_string(start + length) + ") outside extent " +
                                           std::to_string(x.dim(axis)));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t block = length * s.inner;
  std::vector<double> out(s.outer * block);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + start) * s.inner, block, out.data() + o * block);
  }
  return make_result(std::move(shape), std::move(out), PrimitiveKind::kSlice, {&x},
                     [s, start, block](Node& self) {
                       double* g = grad_of(*self.inputs[0]);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = g + (o * s.extent + start) * s.inner;
                         for (std::size_t i = 0; i < block; ++i) dst[i] += self.grad[o * block + i];
                       }
                     });
}

Tensor sum(const Tensor& x) { return scale(mean(x), static_cast<double>(x.size())); }

Tensor evaluate_primitive(PrimitiveKind kind, std::span<const Tensor> inputs,
                          const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi)
      fail(ErrorCode::kInvalidAttribute, std::string(primitive_name(kind)) + ": expected " +
                                             std::to_string(lo) + ".." + std::to_string(hi) +
                                             " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case PrimitiveKind::kAdd: need(2, 2); return add(inputs[0], inputs[1]);
    case PrimitiveKind::kMul: need(2, 2); return mul(inputs[0], inputs[1]);
    case PrimitiveKind::kMatmul: need(2, 2); return matmul(inputs[0], inputs[1]);
    case PrimitiveKind::kSoftmaxRows: need(1, 1); return softmax_rows(inputs[0]);
    case PrimitiveKind::kLayerNorm:
      need(1, 3);
      if (inputs.size() == 1) return layer_norm(inputs[0], attrs.epsilon);
      need(3, 3);
      return layer_norm(inputs[0], inputs[1], inputs[2], attrs.epsilon);
    case PrimitiveKind::kGelu: need(1, 1); return gelu(inputs[0]);
    case PrimitiveKind::kCrossEntropyFromLogits:
      need(1, 2);
      if (inputs.size() == 2)
        return cross_entropy_soft(inputs[0], inputs[1], attrs.row_weights, attrs.denominator);
      return cross_entropy_from_logits(inputs[0], attrs.targets, attrs.label_smoothing,
                                       attrs.row_weights, attrs.denominator);
    case PrimitiveKind::kMseMasked: need(2, 2); return mse_masked(inputs[0], inputs[1], attrs.row_mask);
    case PrimitiveKind::kTranspose: need(1, 1); return transpose(inputs[0]);
    case PrimitiveKind::kReshape: need(1, 1); return reshape(inputs[0], attrs.shape);
    case PrimitiveKind::kMean:
      need(1, 1);
      return attrs.axis ? mean(inputs[0], *attrs.axis) : mean(inputs[0]);
    case PrimitiveKind::kScale: need(1, 1); return scale(inputs[0], attrs.factor);
    case PrimitiveKind::kConcat: need(1, inputs.size()); return concat(inputs, attrs.axis.value_or(0));
    case PrimitiveKind::kSlice:
      need(1, 1);
      return slice(inputs[0], attrs.axis.value_or(0), attrs.start, attrs.length);
  }
  fail(ErrorCode::kInvalidAttribute, "unknown primitive");
}

// ---------------------------------------------------------------------------
// Reverse pass

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1)
    fail(ErrorCode::kNotScalar,
         "backward: root must hold one value, got " +
             (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  if (!root.tracked()) fail(ErrorCode::kUntrackedRoot, "backward: root has no recorded history");

  // Iterative post-order DFS over tracked nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node& r = *root.node();
  grad_of(r)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->kind) continue;
    if (!node->grad.empty() && node->adjoint) node->adjoint(*node);
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  require_defined(x, "finite_difference_gradient");
  if (!(h > 0.0)) fail(ErrorCode::kInvalidAttribute, "finite_difference_gradient: h must be > 0");
  std::vector<double> base(x.values().begin(), x.values().end());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base;
    std::vector<double> minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::constant(x.shape(), std::move(plus)));
    const double fm = f(Tensor::constant(x.shape(), std::move(minus)));
    if (!std::isfinite(fp) || !std::isfinite(fm))
      fail(ErrorCode::kNonFinite, "finite_difference_gradient: f is not finite near coordinate " +
                                      std::to_string(i));
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::constant(x.shape(), std::move(out));
}

}  // namespace pacmac::ad
