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

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of doubles.
//
// A Tensor is a cheap handle onto a shared node. Nodes produced by a
// primitive record their inputs and an adjoint only when at least one input
// is tracked and gradient recording is enabled on the calling thread (see
// NoGradGuard). Graph construction is single-owner; forward evaluation over
// untracked inputs is safe from any number of threads.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pacmac::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class PrimitiveKind {
  kAdd,
  kMul,
  kMatmul,
  kSoftmaxRows,
  kLayerNorm,
  kGelu,
  kCrossEntropyFromLogits,
  kMseMasked,
  kTranspose,
  kReshape,
  kMean,
  kScale,
  kConcat,
  kSlice,
};

inline constexpr PrimitiveKind kAllPrimitives[] = {
    PrimitiveKind::kAdd,         PrimitiveKind::kMul,
    PrimitiveKind::kMatmul,      PrimitiveKind::kSoftmaxRows,
    PrimitiveKind::kLayerNorm,   PrimitiveKind::kGelu,
    PrimitiveKind::kCrossEntropyFromLogits,
    PrimitiveKind::kMseMasked,   PrimitiveKind::kTranspose,
    PrimitiveKind::kReshape,     PrimitiveKind::kMean,
    PrimitiveKind::kScale,       PrimitiveKind::kConcat,
    PrimitiveKind::kSlice,
};

const char* primitive_name(PrimitiveKind kind);

struct Node;

class Tensor {
 public:
  Tensor() = default;

  /// Untracked tensor. Throws ShapeMismatch if the value count disagrees
  /// with the shape.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  /// Tracked leaf: backward() accumulates into its gradient.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Writable view of the values. Only legal on leaves; interior nodes are
  /// immutable once produced.
  std::span<double> mutable_values();
  double item() const;

  bool tracked() const;
  bool is_leaf() const;
  std::optional<PrimitiveKind> producer() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Untracked deep copy of the values.
  Tensor detach() const;
  /// Deep copy that keeps the tracked flag for leaves (used to clone
  /// parameter sets).
  Tensor clone_leaf() const;

  std::shared_ptr<Node> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::optional<PrimitiveKind> kind;  // nullopt for leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> adjoint;  // pushes this->grad into inputs
};

/// Disables history recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Attribute bag for evaluate_primitive. Each primitive reads only the
/// fields it documents; the typed wrappers below are the usual entry point.
struct PrimitiveAttrs {
  double epsilon = 1e-6;              // layer_norm, must be > 0
  double factor = 1.0;                // scale
  std::optional<std::size_t> axis;    // mean (nullopt = all elements), concat, slice
  std::size_t start = 0;              // slice
  std::size_t length = 0;             // slice
  Shape shape;                        // reshape
  std::vector<int> targets;           // cross_entropy: hard labels (ignored with soft targets)
  std::vector<double> row_weights;    // cross_entropy: per-row weight, default 1
  double label_smoothing = 0.0;       // cross_entropy, hard labels only
  std::optional<double> denominator;  // cross_entropy: defaults to the row count
  std::vector<std::uint8_t> row_mask; // mse_masked: rows that count, default all
};

Tensor evaluate_primitive(PrimitiveKind kind, std::span<const Tensor> inputs,
                          const PrimitiveAttrs& attrs = {});

/// Elementwise sum. `b` may also be a row bias: its shape a suffix of a's
/// shape, repeated over the leading rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// [.., n, k] x [k, m] (leading dims folded into rows) or batched
/// [B, n, k] x [B, k, m].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, double epsilon = 1e-6);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-6);
Tensor gelu(const Tensor& x);
/// Cross-entropy of each logits row against a hard label, weighted and
/// normalized per attrs. Logits are [R, C] or a single row [C].
Tensor cross_entropy_from_logits(const Tensor& logits, std::vector<int> targets,
                                 double label_smoothing = 0.0,
                                 std::vector<double> row_weights = {},
                                 std::optional<double> denominator = std::nullopt);
/// Cross-entropy against a soft target distribution that may itself be
/// tracked. With targets = softmax(logits) this is the Shannon entropy.
Tensor cross_entropy_soft(const Tensor& logits, const Tensor& targets,
                          std::vector<double> row_weights = {},
                          std::optional<double> denominator = std::nullopt);
/// Mean squared difference over the selected rows (last axis = row).
Tensor mse_masked(const Tensor& prediction, const Tensor& target,
                  std::vector<std::uint8_t> row_mask = {});
/// Swaps the two trailing axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis);
Tensor scale(const Tensor& x, double factor);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor sum(const Tensor& x);

/// Populates gradients of every tracked leaf reachable from `root`.
/// Throws NotScalar or UntrackedRoot.
void backward(const Tensor& root);

/// Central-difference gradient of a scalar function. Throws NonFinite when f
/// returns NaN or Inf, InvalidAttribute when h <= 0.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

}  // namespace pacmac::ad
