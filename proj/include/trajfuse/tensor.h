// Copyright 2026 The trajfuse Authors
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

#ifndef TRAJFUSE_TENSOR_H_
#define TRAJFUSE_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace trajfuse {

// Dense reverse-mode differentiable values. Every op builds a node that
// remembers its parents and a backward closure; Backward() walks the graph
// in reverse topological order. Data is row-major.

enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

using Shape = std::vector<std::size_t>;

std::string ShapeString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

// precision used by newly created values
DType DefaultDType();
void SetDefaultDType(DType dtype);

// RAII switch of the default precision
class ScopedDType {
 public:
  explicit ScopedDType(DType dtype);
  ~ScopedDType();
  ScopedDType(const ScopedDType&) = delete;
  ScopedDType& operator=(const ScopedDType&) = delete;

 private:
  DType previous_;
};

// While alive, newly created op results record no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace internal {

// Buffers share one alignment so vectorized kernels take the same code path
// (and summation order) on every run.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct Node {
  Shape shape;
  DType dtype = DType::kFloat32;
  bool requires_grad = false;
  Buffer<float> data32;
  Buffer<double> data64;
  Buffer<float> grad32;
  Buffer<double> grad64;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename T>
  Buffer<T>& data();
  template <typename T>
  Buffer<T>& grad();
  // allocates a zeroed gradient buffer on first use
  template <typename T>
  Buffer<T>& EnsureGrad();
  bool has_grad() const { return !grad32.empty() || !grad64.empty(); }
  std::size_t size() const { return NumElements(shape); }
};

template <>
inline Buffer<float>& Node::data<float>() { return data32; }
template <>
inline Buffer<double>& Node::data<double>() { return data64; }
template <>
inline Buffer<float>& Node::grad<float>() { return grad32; }
template <>
inline Buffer<double>& Node::grad<double>() { return grad64; }

template <typename T>
Buffer<T>& Node::EnsureGrad() {
  auto& g = grad<T>();
  if (g.size() != size()) g.assign(size(), T(0));
  return g;
}

}  // namespace internal

class Value {
 public:
  Value() = default;

  static Value Zeros(const Shape& shape, bool requires_grad = false);
  static Value Zeros(const Shape& shape, bool requires_grad, DType dtype);
  static Value FromVector(const Shape& shape, std::span<const double> values,
                          bool requires_grad = false);
  static Value FromVector(const Shape& shape, std::span<const double> values,
                          bool requires_grad, DType dtype);
  static Value Scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // first / second dimension of a rank-2 value
  std::size_t rows() const;
  std::size_t cols() const;
  DType dtype() const;
  bool requires_grad() const;

  double item() const;
  double at(std::size_t i) const;
  std::vector<double> ToVector() const;
  // zero-filled when no gradient reached this value
  std::vector<double> GradVector() const;
  void ZeroGrad();

  // overwrite the stored numbers in place (shape unchanged)
  void Assign(std::span<const double> values);

  // fresh leaf holding a copy of the data
  Value Detach(bool requires_grad = false) const;
  Value Cast(DType dtype) const;

  template <typename T>
  std::span<T> data() {
    return node_->data<T>();
  }
  template <typename T>
  std::span<const T> data() const {
    return node_->data<T>();
  }

  internal::Node* node() const { return node_.get(); }
  const std::shared_ptr<internal::Node>& shared_node() const { return node_; }

  explicit Value(std::shared_ptr<internal::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<internal::Node> node_;
};

// ---- graph evaluation ----------------------------------------------------

// Accumulates d(output)/d(node) into every node that requires a gradient.
// The output must be a scalar.
void Backward(const Value& output);

// Returns d(output)/d(leaf) for each leaf. Gradients of the graph nodes are
// reset first, so repeated calls on the same graph give identical results.
std::vector<std::vector<double>> Grad(const Value& output,
                                      const std::vector<Value>& leaves);

// ---- operations ----------------------------------------------------------

Value MatMul(const Value& a, const Value& b);
// x[r x in] * w[in x out] + b[out]; bias may be undefined
Value Linear(const Value& x, const Value& w, const Value& b);

Value Add(const Value& a, const Value& b);
Value Sub(const Value& a, const Value& b);
Value Mul(const Value& a, const Value& b);
Value Scale(const Value& a, double s);
Value AddScalar(const Value& a, double s);
// x[r x c] plus rows of e[n x c] repeated cyclically (r must be a multiple of n)
Value AddTiled(const Value& x, const Value& e);
// x[r x c] * scale[c] + shift[c]; per-column affine with constant coefficients
Value ColumnAffine(const Value& x, std::span<const double> scale,
                   std::span<const double> shift);

Value Gelu(const Value& x);  // tanh approximation
Value Sigmoid(const Value& x);
Value Relu(const Value& x);
Value Abs(const Value& x);
Value Square(const Value& x);

Value Sum(const Value& x);
Value Mean(const Value& x);

// Row-wise softmax over the last dimension. mask (optional, same number of
// entries as x) marks usable entries with 1; masked outputs are exactly 0.
// A fully masked row throws std::invalid_argument.
Value Softmax(const Value& x, std::span<const std::uint8_t> mask = {});

// Row-wise layer normalization with epsilon 1e-5 inside the square root.
Value LayerNorm(const Value& x, const Value& gain, const Value& bias);

// Multi-head scaled dot-product attention over a batch of sequences stored
// as stacked rows. q is [batch*nq x d]; k, v are [batch*nk x d]. key_mask
// (optional, batch*nk entries) excludes keys with 0; causal restricts query
// i to keys j <= i (requires nq == nk).
Value Attention(const Value& q, const Value& k, const Value& v,
                std::size_t heads, std::size_t batch,
                std::span<const std::uint8_t> key_mask, bool causal);

Value Reshape(const Value& x, const Shape& shape);
Value ConcatRows(const std::vector<Value>& parts);
Value ConcatCols(const std::vector<Value>& parts);
Value SliceRows(const Value& x, std::size_t start, std::size_t count);
Value SliceCols(const Value& x, std::size_t start, std::size_t count);
// output row i = table row index[i]
Value GatherRows(const Value& table, std::span<const std::size_t> index);

// mean squared error over entries with weight 1 (weight entries are 0/1);
// target is a constant
Value MaskedMse(const Value& pred, std::span<const double> target,
                std::span<const double> weight);
// mean binary cross-entropy of logits against constant 0/1 targets
Value BceWithLogits(const Value& logits, std::span<const double> targets);

}  // namespace trajfuse

#endif  // TRAJFUSE_TENSOR_H_
