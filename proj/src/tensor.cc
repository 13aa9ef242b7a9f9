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

#include "trajfuse/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

namespace trajfuse {
namespace {

using internal::Node;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

DType g_default_dtype = DType::kFloat32;
bool g_grad_enabled = true;

template <typename F>
decltype(auto) Dispatch(DType dtype, F&& f) {
  if (dtype == DType::kFloat32) return f.template operator()<float>();
  return f.template operator()<double>();
}

void CheckSameDType(const Value& a, const Value& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": operands have different precision");
  }
}

void CheckRank2(const Value& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 value, got " +
                         ShapeString(a.shape()));
  }
}

void CheckSameShape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
  }
  CheckSameDType(a, b, op);
}

// result node of an op; parents are kept only when a gradient can flow
Value MakeResult(const Shape& shape, DType dtype, std::initializer_list<Value> parents) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->dtype = dtype;
  for (const Value& p : parents) {
    if (g_grad_enabled && p.defined() && p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Value& p : parents) node->parents.push_back(p.shared_node());
  }
  const std::size_t n = NumElements(shape);
  if (dtype == DType::kFloat32) {
    node->data32.assign(n, 0.0f);
  } else {
    node->data64.assign(n, 0.0);
  }
  return Value(std::move(node));
}

Value MakeResult(const Shape& shape, DType dtype, const std::vector<Value>& parents) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->dtype = dtype;
  for (const Value& p : parents) {
    if (g_grad_enabled && p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Value& p : parents) node->parents.push_back(p.shared_node());
  }
  const std::size_t n = NumElements(shape);
  if (dtype == DType::kFloat32) {
    node->data32.assign(n, 0.0f);
  } else {
    node->data64.assign(n, 0.0);
  }
  return Value(std::move(node));
}

void SetBackward(Value& out, std::function<void(Node&)> fn) {
  if (out.requires_grad()) out.node()->backward = std::move(fn);
}

template <typename T>
T* Ptr(const Value& v) {
  return v.node()->data<T>().data();
}

// parent gradient buffer, or nullptr when the parent takes no gradient
template <typename T>
T* ParentGrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.EnsureGrad<T>().data();
}

template <typename T>
const T* ParentData(Node& self, std::size_t i) {
  return self.parents[i]->data<T>().data();
}

template <typename T>
T Gelu(T x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  const T u = kC * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T GeluGrad(T x) {
  constexpr T kC = T(0.7978845608028654);
  const T u = kC * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) +
         T(0.5) * x * (T(1) - t * t) * kC * (T(1) + T(3) * T(0.044715) * x * x);
}

template <typename T>
T StableSigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

std::vector<Node*> TopologicalOrder(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!root->requires_grad) return order;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

void RunBackward(const std::vector<Node*>& order) {
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

void SeedGrad(Node* root) {
  Dispatch(root->dtype, [&]<typename T>() {
    root->EnsureGrad<T>()[0] += T(1);
  });
}

}  // namespace

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

DType DefaultDType() { return g_default_dtype; }
void SetDefaultDType(DType dtype) { g_default_dtype = dtype; }

ScopedDType::ScopedDType(DType dtype) : previous_(g_default_dtype) {
  g_default_dtype = dtype;
}
ScopedDType::~ScopedDType() { g_default_dtype = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool GradEnabled() { return g_grad_enabled; }

// ---- Value ---------------------------------------------------------------

Value Value::Zeros(const Shape& shape, bool requires_grad) {
  return Zeros(shape, requires_grad, DefaultDType());
}

Value Value::Zeros(const Shape& shape, bool requires_grad, DType dtype) {
  Value v = MakeResult(shape, dtype, {});
  v.node()->requires_grad = requires_grad;
  return v;
}

Value Value::FromVector(const Shape& shape, std::span<const double> values,
                        bool requires_grad) {
  return FromVector(shape, values, requires_grad, DefaultDType());
}

Value Value::FromVector(const Shape& shape, std::span<const double> values,
                        bool requires_grad, DType dtype) {
  if (NumElements(shape) != values.size()) {
    throw DimensionError("FromVector: shape " + ShapeString(shape) + " needs " +
                         std::to_string(NumElements(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Value v = Zeros(shape, requires_grad, dtype);
  v.Assign(values);
  return v;
}

Value Value::Scalar(double v, bool requires_grad) {
  return FromVector({}, std::span<const double>(&v, 1), requires_grad);
}

const Shape& Value::shape() const { return node_->shape; }
std::size_t Value::size() const { return node_->size(); }
std::size_t Value::rows() const { return node_->shape.at(0); }
std::size_t Value::cols() const { return node_->shape.at(1); }
DType Value::dtype() const { return node_->dtype; }
bool Value::requires_grad() const { return node_ && node_->requires_grad; }

double Value::item() const {
  if (size() != 1) {
    throw DimensionError("item: value of shape " + ShapeString(shape()) +
                         " is not a scalar");
  }
  return at(0);
}

double Value::at(std::size_t i) const {
  return Dispatch(dtype(), [&]<typename T>() -> double {
    return static_cast<double>(node_->data<T>().at(i));
  });
}

std::vector<double> Value::ToVector() const {
  return Dispatch(dtype(), [&]<typename T>() {
    const auto& d = node_->data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

std::vector<double> Value::GradVector() const {
  return Dispatch(dtype(), [&]<typename T>() {
    const auto& g = node_->grad<T>();
    if (g.empty()) return std::vector<double>(size(), 0.0);
    return std::vector<double>(g.begin(), g.end());
  });
}

void Value::ZeroGrad() {
  node_->grad32.clear();
  node_->grad64.clear();
}

void Value::Assign(std::span<const double> values) {
  if (values.size() != size()) {
    throw DimensionError("Assign: expected " + std::to_string(size()) +
                         " values, got " + std::to_string(values.size()));
  }
  Dispatch(dtype(), [&]<typename T>() {
    auto& d = node_->data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
}

Value Value::Detach(bool requires_grad) const {
  Value v = Zeros(shape(), requires_grad, dtype());
  v.node()->data32 = node_->data32;
  v.node()->data64 = node_->data64;
  return v;
}

Value Value::Cast(DType target) const {
  if (target == dtype()) return Detach(requires_grad());
  return FromVector(shape(), ToVector(), requires_grad(), target);
}

// ---- graph evaluation ----------------------------------------------------

void Backward(const Value& output) {
  if (output.size() != 1) {
    throw GraphError("Backward: output must be a scalar, got shape " +
                     ShapeString(output.shape()));
  }
  if (!output.requires_grad()) return;
  auto order = TopologicalOrder(output.node());
  SeedGrad(output.node());
  RunBackward(order);
}

std::vector<std::vector<double>> Grad(const Value& output,
                                      const std::vector<Value>& leaves) {
  if (output.size() != 1) {
    throw GraphError("Grad: output must be a scalar, got shape " +
                     ShapeString(output.shape()));
  }
  if (!output.requires_grad()) {
    throw GraphError("Grad: output does not depend on any differentiable leaf");
  }
  auto order = TopologicalOrder(output.node());
  std::unordered_set<Node*> in_graph(order.begin(), order.end());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!leaves[i].requires_grad()) {
      throw GraphError("Grad: leaf " + std::to_string(i) + " does not require grad");
    }
    if (!in_graph.count(leaves[i].node())) {
      throw GraphError("Grad: leaf " + std::to_string(i) + " is not in the graph");
    }
  }
  for (Node* n : order) {
    n->grad32.clear();
    n->grad64.clear();
  }
  SeedGrad(output.node());
  RunBackward(order);
  std::vector<std::vector<double>> grads;
  grads.reserve(leaves.size());
  for (const Value& leaf : leaves) grads.push_back(leaf.GradVector());
  return grads;
}

// ---- operations ----------------------------------------------------------

Value MatMul(const Value& a, const Value& b) {
  CheckRank2(a, "matmul");
  CheckRank2(b, "matmul");
  CheckSameDType(a, b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + ShapeString(a.shape()) +
                         " x " + ShapeString(b.shape()));
  }
  Value out = MakeResult({m, n}, a.dtype(), {a, b});
  Dispatch(a.dtype(), [&]<typename T>() {
    MapMat<T>(Ptr<T>(out), m, n).noalias() =
        MapMat<T>(Ptr<T>(a), m, k) * MapMat<T>(Ptr<T>(b), k, n);
    SetBackward(out, [m, k, n](Node& self) {
      MapMat<T> go(self.grad<T>().data(), m, n);
      if (T* ga = ParentGrad<T>(self, 0)) {
        MapMat<T>(ga, m, k).noalias() +=
            go * MapMat<T>(const_cast<T*>(ParentData<T>(self, 1)), k, n).transpose();
      }
      if (T* gb = ParentGrad<T>(self, 1)) {
        MapMat<T>(gb, k, n).noalias() +=
            MapMat<T>(const_cast<T*>(ParentData<T>(self, 0)), m, k).transpose() * go;
      }
    });
  });
  return out;
}

Value Linear(const Value& x, const Value& w, const Value& b) {
  CheckRank2(x, "linear");
  CheckRank2(w, "linear");
  CheckSameDType(x, w, "linear");
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  if (w.rows() != k) {
    throw DimensionError("linear: input width " + ShapeString(x.shape()) +
                         " does not match weight " + ShapeString(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && b.size() != n) {
    throw DimensionError("linear: bias " + ShapeString(b.shape()) +
                         " does not match output width " + std::to_string(n));
  }
  Value out = has_bias ? MakeResult({m, n}, x.dtype(), {x, w, b})
                       : MakeResult({m, n}, x.dtype(), {x, w});
  Dispatch(x.dtype(), [&]<typename T>() {
    MapMat<T> o(Ptr<T>(out), m, n);
    o.noalias() = MapMat<T>(Ptr<T>(x), m, k) * MapMat<T>(Ptr<T>(w), k, n);
    if (has_bias) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(Ptr<T>(b), n);
      o.rowwise() += bias;
    }
    SetBackward(out, [m, k, n, has_bias](Node& self) {
      MapMat<T> go(self.grad<T>().data(), m, n);
      if (T* gx = ParentGrad<T>(self, 0)) {
        MapMat<T>(gx, m, k).noalias() +=
            go * MapMat<T>(const_cast<T*>(ParentData<T>(self, 1)), k, n).transpose();
      }
      if (T* gw = ParentGrad<T>(self, 1)) {
        MapMat<T>(gw, k, n).noalias() +=
            MapMat<T>(const_cast<T*>(ParentData<T>(self, 0)), m, k).transpose() * go;
      }
      if (has_bias) {
        if (T* gb = ParentGrad<T>(self, 2)) {
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, n) += go.colwise().sum();
        }
      }
    });
  });
  return out;
}

namespace {

// elementwise binary op with per-element partials da, db
template <typename Fwd, typename Da, typename Db>
Value Binary(const Value& a, const Value& b, const char* name, Fwd fwd, Da da, Db db) {
  CheckSameShape(a, b, name);
  Value out = MakeResult(a.shape(), a.dtype(), {a, b});
  Dispatch(a.dtype(), [&]<typename T>() {
    const T* pa = Ptr<T>(a);
    const T* pb = Ptr<T>(b);
    T* po = Ptr<T>(out);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    SetBackward(out, [n, da, db](Node& self) {
      const T* go = self.grad<T>().data();
      const T* xa = ParentData<T>(self, 0);
      const T* xb = ParentData<T>(self, 1);
      if (T* ga = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * da(xa[i], xb[i]);
      }
      if (T* gb = ParentGrad<T>(self, 1)) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * db(xa[i], xb[i]);
      }
    });
  });
  return out;
}

// elementwise unary op; grad receives (input, output)
template <typename Fwd, typename Dx>
Value Unary(const Value& x, Fwd fwd, Dx dx) {
  Value out = MakeResult(x.shape(), x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    const T* px = Ptr<T>(x);
    T* po = Ptr<T>(out);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    SetBackward(out, [n, dx](Node& self) {
      const T* go = self.grad<T>().data();
      const T* xi = ParentData<T>(self, 0);
      const T* yo = self.data<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * dx(xi[i], yo[i]);
      }
    });
  });
  return out;
}

}  // namespace

Value Add(const Value& a, const Value& b) {
  return Binary(
      a, b, "add", [](auto x, auto y) { return x + y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(1); });
}

Value Sub(const Value& a, const Value& b) {
  return Binary(
      a, b, "sub", [](auto x, auto y) { return x - y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(-1); });
}

Value Mul(const Value& a, const Value& b) {
  return Binary(
      a, b, "mul", [](auto x, auto y) { return x * y; }, [](auto, auto y) { return y; },
      [](auto x, auto) { return x; });
}

Value Scale(const Value& a, double s) {
  return Unary(
      a, [s](auto x) { return x * static_cast<decltype(x)>(s); },
      [s](auto x, auto) { return static_cast<decltype(x)>(s); });
}

Value AddScalar(const Value& a, double s) {
  return Unary(
      a, [s](auto x) { return x + static_cast<decltype(x)>(s); },
      [](auto x, auto) { return decltype(x)(1); });
}

Value AddTiled(const Value& x, const Value& e) {
  CheckRank2(x, "add_tiled");
  CheckRank2(e, "add_tiled");
  CheckSameDType(x, e, "add_tiled");
  const std::size_t r = x.rows(), c = x.cols(), n = e.rows();
  if (e.cols() != c || n == 0 || r % n != 0) {
    throw DimensionError("add_tiled: cannot tile " + ShapeString(e.shape()) + " over " +
                         ShapeString(x.shape()));
  }
  Value out = MakeResult(x.shape(), x.dtype(), {x, e});
  Dispatch(x.dtype(), [&]<typename T>() {
    const T* px = Ptr<T>(x);
    const T* pe = Ptr<T>(e);
    T* po = Ptr<T>(out);
    for (std::size_t i = 0; i < r; ++i) {
      const T* row_e = pe + (i % n) * c;
      for (std::size_t j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] + row_e[j];
    }
    SetBackward(out, [r, c, n](Node& self) {
      const T* go = self.grad<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < r * c; ++i) gx[i] += go[i];
      }
      if (T* ge = ParentGrad<T>(self, 1)) {
        for (std::size_t i = 0; i < r; ++i) {
          T* row = ge + (i % n) * c;
          for (std::size_t j = 0; j < c; ++j) row[j] += go[i * c + j];
        }
      }
    });
  });
  return out;
}

Value ColumnAffine(const Value& x, std::span<const double> scale,
                   std::span<const double> shift) {
  CheckRank2(x, "column_affine");
  const std::size_t r = x.rows(), c = x.cols();
  if (scale.size() != c || shift.size() != c) {
    throw DimensionError("column_affine: coefficient count does not match " +
                         ShapeString(x.shape()));
  }
  Value out = MakeResult(x.shape(), x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    std::vector<T> sc(scale.begin(), scale.end());
    std::vector<T> sh(shift.begin(), shift.end());
    const T* px = Ptr<T>(x);
    T* po = Ptr<T>(out);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] * sc[j] + sh[j];
    }
    SetBackward(out, [r, c, sc](Node& self) {
      const T* go = self.grad<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[i * c + j] * sc[j];
        }
      }
    });
  });
  return out;
}

Value Gelu(const Value& x) {
  return Unary(
      x, [](auto v) { return Gelu(v); }, [](auto v, auto) { return GeluGrad(v); });
}

Value Sigmoid(const Value& x) {
  return Unary(
      x, [](auto v) { return StableSigmoid(v); },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Value Relu(const Value& x) {
  return Unary(
      x, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); },
      [](auto v, auto) { return v > decltype(v)(0) ? decltype(v)(1) : decltype(v)(0); });
}

Value Abs(const Value& x) {
  return Unary(
      x, [](auto v) { return std::abs(v); },
      [](auto v, auto) {
        using T = decltype(v);
        return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
      });
}

Value Square(const Value& x) {
  return Unary(
      x, [](auto v) { return v * v; }, [](auto v, auto) { return decltype(v)(2) * v; });
}

Value Sum(const Value& x) {
  Value out = MakeResult({}, x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    const T* px = Ptr<T>(x);
    const std::size_t n = x.size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += px[i];
    Ptr<T>(out)[0] = acc;
    SetBackward(out, [n](Node& self) {
      const T g = self.grad<T>()[0];
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
      }
    });
  });
  return out;
}

Value Mean(const Value& x) {
  if (x.size() == 0) throw DimensionError("mean: empty value");
  return Scale(Sum(x), 1.0 / static_cast<double>(x.size()));
}

Value Softmax(const Value& x, std::span<const std::uint8_t> mask) {
  if (x.rank() == 0) throw DimensionError("softmax: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n == 0 ? 0 : x.size() / n;
  if (!mask.empty() && mask.size() != x.size()) {
    throw DimensionError("softmax: mask has " + std::to_string(mask.size()) +
                         " entries for input " + ShapeString(x.shape()));
  }
  Value out = MakeResult(x.shape(), x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    const T* px = Ptr<T>(x);
    T* py = Ptr<T>(out);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = px + r * n;
      T* yr = py + r * n;
      auto usable = [&](std::size_t j) { return mask.empty() || mask[r * n + j] != 0; };
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        if (usable(j)) {
          mx = std::max(mx, xr[j]);
          any = true;
        }
      }
      if (!any) {
        throw std::invalid_argument("softmax: row " + std::to_string(r) + " is fully masked");
      }
      T sum = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        yr[j] = usable(j) ? std::exp(xr[j] - mx) : T(0);
        sum += yr[j];
      }
      for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
    }
    SetBackward(out, [rows, n](Node& self) {
      const T* go = self.grad<T>().data();
      const T* y = self.data<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += go[r * n + j] * y[r * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
          }
        }
      }
    });
  });
  return out;
}

Value LayerNorm(const Value& x, const Value& gain, const Value& bias) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (d < 2) throw DimensionError("layer_norm: feature width must be at least 2");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + ShapeString(gain.shape()) + "/" +
                         ShapeString(bias.shape()) + " do not match width " +
                         std::to_string(d));
  }
  CheckSameDType(x, gain, "layer_norm");
  CheckSameDType(x, bias, "layer_norm");
  const std::size_t rows = x.size() / d;
  Value out = MakeResult(x.shape(), x.dtype(), {x, gain, bias});
  Dispatch(x.dtype(), [&]<typename T>() {
    constexpr T kEps = T(1e-5);
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* px = Ptr<T>(x);
    const T* pg = Ptr<T>(gain);
    const T* pb = Ptr<T>(bias);
    T* py = Ptr<T>(out);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = px + r * d;
      T mean = T(0);
      for (std::size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= T(d);
      T var = T(0);
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + kEps);
      (*inv_std)[r] = inv;
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (xr[j] - mean) * inv;
        (*xhat)[r * d + j] = h;
        py[r * d + j] = h * pg[j] + pb[j];
      }
    }
    SetBackward(out, [rows, d, xhat, inv_std](Node& self) {
      const T* go = self.grad<T>().data();
      const T* g = ParentData<T>(self, 1);
      T* gx = ParentGrad<T>(self, 0);
      T* gg = ParentGrad<T>(self, 1);
      T* gb = ParentGrad<T>(self, 2);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gor = go + r * d;
        const T* hr = xhat->data() + r * d;
        if (gg || gb) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += gor[j] * hr[j];
            if (gb) gb[j] += gor[j];
          }
        }
        if (gx) {
          T mean_gh = T(0), mean_ghh = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            const T gh = gor[j] * g[j];
            mean_gh += gh;
            mean_ghh += gh * hr[j];
          }
          mean_gh /= T(d);
          mean_ghh /= T(d);
          const T inv = (*inv_std)[r];
          for (std::size_t j = 0; j < d; ++j) {
            gx[r * d + j] += inv * (gor[j] * g[j] - mean_gh - hr[j] * mean_ghh);
          }
        }
      }
    });
  });
  return out;
}

Value Attention(const Value& q, const Value& k, const Value& v, std::size_t heads,
                std::size_t batch, std::span<const std::uint8_t> key_mask, bool causal) {
  CheckRank2(q, "attention");
  CheckRank2(k, "attention");
  CheckRank2(v, "attention");
  CheckSameDType(q, k, "attention");
  CheckSameDType(q, v, "attention");
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) +
                         " not divisible by head count " + std::to_string(heads));
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attention: q/k/v shapes " + ShapeString(q.shape()) + ", " +
                         ShapeString(k.shape()) + ", " + ShapeString(v.shape()) +
                         " are inconsistent");
  }
  if (batch == 0 || q.rows() % batch != 0 || k.rows() % batch != 0) {
    throw DimensionError("attention: rows not divisible by batch " + std::to_string(batch));
  }
  const std::size_t nq = q.rows() / batch, nk = k.rows() / batch;
  if (!key_mask.empty() && key_mask.size() != batch * nk) {
    throw DimensionError("attention: key mask has " + std::to_string(key_mask.size()) +
                         " entries, expected " + std::to_string(batch * nk));
  }
  if (causal && nq != nk) throw DimensionError("attention: causal needs nq == nk");
  const std::size_t dh = d / heads;
  Value out = MakeResult(q.shape(), q.dtype(), {q, k, v});
  Dispatch(q.dtype(), [&]<typename T>() {
    const T scale = T(1) / std::sqrt(T(dh));
    // probabilities per (batch, head): nq x nk
    auto probs = std::make_shared<std::vector<T>>(batch * heads * nq * nk, T(0));
    std::vector<std::uint8_t> allowed(nq * nk);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < nq; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < nk; ++j) {
          bool ok = key_mask.empty() || key_mask[b * nk + j] != 0;
          if (causal && j > i) ok = false;
          allowed[i * nk + j] = ok;
          any = any || ok;
        }
        if (!any) {
          throw std::invalid_argument("attention: query " + std::to_string(i) + " of item " +
                           std::to_string(b) + " has no visible key");
        }
      }
      for (std::size_t h = 0; h < heads; ++h) {
        StridedMap<T> qm(Ptr<T>(q) + b * nq * d + h * dh, nq, dh, Eigen::OuterStride<>(d));
        StridedMap<T> km(Ptr<T>(k) + b * nk * d + h * dh, nk, dh, Eigen::OuterStride<>(d));
        StridedMap<T> vm(Ptr<T>(v) + b * nk * d + h * dh, nk, dh, Eigen::OuterStride<>(d));
        StridedMap<T> om(Ptr<T>(out) + b * nq * d + h * dh, nq, dh, Eigen::OuterStride<>(d));
        MapMat<T> p(probs->data() + (b * heads + h) * nq * nk, nq, nk);
        p.noalias() = (qm * km.transpose()) * scale;
        for (std::size_t i = 0; i < nq; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < nk; ++j) {
            if (allowed[i * nk + j]) mx = std::max(mx, p(i, j));
          }
          T sum = T(0);
          for (std::size_t j = 0; j < nk; ++j) {
            p(i, j) = allowed[i * nk + j] ? std::exp(p(i, j) - mx) : T(0);
            sum += p(i, j);
          }
          for (std::size_t j = 0; j < nk; ++j) p(i, j) /= sum;
        }
        om.noalias() = p * vm;
      }
    }
    SetBackward(out, [=](Node& self) {
      T* gq = ParentGrad<T>(self, 0);
      T* gk = ParentGrad<T>(self, 1);
      T* gv = ParentGrad<T>(self, 2);
      T* go = self.grad<T>().data();
      T* pq = const_cast<T*>(ParentData<T>(self, 0));
      T* pk = const_cast<T*>(ParentData<T>(self, 1));
      T* pv = const_cast<T*>(ParentData<T>(self, 2));
      RowMat<T> dp(nq, nk), ds(nq, nk);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
          const Eigen::OuterStride<> st(d);
          StridedMap<T> gom(go + b * nq * d + h * dh, nq, dh, st);
          StridedMap<T> qm(pq + b * nq * d + h * dh, nq, dh, st);
          StridedMap<T> km(pk + b * nk * d + h * dh, nk, dh, st);
          StridedMap<T> vm(pv + b * nk * d + h * dh, nk, dh, st);
          MapMat<T> p(probs->data() + (b * heads + h) * nq * nk, nq, nk);
          if (gv) {
            StridedMap<T>(gv + b * nk * d + h * dh, nk, dh, st).noalias() +=
                p.transpose() * gom;
          }
          if (!gq && !gk) continue;
          dp.noalias() = gom * vm.transpose();
          for (std::size_t i = 0; i < nq; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < nk; ++j) dot += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < nk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          }
          if (gq) {
            StridedMap<T>(gq + b * nq * d + h * dh, nq, dh, st).noalias() += ds * km;
          }
          if (gk) {
            StridedMap<T>(gk + b * nk * d + h * dh, nk, dh, st).noalias() +=
                ds.transpose() * qm;
          }
        }
      }
    });
  });
  return out;
}

Value Reshape(const Value& x, const Shape& shape) {
  if (NumElements(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + ShapeString(x.shape()) + " as " +
                         ShapeString(shape));
  }
  Value out = MakeResult(shape, x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    std::copy_n(Ptr<T>(x), x.size(), Ptr<T>(out));
    SetBackward(out, [](Node& self) {
      const auto& go = self.grad<T>();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
    });
  });
  return out;
}

Value ConcatRows(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].rank() == 2 ? parts[0].cols() : 0;
  std::size_t rows = 0;
  for (const Value& p : parts) {
    CheckRank2(p, "concat_rows");
    CheckSameDType(p, parts[0], "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: width mismatch " + ShapeString(parts[0].shape()) +
                           " vs " + ShapeString(p.shape()));
    }
    rows += p.rows();
  }
  Value out = MakeResult({rows, c}, parts[0].dtype(), parts);
  Dispatch(out.dtype(), [&]<typename T>() {
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Value& p : parts) {
      offsets.push_back(off);
      std::copy_n(Ptr<T>(p), p.size(), Ptr<T>(out) + off);
      off += p.size();
    }
    SetBackward(out, [offsets](Node& self) {
      const T* go = self.grad<T>().data();
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        if (T* gp = ParentGrad<T>(self, i)) {
          const std::size_t n = self.parents[i]->size();
          for (std::size_t j = 0; j < n; ++j) gp[j] += go[offsets[i] + j];
        }
      }
    });
  });
  return out;
}

Value ConcatCols(const std::vector<Value>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rank() == 2 ? parts[0].rows() : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const Value& p : parts) {
    CheckRank2(p, "concat_cols");
    CheckSameDType(p, parts[0], "concat_cols");
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " + ShapeString(parts[0].shape()) +
                           " vs " + ShapeString(p.shape()));
    }
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Value out = MakeResult({r, cols}, parts[0].dtype(), parts);
  Dispatch(out.dtype(), [&]<typename T>() {
    T* po = Ptr<T>(out);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* pp = Ptr<T>(parts[k]);
      for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(pp + i * widths[k], widths[k], po + i * cols + off);
      }
      off += widths[k];
    }
    SetBackward(out, [r, cols, widths](Node& self) {
      const T* go = self.grad<T>().data();
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (T* gp = ParentGrad<T>(self, k)) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < widths[k]; ++j) {
              gp[i * widths[k] + j] += go[i * cols + off + j];
            }
          }
        }
        off += widths[k];
      }
    });
  });
  return out;
}

Value SliceRows(const Value& x, std::size_t start, std::size_t count) {
  CheckRank2(x, "slice_rows");
  if (start + count > x.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + ShapeString(x.shape()));
  }
  const std::size_t c = x.cols();
  Value out = MakeResult({count, c}, x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    std::copy_n(Ptr<T>(x) + start * c, count * c, Ptr<T>(out));
    SetBackward(out, [start, count, c](Node& self) {
      const T* go = self.grad<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < count * c; ++i) gx[start * c + i] += go[i];
      }
    });
  });
  return out;
}

Value SliceCols(const Value& x, std::size_t start, std::size_t count) {
  CheckRank2(x, "slice_cols");
  if (start + count > x.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + ShapeString(x.shape()));
  }
  const std::size_t r = x.rows(), c = x.cols();
  Value out = MakeResult({r, count}, x.dtype(), {x});
  Dispatch(x.dtype(), [&]<typename T>() {
    const T* px = Ptr<T>(x);
    T* po = Ptr<T>(out);
    for (std::size_t i = 0; i < r; ++i) std::copy_n(px + i * c + start, count, po + i * count);
    SetBackward(out, [r, c, start, count](Node& self) {
      const T* go = self.grad<T>().data();
      if (T* gx = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += go[i * count + j];
        }
      }
    });
  });
  return out;
}

Value GatherRows(const Value& table, std::span<const std::size_t> index) {
  CheckRank2(table, "gather_rows");
  const std::size_t c = table.cols();
  for (std::size_t idx : index) {
    if (idx >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(idx) + " out of " +
                           ShapeString(table.shape()));
    }
  }
  std::vector<std::size_t> rows(index.begin(), index.end());
  Value out = MakeResult({rows.size(), c}, table.dtype(), {table});
  Dispatch(table.dtype(), [&]<typename T>() {
    const T* pt = Ptr<T>(table);
    T* po = Ptr<T>(out);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(pt + rows[i] * c, c, po + i * c);
    SetBackward(out, [rows, c](Node& self) {
      const T* go = self.grad<T>().data();
      if (T* gt = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
          for (std::size_t j = 0; j < c; ++j) gt[rows[i] * c + j] += go[i * c + j];
        }
      }
    });
  });
  return out;
}

Value MaskedMse(const Value& pred, std::span<const double> target,
                std::span<const double> weight) {
  if (target.size() != pred.size() || weight.size() != pred.size()) {
    throw DimensionError("masked_mse: target/weight sizes do not match " +
                         ShapeString(pred.shape()));
  }
  double count = 0.0;
  for (double w : weight) count += w;
  Value out = MakeResult({}, pred.dtype(), {pred});
  Dispatch(pred.dtype(), [&]<typename T>() {
    const T* pp = Ptr<T>(pred);
    const std::size_t n = pred.size();
    auto diff = std::make_shared<std::vector<T>>(n);
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      (*diff)[i] = weight[i] != 0.0 ? pp[i] - static_cast<T>(target[i]) : T(0);
      acc += (*diff)[i] * (*diff)[i];
    }
    const T inv = count > 0.0 ? T(1.0 / count) : T(0);
    Ptr<T>(out)[0] = acc * inv;
    SetBackward(out, [diff, inv](Node& self) {
      const T g = self.grad<T>()[0];
      if (T* gp = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < diff->size(); ++i) gp[i] += g * T(2) * (*diff)[i] * inv;
      }
    });
  });
  return out;
}

Value BceWithLogits(const Value& logits, std::span<const double> targets) {
  if (targets.size() != logits.size() || logits.size() == 0) {
    throw DimensionError("bce: target size does not match " + ShapeString(logits.shape()));
  }
  Value out = MakeResult({}, logits.dtype(), {logits});
  Dispatch(logits.dtype(), [&]<typename T>() {
    const T* pz = Ptr<T>(logits);
    const std::size_t n = logits.size();
    auto y = std::make_shared<std::vector<T>>(targets.begin(), targets.end());
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T z = pz[i];
      acc += std::max(z, T(0)) - z * (*y)[i] + std::log1p(std::exp(-std::abs(z)));
    }
    const T inv = T(1) / T(n);
    Ptr<T>(out)[0] = acc * inv;
    SetBackward(out, [y, inv](Node& self) {
      const T g = self.grad<T>()[0];
      const T* z = ParentData<T>(self, 0);
      if (T* gz = ParentGrad<T>(self, 0)) {
        for (std::size_t i = 0; i < y->size(); ++i) {
          gz[i] += g * (StableSigmoid(z[i]) - (*y)[i]) * inv;
        }
      }
    });
  });
  return out;
}

}  // namespace trajfuse
