// Dense n-d tensors with tape-based reverse-mode differentiation.
//
// A Graph records operations as they execute; backward() walks the tape in
// reverse and accumulates gradients per node. Tensors are cheap handles:
// either a constant (owning its storage) or a reference to a graph node.
// The tape is rebuilt every training step, so graphs stay small and shapes
// may change freely between steps. A Graph and its Tensors belong to one
// thread; independent Graphs may run concurrently.
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlac/rng.hpp"

namespace vlac {

enum class Precision { f32, f64 };

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Plain value container, no graph attached.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  Array(Shape s, std::vector<double> d);
  static Array zeros(const Shape& s);
  static Array full(const Shape& s, double v);
  static Array scalar(double v);
  static Array normal(const Shape& s, Rng& rng);
  static Array uniform(const Shape& s, Rng& rng);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

class Graph;

class Tensor {
 public:
  Tensor() = default;
  static Tensor constant(Array a);
  static Tensor constant(const Shape& s, std::vector<double> v);
  static Tensor scalar(double v);

  bool defined() const { return const_data_ != nullptr || graph_ != nullptr; }
  bool in_graph() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  const Shape& shape() const;
  int64_t size() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  const std::vector<double>& values() const;
  double value() const;  // requires size() == 1
  Array to_array() const;

 private:
  friend class Graph;
  std::shared_ptr<const Array> const_data_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order; that order is a
// valid forward evaluation order by construction.
class Graph {
 public:
  explicit Graph(Precision precision = Precision::f64, bool check_finite = false);

  Precision precision() const { return precision_; }
  bool check_finite() const { return check_finite_; }
  size_t num_nodes() const { return nodes_.size(); }

  // Introduces a leaf. Parameters use requires_grad=true, data/noise false.
  Tensor leaf(Array a, bool requires_grad = false);

  // Binds a constant or foreign-free tensor into this graph.
  Tensor lift(const Tensor& t);

  // Accumulates gradients for every node reachable from the scalar loss.
  // The tape may be extended and backward() run again only after reset().
  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. t; zeros if t was not reached.
  Array grad(const Tensor& t) const;

  void reset();  // clears gradients and re-arms backward()

  // --- internal surface used by the op implementations ------------------
  using BackFn = std::function<void(Graph&, int self)>;
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
    BackFn backward;
    const char* op = "";
  };
  int add_node(Shape shape, std::vector<double> value, bool requires_grad, BackFn fn,
               const char* op);
  Node& node_at(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node_at(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Tensor handle(int id);
  void accumulate(int id, const std::vector<double>& g);
  std::vector<double>& grad_buffer(int id);  // zero-initialised on first use

 private:
  void finalize_values(std::vector<double>& v, const char* op) const;
  std::deque<Node> nodes_;  // deque: stable references across growth
  Precision precision_;
  bool check_finite_;
  bool backward_done_ = false;
};

// ---- operations --------------------------------------------------------
// Binary elementwise ops broadcast trailing dimensions, numpy style. If all
// operands are constants the result is a constant; if any operand is bound
// to a graph the others are lifted into it.

enum class EwOp { add, sub, mul, div, exp, log, tanh, sigmoid, softplus, relu, square, negate };
enum class ReduceOp { sum, mean, max };

Tensor elementwise(EwOp op, const Tensor& a);
Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor negate(const Tensor& a);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

// axis reduction; axis may be negative. keepdims retains the reduced axis
// with extent 1 (needed when the result broadcasts against the input).
Tensor reduce(ReduceOp op, const Tensor& a, std::optional<int> axis = std::nullopt,
              bool keepdims = false);
Tensor sum(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdims = false);
Tensor mean(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdims = false);
Tensor max(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdims = false);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor reshape(const Tensor& a, Shape new_shape);  // one extent may be -1
Tensor narrow(const Tensor& a, int axis, int64_t start, int64_t length);

// numerically stable softmax / log-softmax along one axis, built from the
// primitives above so gradients need no special casing
Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

// ---- gradient checking --------------------------------------------------

struct GradcheckFailure {
  int64_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::vector<GradcheckFailure> failures;
  bool passed = true;
};

// Central finite differences of a scalar-valued f against backward().
// Relative error uses max(|analytic|, |numeric|, 1e-6) as the denominator.
GradcheckReport gradcheck(const std::function<Tensor(Graph&, const Tensor&)>& f,
                          const Array& point, double eps = 1e-5, double tol = 1e-4);

}  // namespace vlac
