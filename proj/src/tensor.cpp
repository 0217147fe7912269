#include "vlac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace vlac {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("Array: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
}

Array Array::zeros(const Shape& s) { return Array(s, std::vector<double>(numel(s), 0.0)); }
Array Array::full(const Shape& s, double v) { return Array(s, std::vector<double>(numel(s), v)); }
Array Array::scalar(double v) { return Array({}, {v}); }

Array Array::normal(const Shape& s, Rng& rng) {
  Array a = zeros(s);
  for (double& x : a.data) x = rng.normal();
  return a;
}

Array Array::uniform(const Shape& s, Rng& rng) {
  Array a = zeros(s);
  for (double& x : a.data) x = rng.uniform();
  return a;
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::constant(Array a) {
  Tensor t;
  t.const_data_ = std::make_shared<const Array>(std::move(a));
  return t;
}

Tensor Tensor::constant(const Shape& s, std::vector<double> v) {
  return constant(Array(s, std::move(v)));
}

Tensor Tensor::scalar(double v) { return constant(Array::scalar(v)); }

const Shape& Tensor::shape() const {
  if (graph_) return graph_->node_at(node_).shape;
  if (const_data_) return const_data_->shape;
  throw std::logic_error("shape() on undefined tensor");
}

int64_t Tensor::size() const { return numel(shape()); }

const std::vector<double>& Tensor::values() const {
  if (graph_) return graph_->node_at(node_).value;
  if (const_data_) return const_data_->data;
  throw std::logic_error("values() on undefined tensor");
}

double Tensor::value() const {
  if (size() != 1) throw std::invalid_argument("value() on non-scalar tensor " + shape_str(shape()));
  return values()[0];
}

Array Tensor::to_array() const { return Array(shape(), values()); }

// ---- Graph ----------------------------------------------------------------

Graph::Graph(Precision precision, bool check_finite)
    : precision_(precision), check_finite_(check_finite) {}

void Graph::finalize_values(std::vector<double>& v, const char* op) const {
  if (precision_ == Precision::f32)
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  if (check_finite_)
    for (double x : v)
      if (!std::isfinite(x))
        throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

int Graph::add_node(Shape shape, std::vector<double> value, bool requires_grad, BackFn fn,
                    const char* op) {
  finalize_values(value, op);
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = requires_grad ? std::move(fn) : BackFn{};
  n.op = op;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::handle(int id) {
  Tensor t;
  t.graph_ = this;
  t.node_ = id;
  return t;
}

Tensor Graph::leaf(Array a, bool requires_grad) {
  return handle(add_node(std::move(a.shape), std::move(a.data), requires_grad, {}, "leaf"));
}

Tensor Graph::lift(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("lift: undefined tensor");
  if (t.graph_ == this) return t;
  if (t.graph_) throw std::invalid_argument("lift: tensor belongs to a different graph");
  return leaf(t.to_array(), false);
}

std::vector<double>& Graph::grad_buffer(int id) {
  Node& n = node_at(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::accumulate(int id, const std::vector<double>& g) {
  std::vector<double>& buf = grad_buffer(id);
  if (buf.size() != g.size()) throw std::logic_error("gradient size mismatch");
  for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Graph::backward(const Tensor& loss) {
  if (loss.graph() != this) throw std::invalid_argument("backward: loss not in this graph");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (backward_done_)
    throw std::runtime_error("backward: graph already differentiated; call reset() first");
  backward_done_ = true;
  grad_buffer(loss.node())[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    Node& n = node_at(i);
    if (!n.grad.empty() && n.backward) n.backward(*this, i);
  }
}

Array Graph::grad(const Tensor& t) const {
  if (t.graph() != this) throw std::invalid_argument("grad: tensor not in this graph");
  const Node& n = node_at(t.node());
  if (n.grad.empty()) return Array::zeros(n.shape);
  return Array(n.shape, n.grad);
}

void Graph::reset() {
  for (Node& n : nodes_) n.grad.clear();
  backward_done_ = false;
}

// ---- broadcast machinery ----------------------------------------------

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t ra = a.size(), rb = b.size();
  const size_t r = std::max(ra, rb);
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t ea = i < ra ? a[ra - 1 - i] : 1;
    const int64_t eb = i < rb ? b[rb - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " are not broadcast-compatible");
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides of `in` viewed under the broadcast shape `out`
// (0 where the input dimension is broadcast).
std::vector<int64_t> broadcast_strides(const Shape& out, const Shape& in) {
  const size_t r = out.size(), ri = in.size();
  std::vector<int64_t> st(r, 0);
  int64_t stride = 1;
  for (size_t i = 0; i < ri; ++i) {
    const size_t d = ri - 1 - i;           // input dim
    const size_t od = r - 1 - i;           // matching output dim
    st[od] = (in[d] == 1 && out[od] != 1) ? 0 : stride;
    stride *= in[d];
  }
  return st;
}

template <typename F>
void broadcast_apply(const Shape& out, const Shape& sa, const std::vector<double>& va,
                     const Shape& sb, const std::vector<double>& vb, std::vector<double>& res,
                     F&& f) {
  const int64_t n = numel(out);
  if (sa == sb) {  // common fast path
    for (int64_t i = 0; i < n; ++i) res[i] = f(va[i], vb[i]);
    return;
  }
  if (vb.size() == 1) {
    const double b = vb[0];
    for (int64_t i = 0; i < n; ++i) res[i] = f(va[i], b);
    return;
  }
  if (va.size() == 1) {
    const double a = va[0];
    for (int64_t i = 0; i < n; ++i) res[i] = f(a, vb[i]);
    return;
  }
  const auto stra = broadcast_strides(out, sa);
  const auto strb = broadcast_strides(out, sb);
  const int r = static_cast<int>(out.size());
  std::vector<int64_t> cnt(r, 0);
  int64_t offa = 0, offb = 0;
  for (int64_t i = 0; i < n; ++i) {
    res[i] = f(va[offa], vb[offb]);
    for (int d = r - 1; d >= 0; --d) {
      ++cnt[d];
      offa += stra[d];
      offb += strb[d];
      if (cnt[d] < out[d]) break;
      cnt[d] = 0;
      offa -= stra[d] * out[d];
      offb -= strb[d] * out[d];
    }
  }
}

// Sum-reduces a gradient of shape `from` down to `to` (the gradient of a
// broadcast operand is the sum over the broadcast axes).
std::vector<double> reduce_to(const std::vector<double>& g, const Shape& from, const Shape& to) {
  if (from == to) return g;
  std::vector<double> out(static_cast<size_t>(numel(to)), 0.0);
  const auto str = broadcast_strides(from, to);
  const int r = static_cast<int>(from.size());
  std::vector<int64_t> cnt(r, 0);
  int64_t off = 0;
  const int64_t n = numel(from);
  for (int64_t i = 0; i < n; ++i) {
    out[off] += g[i];
    for (int d = r - 1; d >= 0; --d) {
      ++cnt[d];
      off += str[d];
      if (cnt[d] < from[d]) break;
      cnt[d] = 0;
      off -= str[d] * from[d];
    }
  }
  return out;
}

template <typename Rec>
Tensor dispatch(std::initializer_list<const Tensor*> ins, Rec&& rec) {
  Graph* g = nullptr;
  for (const Tensor* t : ins) {
    if (!t->defined()) throw std::invalid_argument("operation on undefined tensor");
    if (t->in_graph()) {
      if (g && g != t->graph())
        throw std::invalid_argument("operation on tensors from different graphs");
      g = t->graph();
    }
  }
  if (g) return rec(*g);
  Graph tmp;
  Tensor r = rec(tmp);
  return Tensor::constant(r.to_array());
}

struct UnaryDef {
  const char* name;
  double (*fwd)(double);
  // d(out)/d(in) given input x and output y
  double (*dfdx)(double x, double y);
};

double fwd_exp(double x) { return std::exp(x); }
double fwd_log(double x) { return std::log(x); }
double fwd_tanh(double x) { return std::tanh(x); }
double fwd_sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
double fwd_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double fwd_relu(double x) { return x > 0 ? x : 0.0; }
double fwd_square(double x) { return x * x; }
double fwd_negate(double x) { return -x; }

const UnaryDef& unary_def(EwOp op) {
  static const UnaryDef defs[] = {
      {"exp", fwd_exp, [](double, double y) { return y; }},
      {"log", fwd_log, [](double x, double) { return 1.0 / x; }},
      {"tanh", fwd_tanh, [](double, double y) { return 1.0 - y * y; }},
      {"sigmoid", fwd_sigmoid, [](double, double y) { return y * (1.0 - y); }},
      {"softplus", fwd_softplus, [](double x, double) { return fwd_sigmoid(x); }},
      // relu tie at 0 takes gradient 0
      {"relu", fwd_relu, [](double x, double) { return x > 0 ? 1.0 : 0.0; }},
      {"square", fwd_square, [](double x, double) { return 2.0 * x; }},
      {"negate", fwd_negate, [](double, double) { return -1.0; }},
  };
  switch (op) {
    case EwOp::exp: return defs[0];
    case EwOp::log: return defs[1];
    case EwOp::tanh: return defs[2];
    case EwOp::sigmoid: return defs[3];
    case EwOp::softplus: return defs[4];
    case EwOp::relu: return defs[5];
    case EwOp::square: return defs[6];
    case EwOp::negate: return defs[7];
    default: throw std::invalid_argument("elementwise: not a unary op kind");
  }
}

Tensor record_unary(Graph& g, EwOp op, const Tensor& a0) {
  const Tensor a = g.lift(a0);
  const UnaryDef& def = unary_def(op);
  const Graph::Node& an = g.node_at(a.node());
  std::vector<double> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = def.fwd(an.value[i]);
  const int aid = a.node();
  auto back = [aid, op](Graph& gr, int self) {
    const UnaryDef& d = unary_def(op);
    const Graph::Node& sn = gr.node_at(self);
    const Graph::Node& in = gr.node_at(aid);
    if (!in.requires_grad) return;
    std::vector<double> ga(sn.grad.size());
    for (size_t i = 0; i < ga.size(); ++i)
      ga[i] = sn.grad[i] * d.dfdx(in.value[i], sn.value[i]);
    gr.accumulate(aid, ga);
  };
  return g.handle(g.add_node(an.shape, std::move(out), an.requires_grad, std::move(back), def.name));
}

const char* binary_name(EwOp op) {
  switch (op) {
    case EwOp::add: return "add";
    case EwOp::sub: return "sub";
    case EwOp::mul: return "mul";
    case EwOp::div: return "div";
    default: throw std::invalid_argument("elementwise: not a binary op kind");
  }
}

Tensor record_binary(Graph& g, EwOp op, const Tensor& a0, const Tensor& b0) {
  const Tensor a = g.lift(a0), b = g.lift(b0);
  const char* name = binary_name(op);
  const Graph::Node& an = g.node_at(a.node());
  const Graph::Node& bn = g.node_at(b.node());
  const Shape out_shape = broadcast_shape(an.shape, bn.shape, name);
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  switch (op) {
    case EwOp::add:
      broadcast_apply(out_shape, an.shape, an.value, bn.shape, bn.value, out,
                      [](double x, double y) { return x + y; });
      break;
    case EwOp::sub:
      broadcast_apply(out_shape, an.shape, an.value, bn.shape, bn.value, out,
                      [](double x, double y) { return x - y; });
      break;
    case EwOp::mul:
      broadcast_apply(out_shape, an.shape, an.value, bn.shape, bn.value, out,
                      [](double x, double y) { return x * y; });
      break;
    case EwOp::div:
      broadcast_apply(out_shape, an.shape, an.value, bn.shape, bn.value, out,
                      [](double x, double y) { return x / y; });
      break;
    default: throw std::invalid_argument("elementwise: not a binary op kind");
  }
  const int aid = a.node(), bid = b.node();
  auto back = [aid, bid, op](Graph& gr, int self) {
    const Graph::Node& sn = gr.node_at(self);
    const Graph::Node& an2 = gr.node_at(aid);
    const Graph::Node& bn2 = gr.node_at(bid);
    const Shape& os = sn.shape;
    const int64_t n = numel(os);
    if (an2.requires_grad) {
      std::vector<double> ga(static_cast<size_t>(n));
      switch (op) {
        case EwOp::add:
        case EwOp::sub:
          ga = sn.grad;
          break;
        case EwOp::mul:
          broadcast_apply(os, os, sn.grad, bn2.shape, bn2.value, ga,
                          [](double gg, double y) { return gg * y; });
          break;
        case EwOp::div:
          broadcast_apply(os, os, sn.grad, bn2.shape, bn2.value, ga,
                          [](double gg, double y) { return gg / y; });
          break;
        default: break;
      }
      gr.accumulate(aid, reduce_to(ga, os, an2.shape));
    }
    if (bn2.requires_grad) {
      std::vector<double> gb(static_cast<size_t>(n));
      switch (op) {
        case EwOp::add:
          gb = sn.grad;
          break;
        case EwOp::sub:
          for (int64_t i = 0; i < n; ++i) gb[i] = -sn.grad[i];
          break;
        case EwOp::mul:
          broadcast_apply(os, os, sn.grad, an2.shape, an2.value, gb,
                          [](double gg, double x) { return gg * x; });
          break;
        case EwOp::div: {
          // d(a/b)/db = -a / b^2
          std::vector<double> ratio(static_cast<size_t>(n));
          broadcast_apply(os, an2.shape, an2.value, bn2.shape, bn2.value, ratio,
                          [](double x, double y) { return -x / (y * y); });
          for (int64_t i = 0; i < n; ++i) gb[i] = sn.grad[i] * ratio[i];
          break;
        }
        default: break;
      }
      gr.accumulate(bid, reduce_to(gb, os, bn2.shape));
    }
  };
  const bool req = an.requires_grad || bn.requires_grad;
  return g.handle(g.add_node(out_shape, std::move(out), req, std::move(back), name));
}

}  // namespace

Tensor elementwise(EwOp op, const Tensor& a) {
  return dispatch({&a}, [&](Graph& g) { return record_unary(g, op, a); });
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  return dispatch({&a, &b}, [&](Graph& g) { return record_binary(g, op, a, b); });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(EwOp::div, a, b); }
Tensor exp(const Tensor& a) { return elementwise(EwOp::exp, a); }
Tensor log(const Tensor& a) { return elementwise(EwOp::log, a); }
Tensor tanh(const Tensor& a) { return elementwise(EwOp::tanh, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(EwOp::sigmoid, a); }
Tensor softplus(const Tensor& a) { return elementwise(EwOp::softplus, a); }
Tensor relu(const Tensor& a) { return elementwise(EwOp::relu, a); }
Tensor square(const Tensor& a) { return elementwise(EwOp::square, a); }
Tensor negate(const Tensor& a) { return elementwise(EwOp::negate, a); }

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }

// ---- matmul -------------------------------------------------------------

namespace {

void mm(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  // c[m,n] += a[m,k] * b[k,n]; ikj order keeps the inner loop contiguous
  for (int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      if (aik == 0.0) continue;
      const double* bk = b + kk * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

void mm_bt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  // c[m,k] += a[m,n] * b^T, b is [k,n]
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* bk = b + kk * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += ai[j] * bk[j];
      ci[kk] += s;
    }
  }
}

void mm_at(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  // c[k,n] += a^T * b, a is [m,k], b is [m,n]
  for (int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      if (aik == 0.0) continue;
      double* ck = c + kk * n;
      for (int64_t j = 0; j < n; ++j) ck[j] += aik * bi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a0, const Tensor& b0) {
  return dispatch({&a0, &b0}, [&](Graph& g) {
    const Tensor a = g.lift(a0), b = g.lift(b0);
    const Graph::Node& an = g.node_at(a.node());
    const Graph::Node& bn = g.node_at(b.node());
    if (an.shape.size() != 2 || bn.shape.size() != 2)
      throw std::invalid_argument("matmul: operands must be rank-2, got " + shape_str(an.shape) +
                                  " and " + shape_str(bn.shape));
    if (an.shape[1] != bn.shape[0])
      throw std::invalid_argument("matmul: inner extents differ, " + shape_str(an.shape) + " vs " +
                                  shape_str(bn.shape));
    const int64_t m = an.shape[0], k = an.shape[1], n = bn.shape[1];
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    mm(an.value.data(), bn.value.data(), out.data(), m, k, n);
    const int aid = a.node(), bid = b.node();
    auto back = [aid, bid, m, k, n](Graph& gr, int self) {
      const Graph::Node& sn = gr.node_at(self);
      const Graph::Node& an2 = gr.node_at(aid);
      const Graph::Node& bn2 = gr.node_at(bid);
      if (an2.requires_grad) {
        std::vector<double> ga(static_cast<size_t>(m * k), 0.0);
        mm_bt(sn.grad.data(), bn2.value.data(), ga.data(), m, k, n);
        gr.accumulate(aid, ga);
      }
      if (bn2.requires_grad) {
        std::vector<double> gb(static_cast<size_t>(k * n), 0.0);
        mm_at(an2.value.data(), sn.grad.data(), gb.data(), m, k, n);
        gr.accumulate(bid, gb);
      }
    };
    const bool req = an.requires_grad || bn.requires_grad;
    return g.handle(g.add_node({m, n}, std::move(out), req, std::move(back), "matmul"));
  });
}

// ---- reductions -----------------------------------------------------------

namespace {

int normalize_axis(int axis, size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for rank " + std::to_string(r));
  return a;
}

struct AxisSplit {
  int64_t outer, extent, inner;
};

AxisSplit axis_split(const Shape& s, int axis) {
  AxisSplit sp{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

Shape reduced_shape(const Shape& s, int axis, bool keepdims) {
  Shape out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) == axis) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace

Tensor reduce(ReduceOp op, const Tensor& a0, std::optional<int> axis, bool keepdims) {
  return dispatch({&a0}, [&](Graph& g) -> Tensor {
    const Tensor a = g.lift(a0);
    const Graph::Node& an = g.node_at(a.node());
    const int aid = a.node();
    const char* name = op == ReduceOp::sum ? "sum" : op == ReduceOp::mean ? "mean" : "max";

    if (!axis) {
      // full reduction to a rank-0 scalar
      const int64_t n = numel(an.shape);
      if (n == 0 && op != ReduceOp::sum)
        throw std::invalid_argument(std::string(name) + ": reduction over empty tensor");
      double v = 0.0;
      int64_t arg = 0;
      if (op == ReduceOp::max) {
        v = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < n; ++i)
          if (an.value[i] > v) {
            v = an.value[i];
            arg = i;
          }
      } else {
        for (int64_t i = 0; i < n; ++i) v += an.value[i];
        if (op == ReduceOp::mean) v /= static_cast<double>(n);
      }
      auto back = [aid, op, n, arg](Graph& gr, int self) {
        const Graph::Node& sn = gr.node_at(self);
        const Graph::Node& in = gr.node_at(aid);
        if (!in.requires_grad) return;
        const double gv = sn.grad[0];
        std::vector<double> ga(static_cast<size_t>(n), 0.0);
        if (op == ReduceOp::max) {
          ga[arg] = gv;
        } else {
          const double scale = op == ReduceOp::mean ? gv / static_cast<double>(n) : gv;
          std::fill(ga.begin(), ga.end(), scale);
        }
        gr.accumulate(aid, ga);
      };
      return g.handle(g.add_node({}, {v}, an.requires_grad, std::move(back), name));
    }

    const int ax = normalize_axis(*axis, an.shape.size(), name);
    const AxisSplit sp = axis_split(an.shape, ax);
    if (sp.extent == 0)
      throw std::invalid_argument(std::string(name) + ": reduction over empty axis " +
                                  std::to_string(ax) + " of " + shape_str(an.shape));
    const Shape out_shape = reduced_shape(an.shape, ax, keepdims);
    const int64_t out_n = sp.outer * sp.inner;
    std::vector<double> out(static_cast<size_t>(out_n));
    std::vector<int64_t> argmax;
    if (op == ReduceOp::max) argmax.assign(static_cast<size_t>(out_n), 0);
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t oi = o * sp.inner + in;
        if (op == ReduceOp::max) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t bi = 0;
          for (int64_t e = 0; e < sp.extent; ++e) {
            const double v = an.value[(o * sp.extent + e) * sp.inner + in];
            if (v > best) {  // strict: first index wins ties
              best = v;
              bi = e;
            }
          }
          out[oi] = best;
          argmax[oi] = bi;
        } else {
          double s = 0.0;
          for (int64_t e = 0; e < sp.extent; ++e) s += an.value[(o * sp.extent + e) * sp.inner + in];
          out[oi] = op == ReduceOp::mean ? s / static_cast<double>(sp.extent) : s;
        }
      }
    }
    auto back = [aid, op, sp, argmax](Graph& gr, int self) {
      const Graph::Node& sn = gr.node_at(self);
      const Graph::Node& in_node = gr.node_at(aid);
      if (!in_node.requires_grad) return;
      std::vector<double> ga(in_node.value.size(), 0.0);
      for (int64_t o = 0; o < sp.outer; ++o) {
        for (int64_t in = 0; in < sp.inner; ++in) {
          const int64_t oi = o * sp.inner + in;
          const double gv = sn.grad[oi];
          if (op == ReduceOp::max) {
            ga[(o * sp.extent + argmax[oi]) * sp.inner + in] = gv;
          } else {
            const double scale = op == ReduceOp::mean ? gv / static_cast<double>(sp.extent) : gv;
            for (int64_t e = 0; e < sp.extent; ++e)
              ga[(o * sp.extent + e) * sp.inner + in] += scale;
          }
        }
      }
      gr.accumulate(aid, ga);
    };
    return g.handle(g.add_node(out_shape, std::move(out), an.requires_grad, std::move(back), name));
  });
}

Tensor sum(const Tensor& a, std::optional<int> axis, bool keepdims) {
  return reduce(ReduceOp::sum, a, axis, keepdims);
}
Tensor mean(const Tensor& a, std::optional<int> axis, bool keepdims) {
  return reduce(ReduceOp::mean, a, axis, keepdims);
}
Tensor max(const Tensor& a, std::optional<int> axis, bool keepdims) {
  return reduce(ReduceOp::max, a, axis, keepdims);
}

// ---- layout ops -----------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
  if (parts.size() == 1) return parts[0];
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : parts) ptrs.push_back(&t);
  Graph* gp = nullptr;
  for (const Tensor* t : ptrs)
    if (t->in_graph()) gp = t->graph();
  auto rec = [&](Graph& g) {
    std::vector<Tensor> lifted;
    for (const Tensor* t : ptrs) lifted.push_back(g.lift(*t));
    const Shape& s0 = g.node_at(lifted[0].node()).shape;
    const int ax = normalize_axis(axis, s0.size(), "concat");
    int64_t total = 0;
    for (const Tensor& t : lifted) {
      const Shape& s = g.node_at(t.node()).shape;
      if (s.size() != s0.size())
        throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " +
                                    shape_str(s));
      for (size_t d = 0; d < s.size(); ++d)
        if (static_cast<int>(d) != ax && s[d] != s0[d])
          throw std::invalid_argument("concat: shapes disagree off-axis, " + shape_str(s0) +
                                      " vs " + shape_str(s));
      total += s[ax];
    }
    Shape out_shape = s0;
    out_shape[ax] = total;
    const AxisSplit osp = axis_split(out_shape, ax);
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    std::vector<int> ids;
    std::vector<int64_t> extents;
    int64_t off = 0;
    bool req = false;
    for (const Tensor& t : lifted) {
      const Graph::Node& n = g.node_at(t.node());
      const int64_t e = n.shape[ax];
      for (int64_t o = 0; o < osp.outer; ++o)
        std::memcpy(out.data() + (o * osp.extent + off) * osp.inner,
                    n.value.data() + o * e * osp.inner,
                    static_cast<size_t>(e * osp.inner) * sizeof(double));
      ids.push_back(t.node());
      extents.push_back(e);
      off += e;
      req = req || n.requires_grad;
    }
    auto back = [ids, extents, osp](Graph& gr, int self) {
      const Graph::Node& sn = gr.node_at(self);
      int64_t off2 = 0;
      for (size_t p = 0; p < ids.size(); ++p) {
        const int64_t e = extents[p];
        const Graph::Node& in = gr.node_at(ids[p]);
        if (in.requires_grad) {
          std::vector<double> gp2(static_cast<size_t>(e * osp.outer * osp.inner));
          for (int64_t o = 0; o < osp.outer; ++o)
            std::memcpy(gp2.data() + o * e * osp.inner,
                        sn.grad.data() + (o * osp.extent + off2) * osp.inner,
                        static_cast<size_t>(e * osp.inner) * sizeof(double));
          gr.accumulate(ids[p], gp2);
        }
        off2 += e;
      }
    };
    return g.handle(g.add_node(out_shape, std::move(out), req, std::move(back), "concat"));
  };
  if (gp) return rec(*gp);
  Graph tmp;
  return Tensor::constant(rec(tmp).to_array());
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const Tensor parts[] = {a, b};
  return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor reshape(const Tensor& a0, Shape new_shape) {
  return dispatch({&a0}, [&](Graph& g) {
    const Tensor a = g.lift(a0);
    const Graph::Node& an = g.node_at(a.node());
    const int64_t n = numel(an.shape);
    int64_t known = 1;
    int infer = -1;
    for (size_t i = 0; i < new_shape.size(); ++i) {
      if (new_shape[i] == -1) {
        if (infer >= 0) throw std::invalid_argument("reshape: more than one -1 extent");
        infer = static_cast<int>(i);
      } else {
        known *= new_shape[i];
      }
    }
    if (infer >= 0) {
      if (known == 0 || n % known != 0)
        throw std::invalid_argument("reshape: cannot infer extent for " + shape_str(an.shape));
      new_shape[infer] = n / known;
    }
    if (numel(new_shape) != n)
      throw std::invalid_argument("reshape: element count mismatch, " + shape_str(an.shape) +
                                  " -> " + shape_str(new_shape));
    const int aid = a.node();
    const Shape in_shape = an.shape;
    auto back = [aid](Graph& gr, int self) {
      const Graph::Node& sn = gr.node_at(self);
      if (gr.node_at(aid).requires_grad) gr.accumulate(aid, sn.grad);
    };
    return g.handle(
        g.add_node(std::move(new_shape), an.value, an.requires_grad, std::move(back), "reshape"));
  });
}

Tensor narrow(const Tensor& a0, int axis, int64_t start, int64_t length) {
  return dispatch({&a0}, [&](Graph& g) {
    const Tensor a = g.lift(a0);
    const Graph::Node& an = g.node_at(a.node());
    const int ax = normalize_axis(axis, an.shape.size(), "narrow");
    if (start < 0 || length < 0 || start + length > an.shape[ax])
      throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                  std::to_string(start + length) + ") out of bounds for " +
                                  shape_str(an.shape));
    const AxisSplit sp = axis_split(an.shape, ax);
    Shape out_shape = an.shape;
    out_shape[ax] = length;
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    for (int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(out.data() + o * length * sp.inner,
                  an.value.data() + (o * sp.extent + start) * sp.inner,
                  static_cast<size_t>(length * sp.inner) * sizeof(double));
    const int aid = a.node();
    auto back = [aid, sp, start, length](Graph& gr, int self) {
      const Graph::Node& sn = gr.node_at(self);
      const Graph::Node& in = gr.node_at(aid);
      if (!in.requires_grad) return;
      std::vector<double> ga(in.value.size(), 0.0);
      for (int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(ga.data() + (o * sp.extent + start) * sp.inner,
                    sn.grad.data() + o * length * sp.inner,
                    static_cast<size_t>(length * sp.inner) * sizeof(double));
      gr.accumulate(aid, ga);
    };
    return g.handle(
        g.add_node(std::move(out_shape), std::move(out), an.requires_grad, std::move(back), "narrow"));
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const Tensor m = max(a, axis, /*keepdims=*/true);
  const Tensor e = exp(sub(a, m));
  return div(e, sum(e, axis, /*keepdims=*/true));
}

Tensor log_softmax(const Tensor& a, int axis) {
  const Tensor m = max(a, axis, /*keepdims=*/true);
  const Tensor shifted = sub(a, m);
  return sub(shifted, log(sum(exp(shifted), axis, /*keepdims=*/true)));
}

// ---- gradcheck ------------------------------------------------------------

GradcheckReport gradcheck(const std::function<Tensor(Graph&, const Tensor&)>& f,
                          const Array& point, double eps, double tol) {
  Graph g;
  Tensor x = g.leaf(point, /*requires_grad=*/true);
  Tensor y = f(g, x);
  if (y.size() != 1)
    throw std::invalid_argument("gradcheck: f must be scalar-valued, got " +
                                shape_str(y.shape()));
  g.backward(y);
  const Array analytic = g.grad(x);

  GradcheckReport rep;
  Array p = point;
  for (int64_t i = 0; i < point.size(); ++i) {
    const double saved = p.data[i];
    p.data[i] = saved + eps;
    Graph gp;
    const double fp = f(gp, gp.leaf(p)).value();
    p.data[i] = saved - eps;
    Graph gm;
    const double fm = f(gm, gm.leaf(p)).value();
    p.data[i] = saved;
    const double num = (fp - fm) / (2.0 * eps);
    const double ana = analytic.data[i];
    const double denom = std::max({std::fabs(ana), std::fabs(num), 1e-6});
    const double rel = std::fabs(ana - num) / denom;
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    if (rel > tol) {
      rep.passed = false;
      rep.failures.push_back({i, ana, num, rel});
    }
  }
  return rep;
}

}  // namespace vlac
