// Finite-difference coverage for every differentiable op. Shared by the
// unit tests (one seed) and the acceptance run (many seeds, timed).
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vlac/tensor.hpp"

namespace gradsuite {

using vlac::Array;
using vlac::Graph;
using vlac::Shape;
using vlac::Tensor;

struct Case {
  std::string name;
  vlac::GradcheckReport report;
};

// Each case differentiates a scalar made from one op (plus sum to collapse
// to a scalar). Points are drawn away from kinks/domain edges so the
// numeric derivative is well defined. A non-empty `fault` desynchronises
// successive evaluations of the named case so its finite-difference estimate
// no longer matches backward() — a stand-in for a broken op that must show
// up in the report under that name.
inline std::vector<Case> run(uint64_t seed, double tol = 1e-4, const std::string& fault = "") {
  vlac::Rng rng(seed);
  std::vector<Case> out;

  auto check = [&](const std::string& name, const Array& point,
                   std::function<Tensor(Graph&, const Tensor&)> f) {
    if (name == fault) {
      auto calls = std::make_shared<int>(0);
      f = [calls, inner = std::move(f)](Graph& g, const Tensor& x) {
        return vlac::add(inner(g, x), 1e-3 * static_cast<double>((*calls)++));
      };
    }
    out.push_back({name, vlac::gradcheck(f, point, 1e-5, tol)});
  };

  auto away_from_zero = [&](const Shape& s) {
    Array a = Array::normal(s, rng);
    for (double& v : a.data)
      if (std::fabs(v) < 0.2) v = v < 0 ? v - 0.2 : v + 0.2;
    return a;
  };
  auto positive = [&](const Shape& s) {
    Array a = Array::uniform(s, rng);
    for (double& v : a.data) v += 0.5;
    return a;
  };

  const Shape s23{2, 3};
  // binary ops, equal shapes; the second operand rides along as a constant
  const Array b_eq = away_from_zero(s23);
  check("add", Array::normal(s23, rng), [b_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::add(x, g.lift(Tensor::constant(b_eq))));
  });
  check("sub", Array::normal(s23, rng), [b_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::sub(x, g.lift(Tensor::constant(b_eq))));
  });
  check("mul", Array::normal(s23, rng), [b_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::mul(x, g.lift(Tensor::constant(b_eq))));
  });
  check("div", Array::normal(s23, rng), [b_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::div(x, g.lift(Tensor::constant(b_eq))));
  });
  // same ops with x as the second operand (exercises the b-side backward)
  const Array a_eq = Array::normal(s23, rng);
  check("div_rhs", away_from_zero(s23), [a_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::div(g.lift(Tensor::constant(a_eq)), x));
  });
  check("sub_rhs", Array::normal(s23, rng), [a_eq](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::sub(g.lift(Tensor::constant(a_eq)), x));
  });
  // broadcast: [2,3] op [3] and scalar
  const Array b_row = away_from_zero({3});
  check("mul_broadcast_row", Array::normal(s23, rng), [b_row](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::mul(x, g.lift(Tensor::constant(b_row))));
  });
  check("mul_broadcast_row_grad", away_from_zero({3}), [&, a = Array::normal(s23, rng)](
                                                           Graph& g, const Tensor& x) {
    return vlac::sum(vlac::mul(g.lift(Tensor::constant(a)), x));
  });
  check("add_broadcast_scalar", Array::normal(s23, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::add(x, 0.7));
  });

  // unaries
  check("exp", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::exp(x)); });
  check("log", positive(s23), [](Graph&, const Tensor& x) { return vlac::sum(vlac::log(x)); });
  check("tanh", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::tanh(x)); });
  check("sigmoid", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::sigmoid(x)); });
  check("softplus", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::softplus(x)); });
  check("relu", away_from_zero(s23),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::relu(x)); });
  check("square", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::square(x)); });
  check("negate", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(vlac::negate(x)); });

  // matmul, both operands
  const Array mm_b = Array::normal({4, 2}, rng);
  check("matmul_lhs", Array::normal({3, 4}, rng), [mm_b](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::matmul(x, g.lift(Tensor::constant(mm_b))));
  });
  const Array mm_a = Array::normal({3, 4}, rng);
  check("matmul_rhs", Array::normal({4, 2}, rng), [mm_a](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::matmul(g.lift(Tensor::constant(mm_a)), x));
  });

  // reductions. max points are drawn with distinct entries so the argmax is
  // stable under the finite-difference perturbation.
  check("sum_all", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::sum(x); });
  check("sum_axis0", Array::normal(s23, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::sum(x, 0)));
  });
  check("sum_axis1_keepdims", Array::normal(s23, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::sum(x, 1, true)));
  });
  check("mean_all", Array::normal(s23, rng),
        [](Graph&, const Tensor& x) { return vlac::mean(x); });
  check("mean_axis1", Array::normal(s23, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::mean(x, 1)));
  });
  auto distinct = [&](const Shape& s) {
    Array a = Array::zeros(s);
    for (int64_t i = 0; i < a.size(); ++i) a.data[i] = 0.05 * static_cast<double>(i) + rng.uniform() * 0.01;
    std::shuffle(a.data.begin(), a.data.end(), std::mt19937_64{seed});
    return a;
  };
  check("max_all", distinct(s23), [](Graph&, const Tensor& x) { return vlac::max(x); });
  check("max_axis1", distinct(s23), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::max(x, 1)));
  });

  // layout ops
  const Array cat_b = Array::normal({2, 2}, rng);
  check("concat_axis1", Array::normal(s23, rng), [cat_b](Graph& g, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::concat(x, g.lift(Tensor::constant(cat_b)), 1)));
  });
  check("reshape", Array::normal(s23, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::reshape(x, {3, -1})));
  });
  check("narrow", Array::normal({2, 5}, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::narrow(x, 1, 1, 3)));
  });

  // softmax family (composite but worth covering end to end)
  check("softmax", Array::normal({2, 4}, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::softmax(x, -1)));
  });
  check("log_softmax", Array::normal({2, 4}, rng), [](Graph&, const Tensor& x) {
    return vlac::sum(vlac::square(vlac::log_softmax(x, -1)));
  });

  // a small composite network: two linear layers with nonlinearities,
  // gradient taken w.r.t. the input
  const Array w1 = Array::normal({3, 5}, rng), w2 = Array::normal({5, 1}, rng);
  check("mlp_composite", Array::normal({2, 3}, rng), [w1, w2](Graph& g, const Tensor& x) {
    Tensor h = vlac::tanh(vlac::matmul(x, g.lift(Tensor::constant(w1))));
    Tensor y = vlac::matmul(h, g.lift(Tensor::constant(w2)));
    return vlac::mean(vlac::square(y));
  });

  return out;
}

}  // namespace gradsuite
