// Monte-Carlo cross-checks of the closed-form divergences, shared by the
// unit tests (one parameterisation) and the acceptance run (ten).
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlac/distributions.hpp"

namespace divsuite {

using vlac::Array;
using vlac::Rng;
using vlac::Shape;
using vlac::Tensor;

struct Case {
  std::string name;
  double closed;
  double mc;
  double se;
  bool ok;  // |closed - mc| <= 3 se
};

inline Case finish(std::string name, double closed, double sum, double sumsq, int n) {
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);
  const double se = std::sqrt(var / n);
  return {std::move(name), closed, mean, se, std::fabs(closed - mean) <= 3.0 * se};
}

// KL(q||p) between random diagonal Gaussians vs E_q[log q - log p].
inline Case gaussian_case(uint64_t seed, int n = 100000) {
  Rng rng(seed);
  const int d = 1 + static_cast<int>(rng.below(5));
  std::vector<double> mq(d), sq(d), mp(d), sp(d);
  for (int i = 0; i < d; ++i) {
    mq[i] = rng.normal();
    sq[i] = 0.3 + rng.uniform() * 1.5;
    mp[i] = rng.normal();
    sp[i] = 0.3 + rng.uniform() * 1.5;
  }
  const auto q = vlac::diag_gaussian(Tensor::constant({d}, mq), Tensor::constant({d}, sq));
  const auto p = vlac::diag_gaussian(Tensor::constant({d}, mp), Tensor::constant({d}, sp));
  const double closed = vlac::kl_gaussian_gaussian(q, p).value();

  auto logpdf = [](double x, double m, double s) {
    const double z = (x - m) / s;
    return -0.5 * std::log(2.0 * 3.14159265358979323846) - std::log(s) - 0.5 * z * z;
  };
  double sum = 0, sumsq = 0;
  for (int t = 0; t < n; ++t) {
    double lr = 0;
    for (int i = 0; i < d; ++i) {
      const double z = mq[i] + sq[i] * rng.normal();
      lr += logpdf(z, mq[i], sq[i]) - logpdf(z, mp[i], sp[i]);
    }
    sum += lr;
    sumsq += lr * lr;
  }
  return finish("kl_gaussian d=" + std::to_string(d), closed, sum, sumsq, n);
}

// KL(softmax(logits) || uniform) vs E_y[log(K q_y)].
inline Case categorical_case(uint64_t seed, int n = 100000) {
  Rng rng(seed);
  const int k = 2 + static_cast<int>(rng.below(5));
  std::vector<double> logits(k);
  for (int i = 0; i < k; ++i) logits[i] = 1.5 * rng.normal();
  const double closed = vlac::kl_categorical_uniform(Tensor::constant({k}, logits)).value();

  // independent softmax for the sampler
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(k);
  double z = 0;
  for (int i = 0; i < k; ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;

  double sum = 0, sumsq = 0;
  for (int t = 0; t < n; ++t) {
    double u = rng.uniform(), acc = 0;
    int y = k - 1;
    for (int i = 0; i < k; ++i) {
      acc += p[i];
      if (u <= acc) {
        y = i;
        break;
      }
    }
    const double lr = std::log(p[y] * k);
    sum += lr;
    sumsq += lr * lr;
  }
  return finish("kl_categorical K=" + std::to_string(k), closed, sum, sumsq, n);
}

// KL of a distribution against itself must vanish to near machine precision.
inline double identity_kl(uint64_t seed) {
  Rng rng(seed);
  const int d = 1 + static_cast<int>(rng.below(5));
  std::vector<double> m(d), s(d);
  for (int i = 0; i < d; ++i) {
    m[i] = 3.0 * rng.normal();
    s[i] = 0.05 + rng.uniform() * 3.0;
  }
  const auto q = vlac::diag_gaussian(Tensor::constant({d}, m), Tensor::constant({d}, s));
  return std::fabs(vlac::kl_gaussian_gaussian(q, q).value());
}

inline std::vector<Case> run(uint64_t seed, int n = 100000) {
  std::vector<Case> cases;
  for (int i = 0; i < 10; ++i) {
    cases.push_back(gaussian_case(seed * 1000 + i, n));
    cases.push_back(categorical_case(seed * 2000 + i, n));
  }
  return cases;
}

}  // namespace divsuite
