// Probability primitives and divergences: diagonal Gaussians, categoricals,
// Concrete (Gumbel-Softmax) relaxation, and the closed-form KLs the training
// objective is built from.
//
// All operations accept batched tensors: the distribution axis is the last
// one, leading axes pass through. The *_rows variants keep the leading axes;
// the plain variants sum everything to a scalar.
#pragma once

#include "vlac/tensor.hpp"

namespace vlac {

struct DiagGaussian {
  Tensor mean;    // [..., d]
  Tensor stddev;  // same shape, strictly positive
};

// Checked constructor; shapes must match.
DiagGaussian diag_gaussian(Tensor mean, Tensor stddev);

// stddev = softplus(raw) + 1e-6: positive without exp overflow, floored away
// from zero so divergences stay finite.
DiagGaussian gaussian_from_raw(const Tensor& mean, const Tensor& raw_stddev);

// log N(x | mean, diag stddev^2), summed over the last axis.
Tensor gaussian_log_prob_rows(const DiagGaussian& d, const Tensor& x);
Tensor gaussian_log_prob(const DiagGaussian& d, const Tensor& x);  // scalar

// mean + stddev * noise; gradients flow into mean and stddev.
Tensor gaussian_rsample(const DiagGaussian& d, const Tensor& noise);

// KL(q || p) between diagonal Gaussians, summed over the last axis.
Tensor kl_gaussian_gaussian_rows(const DiagGaussian& q, const DiagGaussian& p);
Tensor kl_gaussian_gaussian(const DiagGaussian& q, const DiagGaussian& p);  // scalar

// KL(softmax(logits) || uniform over the last axis) = log K - H(q).
Tensor kl_categorical_uniform_rows(const Tensor& logits);
Tensor kl_categorical_uniform(const Tensor& logits);  // scalar

struct ConcreteSample {
  Tensor relaxed;      // [..., K], rows on the simplex; differentiable w.r.t. logits
  Tensor hard;         // [..., K], one-hot argmax of relaxed; constant
  double temperature;  // tau used for the draw
};

// relaxed = softmax((logits + g) / tau) with g = -log(-log u). The uniform
// noise is caller-supplied (injectable for determinism) and is clamped to
// [1e-7, 1-1e-7] before the double log.
ConcreteSample concrete_sample(const Tensor& logits, double tau, const Tensor& uniform_noise);

// Forward the hard one-hot, backpropagate through the relaxed sample.
Tensor straight_through(const ConcreteSample& s);

// One draw from the mixture marginal sum_y p(z|y) p(y) with uniform p(y):
// pick a component uniformly, then sample its Gaussian. mu/sigma are [K, d].
Array mixture_marginal_sample(const Array& mu, const Array& sigma, Rng& rng);

}  // namespace vlac
