#include "vlac/distributions.hpp"

#include <cmath>
#include <stdexcept>

namespace vlac {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kStddevFloor = 1e-6;
constexpr double kNoiseClamp = 1e-7;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}
}  // namespace

DiagGaussian diag_gaussian(Tensor mean, Tensor stddev) {
  require_same_shape(mean, stddev, "diag_gaussian");
  return DiagGaussian{std::move(mean), std::move(stddev)};
}

DiagGaussian gaussian_from_raw(const Tensor& mean, const Tensor& raw_stddev) {
  return diag_gaussian(mean, add(softplus(raw_stddev), kStddevFloor));
}

Tensor gaussian_log_prob_rows(const DiagGaussian& d, const Tensor& x) {
  require_same_shape(d.mean, x, "gaussian_log_prob");
  const Tensor diff = sub(x, d.mean);
  const Tensor quad = div(square(diff), mul(square(d.stddev), 2.0));
  const Tensor term = sub(add(mul(log(d.stddev), -1.0), -0.5 * kLogTwoPi), quad);
  return sum(term, -1);
}

Tensor gaussian_log_prob(const DiagGaussian& d, const Tensor& x) {
  Tensor rows = gaussian_log_prob_rows(d, x);
  return rows.rank() == 0 ? rows : sum(rows);
}

Tensor gaussian_rsample(const DiagGaussian& d, const Tensor& noise) {
  require_same_shape(d.mean, noise, "gaussian_rsample");
  return add(d.mean, mul(d.stddev, noise));
}

Tensor kl_gaussian_gaussian_rows(const DiagGaussian& q, const DiagGaussian& p) {
  require_same_shape(q.mean, p.mean, "kl_gaussian_gaussian");
  const Tensor log_ratio = sub(log(p.stddev), log(q.stddev));
  const Tensor num = add(square(q.stddev), square(sub(q.mean, p.mean)));
  const Tensor term = add(add(log_ratio, div(num, mul(square(p.stddev), 2.0))), -0.5);
  return sum(term, -1);
}

Tensor kl_gaussian_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  Tensor rows = kl_gaussian_gaussian_rows(q, p);
  return rows.rank() == 0 ? rows : sum(rows);
}

Tensor kl_categorical_uniform_rows(const Tensor& logits) {
  const int64_t k = logits.shape().back();
  const Tensor probs = softmax(logits, -1);
  const Tensor logp = log_softmax(logits, -1);
  return sum(mul(probs, add(logp, std::log(static_cast<double>(k)))), -1);
}

Tensor kl_categorical_uniform(const Tensor& logits) {
  Tensor rows = kl_categorical_uniform_rows(logits);
  return rows.rank() == 0 ? rows : sum(rows);
}

ConcreteSample concrete_sample(const Tensor& logits, double tau, const Tensor& uniform_noise) {
  if (!(tau > 0.0)) throw std::invalid_argument("concrete_sample: tau must be positive");
  require_same_shape(logits, uniform_noise, "concrete_sample");

  // Gumbel noise from the caller's uniforms, clamped for the double log.
  // Computed at value level: noise carries no gradient.
  std::vector<double> g = uniform_noise.values();
  for (double& u : g) {
    const double c = std::min(std::max(u, kNoiseClamp), 1.0 - kNoiseClamp);
    u = -std::log(-std::log(c));
  }
  const Tensor gumbel = Tensor::constant(logits.shape(), std::move(g));

  const Tensor relaxed = softmax(mul(add(logits, gumbel), 1.0 / tau), -1);

  // hard one-hot of the row argmax (first index wins ties)
  const Shape& s = relaxed.shape();
  const int64_t k = s.back();
  const int64_t rows = relaxed.size() / k;
  const std::vector<double>& rv = relaxed.values();
  std::vector<double> hard(rv.size(), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    int64_t best = 0;
    for (int64_t i = 1; i < k; ++i)
      if (rv[r * k + i] > rv[r * k + best]) best = i;
    hard[r * k + best] = 1.0;
  }
  return ConcreteSample{relaxed, Tensor::constant(s, std::move(hard)), tau};
}

Tensor straight_through(const ConcreteSample& s) {
  // forward value equals hard; gradient passes through relaxed untouched
  std::vector<double> delta = s.hard.values();
  const std::vector<double>& rv = s.relaxed.values();
  for (size_t i = 0; i < delta.size(); ++i) delta[i] -= rv[i];
  return add(s.relaxed, Tensor::constant(s.relaxed.shape(), std::move(delta)));
}

Array mixture_marginal_sample(const Array& mu, const Array& sigma, Rng& rng) {
  if (mu.shape.size() != 2 || mu.shape != sigma.shape)
    throw std::invalid_argument("mixture_marginal_sample: mu/sigma must be [K,d], got " +
                                shape_str(mu.shape) + " and " + shape_str(sigma.shape));
  const int64_t k = mu.shape[0], d = mu.shape[1];
  const int64_t y = k > 1 ? static_cast<int64_t>(rng.below(static_cast<uint64_t>(k))) : 0;
  Array z = Array::zeros({d});
  for (int64_t i = 0; i < d; ++i)
    z.data[i] = mu.data[y * d + i] + sigma.data[y * d + i] * rng.normal();
  return z;
}

}  // namespace vlac
