#include "vlac/evaluation.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vlac/data.hpp"
#include "vlac/model.hpp"

namespace vlac {

LabelPair make_label_pair(std::vector<int> y, std::vector<int> t, int K, int T) {
  if (y.empty() || y.size() != t.size())
    throw std::invalid_argument("label pair: need equal, non-empty prediction/truth vectors");
  if (K < 1 || T < 1) throw std::invalid_argument("label pair: K and T must be at least 1");
  for (int v : y)
    if (v < 1 || v > K)
      throw std::invalid_argument("label pair: prediction " + std::to_string(v) +
                                  " outside 1.." + std::to_string(K));
  for (int v : t)
    if (v < 1 || v > T)
      throw std::invalid_argument("label pair: truth " + std::to_string(v) + " outside 1.." +
                                  std::to_string(T));
  return LabelPair{std::move(y), std::move(t), K, T};
}

std::vector<std::vector<int64_t>> contingency(const LabelPair& pairs) {
  std::vector<std::vector<int64_t>> counts(pairs.T, std::vector<int64_t>(pairs.K, 0));
  for (size_t i = 0; i < pairs.y.size(); ++i) counts[pairs.t[i] - 1][pairs.y[i] - 1]++;
  return counts;
}

namespace {

// Minimum-cost perfect assignment on a square matrix (augmenting paths with
// potentials, O(n^3)). Returns row_of_col: column j -> matched row.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_of_col(n);
  for (int j = 1; j <= n; ++j) row_of_col[j - 1] = p[j] - 1;
  return row_of_col;
}

AssignmentResult from_injective_matching(const LabelPair& pairs,
                                         const std::vector<std::vector<int64_t>>& counts,
                                         const std::vector<int>& class_of_cluster) {
  AssignmentResult res;
  res.mode = AssignMode::injective;
  res.mapping.assign(pairs.K, 0);
  int64_t matched = 0;
  for (int k = 0; k < pairs.K; ++k) {
    const int t = class_of_cluster[k];
    if (t >= 0 && t < pairs.T && counts[t][k] > 0) {
      res.mapping[k] = t + 1;
      matched += counts[t][k];
    }
  }
  res.accuracy = static_cast<double>(matched) / static_cast<double>(pairs.y.size());
  return res;
}

}  // namespace

AssignmentResult cluster_accuracy(const LabelPair& pairs, AssignMode mode) {
  if (pairs.y.empty()) throw std::invalid_argument("cluster_accuracy: empty input");
  const auto counts = contingency(pairs);

  if (mode == AssignMode::many_to_one) {
    AssignmentResult res;
    res.mode = mode;
    res.mapping.assign(pairs.K, 0);
    int64_t matched = 0;
    for (int k = 0; k < pairs.K; ++k) {
      int best_t = 0;
      for (int t = 1; t < pairs.T; ++t)
        if (counts[t][k] > counts[best_t][k]) best_t = t;
      res.mapping[k] = best_t + 1;
      matched += counts[best_t][k];
    }
    res.accuracy = static_cast<double>(matched) / static_cast<double>(pairs.y.size());
    return res;
  }

  // injective: maximise matched counts == minimise negated counts, with the
  // table padded square so surplus clusters/classes match zero-weight dummies
  const int n = std::max(pairs.T, pairs.K);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int t = 0; t < pairs.T; ++t)
    for (int k = 0; k < pairs.K; ++k) cost[t][k] = -static_cast<double>(counts[t][k]);
  return from_injective_matching(pairs, counts, solve_assignment(cost));
}

AssignmentResult brute_force_accuracy(const LabelPair& pairs, AssignMode mode) {
  if (pairs.y.empty()) throw std::invalid_argument("brute_force_accuracy: empty input");
  if (pairs.K > 8 || pairs.T > 8)
    throw std::invalid_argument("brute_force_accuracy: enumeration guard K,T <= 8 exceeded");
  const auto counts = contingency(pairs);
  const double total = static_cast<double>(pairs.y.size());

  AssignmentResult best;
  best.mode = mode;
  best.mapping.assign(pairs.K, 0);
  best.accuracy = -1.0;

  if (mode == AssignMode::injective) {
    const int n = std::max(pairs.T, pairs.K);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);  // perm[k] = class index for cluster k
    do {
      int64_t matched = 0;
      for (int k = 0; k < pairs.K; ++k)
        if (perm[k] < pairs.T) matched += counts[perm[k]][k];
      const double acc = static_cast<double>(matched) / total;
      if (acc > best.accuracy) {
        best.accuracy = acc;
        for (int k = 0; k < pairs.K; ++k)
          best.mapping[k] = (perm[k] < pairs.T && counts[perm[k]][k] > 0) ? perm[k] + 1 : 0;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }

  // many-to-one: enumerate every map cluster -> class
  std::vector<int> map(pairs.K, 0);
  while (true) {
    int64_t matched = 0;
    for (int k = 0; k < pairs.K; ++k) matched += counts[map[k]][k];
    const double acc = static_cast<double>(matched) / total;
    if (acc > best.accuracy) {
      best.accuracy = acc;
      for (int k = 0; k < pairs.K; ++k) best.mapping[k] = map[k] + 1;
    }
    int d = pairs.K - 1;
    while (d >= 0 && map[d] == pairs.T - 1) map[d--] = 0;
    if (d < 0) break;
    map[d]++;
  }
  return best;
}

std::string format_contingency(const LabelPair& pairs) {
  const auto counts = contingency(pairs);
  std::ostringstream os;
  os << "truth\\cluster";
  for (int k = 1; k <= pairs.K; ++k) os << '\t' << k;
  os << '\n';
  for (int t = 0; t < pairs.T; ++t) {
    os << (t + 1);
    for (int k = 0; k < pairs.K; ++k) os << '\t' << counts[t][k];
    os << '\n';
  }
  os << "occupancy";
  for (int k = 0; k < pairs.K; ++k) {
    int64_t occ = 0;
    for (int t = 0; t < pairs.T; ++t) occ += counts[t][k];
    os << '\t' << occ;
  }
  os << '\n';
  return os.str();
}

int designated_layer(const ModelConfig& config) {
  for (int l = config.L(); l >= 1; --l)
    if (config.layers[l - 1].K > 1) return l;
  return 0;
}

EvalReport evaluate_model(const ModelConfig& config, const ParamStore& params,
                          const Dataset& data, int layer) {
  if (layer < 1 || layer > config.L())
    throw std::invalid_argument("evaluate_model: layer out of range");
  const int K = config.layers[layer - 1].K;
  if (K < 2) throw std::invalid_argument("evaluate_model: layer has a single component");
  if (data.x_dim() != config.x_dim)
    throw std::invalid_argument("evaluate_model: dataset dimension does not match the model");

  EvalReport report;
  report.layer = layer;
  report.K = K;
  report.predictions.reserve(static_cast<size_t>(data.n()));

  // Classify in chunks so graph size stays bounded on large datasets.
  const int64_t chunk = 512;
  const int64_t x_dim = data.x_dim();
  for (int64_t begin = 0; begin < data.n(); begin += chunk) {
    const int64_t rows = std::min(chunk, data.n() - begin);
    Array xs = Array::zeros({rows, x_dim});
    std::memcpy(xs.data.data(), data.pixels.data() + begin * x_dim,
                static_cast<size_t>(rows * x_dim) * sizeof(double));
    const auto logits = classify(config, params, xs);
    const auto it = std::find_if(logits.begin(), logits.end(),
                                 [&](const LayerLogits& l) { return l.layer == layer; });
    if (it == logits.end()) throw std::logic_error("evaluate_model: layer logits missing");
    for (int label : argmax_rows(it->logits)) report.predictions.push_back(label);
  }

  report.occupancy.assign(static_cast<size_t>(K), 0);
  for (int label : report.predictions) report.occupancy[static_cast<size_t>(label - 1)]++;

  for (int64_t c = 0; c < data.label_channels; ++c) {
    const int T = static_cast<int>(data.cardinalities[static_cast<size_t>(c)]);
    if (T < 2) continue;
    std::vector<int> truth(static_cast<size_t>(data.n()));
    for (int64_t i = 0; i < data.n(); ++i) truth[static_cast<size_t>(i)] = data.label(i, c) + 1;
    const LabelPair pairs = make_label_pair(report.predictions, truth, K, T);
    ChannelEval ce;
    ce.channel = static_cast<int>(c);
    ce.acc_injective = cluster_accuracy(pairs, AssignMode::injective).accuracy;
    ce.acc_many_to_one = cluster_accuracy(pairs, AssignMode::many_to_one).accuracy;
    ce.contingency = format_contingency(pairs);
    report.channels.push_back(std::move(ce));
  }
  return report;
}

std::string EvalReport::formatted() const {
  std::ostringstream os;
  os << "layer " << layer << " (" << K << " clusters), " << predictions.size() << " datapoints\n";
  for (const ChannelEval& ce : channels) {
    os << "channel " << ce.channel << "\tinjective " << ce.acc_injective << "\tmany-to-one "
       << ce.acc_many_to_one << '\n'
       << ce.contingency;
  }
  return os.str();
}

}  // namespace vlac
