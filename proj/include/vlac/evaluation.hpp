// Cluster accuracy: best label assignment between predicted clusters and
// ground-truth classes, in two flavours — injective (each class claims at
// most one cluster) and many-to-one (each cluster votes its majority class)
// — plus exhaustive oracles for both.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlac {

enum class AssignMode { injective, many_to_one };

// Predictions y in 1..K against truths t in 1..T, one pair per datapoint.
struct LabelPair {
  std::vector<int> y;
  std::vector<int> t;
  int K = 0;
  int T = 0;
};

// Validates ranges and non-emptiness.
LabelPair make_label_pair(std::vector<int> y, std::vector<int> t, int K, int T);

struct AssignmentResult {
  // mapping[k-1] = class assigned to cluster k, or 0 if unmatched
  std::vector<int> mapping;
  double accuracy = 0.0;
  AssignMode mode = AssignMode::many_to_one;
};

// counts[t-1][k-1] = number of datapoints with truth t and prediction k
std::vector<std::vector<int64_t>> contingency(const LabelPair& pairs);

// Optimal assignment for the mode: injective via augmenting-path matching on
// the (negated, square-padded) contingency table; many-to-one via per-cluster
// majority vote.
AssignmentResult cluster_accuracy(const LabelPair& pairs, AssignMode mode);

// Exhaustive maximisation over all feasible mappings; K,T <= 8.
AssignmentResult brute_force_accuracy(const LabelPair& pairs, AssignMode mode);

// Human-readable contingency table with per-cluster occupancy, tab-delimited.
std::string format_contingency(const LabelPair& pairs);

// ---- model evaluation -------------------------------------------------------

struct ModelConfig;
class ParamStore;
struct Dataset;

struct ChannelEval {
  int channel = 0;  // 0-based truth channel in the dataset
  double acc_injective = 0.0;
  double acc_many_to_one = 0.0;
  std::string contingency;
};

struct EvalReport {
  int layer = 0;  // 1-based latent layer the predictions come from
  int K = 0;
  std::vector<int> predictions;    // 1-based cluster per datapoint
  std::vector<int64_t> occupancy;  // datapoints per cluster
  std::vector<ChannelEval> channels;
  std::string formatted() const;
};

// Deepest layer with K > 1, or 0 when the model has no categorical layer.
int designated_layer(const ModelConfig& config);

// Classifies every datapoint at `layer` (1-based, must have K > 1) and scores
// the clusters against each truth channel under both assignment modes.
EvalReport evaluate_model(const ModelConfig& config, const ParamStore& params,
                          const Dataset& data, int layer);

}  // namespace vlac
