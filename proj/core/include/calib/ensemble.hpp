#pragma once

#include "calib/scaling.hpp"
#include "calib/types.hpp"

#include <cstddef>
#include <vector>

namespace calib {

struct CombinationWeights {
  std::vector<double> w;

  static CombinationWeights uniform(std::size_t member_count);
  void validate() const;  // nonnegative, sums to 1 within 1e-9
};

// Weighted average of member probability matrices. Members are accumulated
// left to right with plain sums; the confidence-bound report relies on this
// order to make its inequalities exact, so keep them in sync.
LabeledPredictionSet combine(const EnsemblePredictions& ens, const CombinationWeights& w);

// Scale each member's logits by its own temperature (a Global model
// broadcasts one t to every member), then combine.
LabeledPredictionSet calibrate_pre(const EnsembleLogits& ens, const TemperatureModel& temps,
                                   const CombinationWeights& w);

// Combine first, then temperature-scale ln of the averaged probabilities
// (floored at 1e-12). Global models use scale, Regional models scale_dynamic.
LabeledPredictionSet calibrate_post(const EnsemblePredictions& ens, const CombinationWeights& w,
                                    const TemperatureModel& model);

struct WeightFit {
  CombinationWeights weights;
  double objective = 0.0;      // mean log-likelihood at the returned weights
  std::vector<double> trace;   // objective after each accepted update
  std::size_t iterations = 0;
};

// Maximizes the mean log-likelihood of the true labels under the mixture
// Sum_m w_m P_m by exponentiated-gradient ascent (multiplicative updates,
// step 0.5 with halving on non-improvement, at most 1000 iterations, stop
// when the gain drops below 1e-10). Member true-label probabilities are
// floored at 1e-12. The objective is concave, so any start reaches the
// global maximum within tolerance; the default start is uniform.
WeightFit fit_weights_max_ll(const EnsemblePredictions& ens);
WeightFit fit_weights_max_ll(const EnsemblePredictions& ens, std::vector<double> init);

struct AucFit {
  CombinationWeights weights;
  std::vector<double> auc;  // per-member macro one-vs-rest AUC
};

// Weights proportional to each member's macro one-vs-rest AUC (Mann-Whitney
// rank statistic with average ranks for ties). Classes missing either a
// positive or a negative example are skipped; all-one-class labels are an
// error.
AucFit fit_weights_auc(const EnsemblePredictions& ens);

// AUC of scores against binary outcomes via the rank statistic. Exposed for
// tests; requires at least one positive and one negative.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

struct ConfidenceBoundReport {
  double ensemble_mean_confidence = 0.0;
  double member_mean_confidence = 0.0;  // weighted over members, averaged over samples
  bool mean_bound_satisfied = false;    // ensemble <= member, exact comparison
  double ensemble_accuracy = 0.0;
  double member_mean_accuracy = 0.0;    // weighted mean of member accuracies
  std::size_t per_sample_violations = 0;
  std::size_t pair_count = 0;           // N * M comparisons
};

// Checks that the combined prediction is no more confident than the members:
// per (sample, member), the member's probability of the ensemble argmax class
// never exceeds the member's own max probability, and on average the ensemble
// confidence never exceeds the weighted member confidence. Both comparisons
// are exact because the accumulation order matches combine().
ConfidenceBoundReport confidence_bound_report(const EnsemblePredictions& ens,
                                              const CombinationWeights& w);

}  // namespace calib
