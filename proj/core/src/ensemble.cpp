#include "calib/ensemble.hpp"

#include "calib/parallel.hpp"
#include "kahan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace calib {

namespace {

constexpr double kProbFloor = 1e-12;

void check_ensemble_shape(const std::vector<Matrix>& members,
                          const std::vector<std::int32_t>& labels) {
  if (members.empty()) throw ValidationError("ensemble has no members");
  const std::size_t n = members.front().rows();
  const std::size_t k = members.front().cols();
  if (n == 0 || k < 2) throw ValidationError("ensemble members must be N x K with K >= 2");
  for (std::size_t m = 1; m < members.size(); ++m) {
    if (members[m].rows() != n || members[m].cols() != k) {
      throw ValidationError("member " + std::to_string(m) + " shape differs from member 0");
    }
  }
  if (labels.size() != n) throw ValidationError("label count does not match sample count");
}

void check_weight_count(const CombinationWeights& w, std::size_t member_count) {
  if (w.w.size() != member_count) {
    throw ValidationError("weight count " + std::to_string(w.w.size()) +
                          " does not match member count " + std::to_string(member_count));
  }
}

// Mean log-likelihood of the labels under the w-mixture of member true-label
// probabilities. Columns of `truth` are members.
double mixture_objective(const Matrix& truth, const std::vector<double>& w) {
  Kahan total;
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    const auto row = truth.row(i);
    double mix = 0.0;
    for (std::size_t m = 0; m < row.size(); ++m) mix += w[m] * row[m];
    total.add(std::log(mix));
  }
  return total.sum / static_cast<double>(truth.rows());
}

WeightFit max_ll_impl(const EnsemblePredictions& ens, std::vector<double> w) {
  check_ensemble_shape(ens.members, ens.labels);
  const std::size_t n = ens.size();
  const std::size_t m_count = ens.member_count();
  if (w.size() != m_count) throw ValidationError("init weight count does not match members");
  double init_sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ValidationError("init weights must be nonnegative");
    init_sum += v;
  }
  if (!(init_sum > 0.0)) throw ValidationError("init weights must not all be zero");
  for (double& v : w) v /= init_sum;

  // truth(i, m) = member m's floored probability of the true label of row i
  Matrix truth(n, m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    const Matrix& member = ens.members[m];
    for (std::size_t i = 0; i < n; ++i) {
      truth(i, m) = std::max(member(i, static_cast<std::size_t>(ens.labels[i])), kProbFloor);
    }
  }

  WeightFit fit;
  double objective = mixture_objective(truth, w);
  fit.trace.push_back(objective);
  std::vector<double> grad(m_count), next(m_count);
  for (std::size_t iter = 0; iter < 1000; ++iter) {
    std::vector<Kahan> grad_acc(m_count);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = truth.row(i);
      double mix = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) mix += w[m] * row[m];
      for (std::size_t m = 0; m < m_count; ++m) grad_acc[m].add(row[m] / mix);
    }
    double grad_max = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < m_count; ++m) {
      grad[m] = grad_acc[m].sum / static_cast<double>(n);
      grad_max = std::max(grad_max, grad[m]);
    }

    // Multiplicative update with step halving until the objective does not
    // drop; the max-gradient shift keeps the exponentials bounded by 1.
    double step = 0.5;
    double candidate_objective = objective;
    bool improved = false;
    while (step > 1e-12) {
      double total = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) {
        next[m] = w[m] * std::exp(step * (grad[m] - grad_max));
        total += next[m];
      }
      for (std::size_t m = 0; m < m_count; ++m) next[m] /= total;
      candidate_objective = mixture_objective(truth, next);
      if (candidate_objective >= objective) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
    const double gain = candidate_objective - objective;
    w = next;
    objective = candidate_objective;
    fit.trace.push_back(objective);
    fit.iterations = iter + 1;
    if (gain < 1e-10) break;
  }
  fit.weights.w = std::move(w);
  fit.objective = objective;
  return fit;
}

struct RankedScore {
  double score;
  std::size_t index;
};

}  // namespace

CombinationWeights CombinationWeights::uniform(std::size_t member_count) {
  if (member_count == 0) throw ValidationError("ensemble has no members");
  CombinationWeights w;
  w.w.assign(member_count, 1.0 / static_cast<double>(member_count));
  return w;
}

void CombinationWeights::validate() const {
  if (w.empty()) throw ValidationError("weights are empty");
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ValidationError("weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("weights must sum to 1, got " + std::to_string(sum));
  }
}

LabeledPredictionSet combine(const EnsemblePredictions& ens, const CombinationWeights& w) {
  check_ensemble_shape(ens.members, ens.labels);
  w.validate();
  check_weight_count(w, ens.member_count());
  const std::size_t n = ens.size();
  const std::size_t k = ens.class_count();
  Matrix out(n, k);
  for_chunks(n, 4096, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto dst = out.row(i);
      for (std::size_t m = 0; m < ens.members.size(); ++m) {
        const double wm = w.w[m];
        const auto src = ens.members[m].row(i);
        for (std::size_t j = 0; j < k; ++j) dst[j] += wm * src[j];
      }
    }
  });
  return {std::move(out), ens.labels};
}

LabeledPredictionSet calibrate_pre(const EnsembleLogits& ens, const TemperatureModel& temps,
                                   const CombinationWeights& w) {
  check_ensemble_shape(ens.members, ens.labels);
  temps.validate();
  std::vector<double> per_member;
  if (temps.variant == TemperatureVariant::Global) {
    per_member.assign(ens.member_count(), temps.temps[0]);
  } else if (temps.variant == TemperatureVariant::PerMember) {
    per_member = temps.temps;
    if (per_member.size() != ens.member_count()) {
      throw ValidationError("temperature count does not match member count");
    }
  } else {
    throw ValidationError("calibrate_pre needs a global or per-member model");
  }
  EnsemblePredictions scaled;
  scaled.labels = ens.labels;
  scaled.members.reserve(ens.member_count());
  for (std::size_t m = 0; m < ens.member_count(); ++m) {
    scaled.members.push_back(scale({ens.members[m], ens.labels}, per_member[m]).probs);
  }
  return combine(scaled, w);
}

LabeledPredictionSet calibrate_post(const EnsemblePredictions& ens, const CombinationWeights& w,
                                    const TemperatureModel& model) {
  model.validate();
  LabeledPredictionSet combined = combine(ens, w);
  LogitSet logits{log_rows(combined.probs, kProbFloor), combined.labels};
  switch (model.variant) {
    case TemperatureVariant::Global:
      return scale(logits, model.temps[0]);
    case TemperatureVariant::Regional:
      return scale_dynamic(logits, model);
    case TemperatureVariant::PerMember:
      break;
  }
  throw ValidationError("calibrate_post needs a global or regional model");
}

WeightFit fit_weights_max_ll(const EnsemblePredictions& ens) {
  return max_ll_impl(ens, std::vector<double>(ens.member_count(), 1.0));
}

WeightFit fit_weights_max_ll(const EnsemblePredictions& ens, std::vector<double> init) {
  return max_ll_impl(ens, std::move(init));
}

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) {
    throw ValidationError("scores and outcomes differ in length");
  }
  std::size_t pos = 0;
  for (bool b : positive) pos += b ? 1 : 0;
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) {
    throw ValidationError("binary_auc needs at least one positive and one negative");
  }
  std::vector<RankedScore> ranked(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ranked[i] = {scores[i], i};
  std::sort(ranked.begin(), ranked.end(), [](const RankedScore& a, const RankedScore& b) {
    return a.score < b.score;
  });
  // Average ranks over ties, 1-based.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < ranked.size()) {
    std::size_t j = i;
    while (j < ranked.size() && ranked[j].score == ranked[i].score) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t s = i; s < j; ++s) {
      if (positive[ranked[s].index]) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double q = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

AucFit fit_weights_auc(const EnsemblePredictions& ens) {
  check_ensemble_shape(ens.members, ens.labels);
  const std::size_t n = ens.size();
  const std::size_t k = ens.class_count();
  std::vector<std::size_t> class_counts(k, 0);
  for (std::int32_t y : ens.labels) class_counts[static_cast<std::size_t>(y)] += 1;
  std::size_t usable = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (class_counts[j] > 0 && class_counts[j] < n) ++usable;
  }
  if (usable == 0) {
    throw ValidationError("auc weights need labels from more than one class");
  }

  AucFit fit;
  fit.auc.resize(ens.member_count());
  std::vector<double> scores(n);
  std::vector<bool> positive(n);
  for (std::size_t m = 0; m < ens.member_count(); ++m) {
    Kahan macro;
    for (std::size_t j = 0; j < k; ++j) {
      if (class_counts[j] == 0 || class_counts[j] == n) continue;
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = ens.members[m](i, j);
        positive[i] = ens.labels[i] == static_cast<std::int32_t>(j);
      }
      macro.add(binary_auc(scores, positive));
    }
    fit.auc[m] = macro.sum / static_cast<double>(usable);
  }
  double total = 0.0;
  for (double a : fit.auc) total += a;
  fit.weights.w.resize(ens.member_count());
  if (total > 0.0) {
    for (std::size_t m = 0; m < ens.member_count(); ++m) fit.weights.w[m] = fit.auc[m] / total;
  } else {
    fit.weights = CombinationWeights::uniform(ens.member_count());
  }
  return fit;
}

ConfidenceBoundReport confidence_bound_report(const EnsemblePredictions& ens,
                                              const CombinationWeights& w) {
  const LabeledPredictionSet combined = combine(ens, w);
  const std::size_t n = ens.size();
  const std::size_t m_count = ens.member_count();

  ConfidenceBoundReport report;
  report.pair_count = n * m_count;

  // Both means accumulate per sample in row order with the same member order
  // as combine(), which makes the Eq-style mean bound an exact consequence of
  // the per-sample bound: every LHS term is dominated by its RHS term and
  // ordered float sums preserve termwise domination.
  double ens_conf_sum = 0.0;
  double member_conf_sum = 0.0;
  std::size_t ens_hits = 0;
  std::vector<std::size_t> member_hits(m_count, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto erow = combined.probs.row(i);
    const std::size_t je = argmax_row(erow);
    ens_conf_sum += erow[je];
    if (static_cast<std::int32_t>(je) == ens.labels[i]) ++ens_hits;

    double weighted_member_max = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto mrow = ens.members[m].row(i);
      const std::size_t jm = argmax_row(mrow);
      if (static_cast<std::int32_t>(jm) == ens.labels[i]) ++member_hits[m];
      if (mrow[je] > mrow[jm]) ++report.per_sample_violations;
      weighted_member_max += w.w[m] * mrow[jm];
    }
    member_conf_sum += weighted_member_max;
  }
  report.ensemble_mean_confidence = ens_conf_sum / static_cast<double>(n);
  report.member_mean_confidence = member_conf_sum / static_cast<double>(n);
  report.mean_bound_satisfied =
      report.ensemble_mean_confidence <= report.member_mean_confidence;
  report.ensemble_accuracy = static_cast<double>(ens_hits) / static_cast<double>(n);
  double acc = 0.0;
  for (std::size_t m = 0; m < m_count; ++m) {
    acc += w.w[m] * (static_cast<double>(member_hits[m]) / static_cast<double>(n));
  }
  report.member_mean_accuracy = acc;
  return report;
}

}  // namespace calib
