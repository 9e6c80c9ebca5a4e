#include "calib/ensemble.hpp"
#include "calib/metrics.hpp"
#include "calib/rng.hpp"
#include "calib/synthlab.hpp"
#include "calib/types.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

using namespace calib;

namespace {

EnsemblePredictions random_ensemble(std::uint64_t seed, std::size_t m, std::size_t n,
                                    std::size_t k) {
  SynthesisConfig config;
  config.sample_count = n;
  config.class_count = k;
  config.member_count = 1;
  config.seed = seed;
  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens;
  ens.labels = truth.labels;
  ens.members.push_back(truth.truth);
  for (std::size_t j = 1; j < m; ++j) {
    config.seed = seed + 1000 * j;
    ens.members.push_back(sample_dirichlet_truth(config).truth);
  }
  return ens;
}

double plain_accuracy(const LabeledPredictionSet& preds) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (argmax_row(preds.probs, i) == preds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

TEST_CASE("combining a single member returns it bit for bit") {
  EnsemblePredictions ens = random_ensemble(1, 1, 300, 5);
  LabeledPredictionSet out = combine(ens, CombinationWeights::uniform(1));
  CHECK(out.probs == ens.members[0]);
  CHECK(out.labels == ens.labels);
}

TEST_CASE("combination matches the hand-computed mixture") {
  EnsemblePredictions ens;
  ens.labels = {0, 1};
  Matrix a(2, 2);
  a(0, 0) = 0.8; a(0, 1) = 0.2;
  a(1, 0) = 0.1; a(1, 1) = 0.9;
  Matrix b(2, 2);
  b(0, 0) = 0.4; b(0, 1) = 0.6;
  b(1, 0) = 0.5; b(1, 1) = 0.5;
  ens.members = {a, b};
  CombinationWeights w{{0.25, 0.75}};
  LabeledPredictionSet out = combine(ens, w);
  CHECK(out.probs(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.probs(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.probs(1, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(out.probs(1, 1) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("weight validation rejects bad vectors") {
  CombinationWeights::uniform(4).validate();
  CHECK(CombinationWeights::uniform(4).w[2] == 0.25);
  CombinationWeights negative{{0.5, -0.1, 0.6}};
  CHECK_THROWS_AS(negative.validate(), ValidationError);
  CombinationWeights off_sum{{0.5, 0.4}};
  CHECK_THROWS_AS(off_sum.validate(), ValidationError);
  CombinationWeights empty{};
  CHECK_THROWS_AS(empty.validate(), ValidationError);

  EnsemblePredictions ens = random_ensemble(2, 3, 50, 3);
  CHECK_THROWS_AS(combine(ens, CombinationWeights::uniform(2)), ValidationError);
}

TEST_CASE("pre-combination scaling at t=1 equals combining raw softmaxes") {
  EnsembleLogits logits;
  Rng rng(7, 0);
  const std::size_t n = 120, k = 4, m = 3;
  for (std::size_t j = 0; j < m; ++j) {
    Matrix z(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) z(i, c) = 6.0 * rng.next_double() - 3.0;
    }
    logits.members.push_back(std::move(z));
  }
  for (std::size_t i = 0; i < n; ++i) {
    logits.labels.push_back(static_cast<std::int32_t>(rng.next_below(k)));
  }
  CombinationWeights w = CombinationWeights::uniform(m);

  EnsemblePredictions probs;
  probs.labels = logits.labels;
  for (const Matrix& z : logits.members) probs.members.push_back(softmax_rows(z));

  LabeledPredictionSet pre = calibrate_pre(logits, TemperatureModel::global(1.0), w);
  LabeledPredictionSet plain = combine(probs, w);
  CHECK(pre.probs == plain.probs);

  LabeledPredictionSet per =
      calibrate_pre(logits, TemperatureModel::per_member({1.0, 1.0, 1.0}), w);
  CHECK(per.probs == plain.probs);

  CHECK_THROWS_AS(calibrate_pre(logits, TemperatureModel::per_member({1.0, 2.0}), w),
                  ValidationError);
  CHECK_THROWS_AS(
      calibrate_pre(logits, TemperatureModel::regional({0.5}, {1.0, 2.0}), w),
      ValidationError);
}

TEST_CASE("post-combination scaling at t=1 is a near-identity") {
  EnsemblePredictions ens = random_ensemble(3, 4, 400, 5);
  CombinationWeights w = CombinationWeights::uniform(4);
  LabeledPredictionSet plain = combine(ens, w);
  LabeledPredictionSet post = calibrate_post(ens, w, TemperatureModel::global(1.0));
  for (std::size_t i = 0; i < plain.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(post.probs(i, j) == doctest::Approx(plain.probs(i, j)).epsilon(1e-9));
    }
  }
  const BinningScheme bins = BinningScheme::fixed_width(15);
  CHECK(std::abs(ece(post, bins) - ece(plain, bins)) <= 1e-9);

  LabeledPredictionSet regional =
      calibrate_post(ens, w, TemperatureModel::regional({0.5}, {1.0, 2.0}));
  CHECK(regional.size() == plain.size());

  CHECK_THROWS_AS(calibrate_post(ens, w, TemperatureModel::per_member({1.0, 1.0, 1.0, 1.0})),
                  ValidationError);
}

TEST_CASE("likelihood weighting pushes all weight onto a dominant member") {
  const std::size_t n = 500, k = 4;
  EnsemblePredictions ens;
  Rng rng(11, 1);
  Matrix oracle_member(n, k, 0.0);
  Matrix uniform_member(n, k, 1.0 / static_cast<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::int32_t>(rng.next_below(k));
    ens.labels.push_back(y);
    for (std::size_t j = 0; j < k; ++j) {
      oracle_member(i, j) = j == static_cast<std::size_t>(y) ? 0.97 : 0.01;
    }
  }
  ens.members = {oracle_member, uniform_member};

  WeightFit fit = fit_weights_max_ll(ens);
  fit.weights.validate();
  CHECK(fit.weights.w[0] >= 0.999);
  CHECK(fit.iterations > 0);
  for (std::size_t i = 1; i < fit.trace.size(); ++i) {
    CHECK(fit.trace[i] >= fit.trace[i - 1]);
  }

  // The reported objective is the mixture log-likelihood at the weights.
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = 0.0;
    for (std::size_t m = 0; m < 2; ++m) {
      p += fit.weights.w[m] * ens.members[m](i, static_cast<std::size_t>(ens.labels[i]));
    }
    ll += std::log(p);
  }
  ll /= static_cast<double>(n);
  CHECK(fit.objective == doctest::Approx(ll).epsilon(1e-12));

  // Different starts land on the same concave maximum.
  WeightFit other = fit_weights_max_ll(ens, {0.05, 0.95});
  CHECK(std::abs(other.weights.w[0] - fit.weights.w[0]) <= 1e-8);
  CHECK(std::abs(other.objective - fit.objective) <= 1e-10);

  CHECK_THROWS_AS(fit_weights_max_ll(ens, {0.5, -0.5}), ValidationError);
  CHECK_THROWS_AS(fit_weights_max_ll(ens, {0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(fit_weights_max_ll(ens, {0.2, 0.2, 0.6}), ValidationError);
}

TEST_CASE("identical members keep exactly uniform likelihood weights") {
  EnsemblePredictions ens = random_ensemble(5, 1, 200, 3);
  ens.members.push_back(ens.members[0]);
  ens.members.push_back(ens.members[0]);
  WeightFit fit = fit_weights_max_ll(ens);
  CHECK(fit.weights.w[0] == fit.weights.w[1]);
  CHECK(fit.weights.w[1] == fit.weights.w[2]);
  CHECK(fit.weights.w[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("binary auc reproduces the rank statistic") {
  CHECK(binary_auc({0.9, 0.8, 0.7, 0.6}, {true, false, true, false}) == doctest::Approx(0.75));
  CHECK(binary_auc({0.1, 0.9}, {false, true}) == doctest::Approx(1.0));
  CHECK(binary_auc({0.9, 0.1}, {false, true}) == doctest::Approx(0.0));
  // All-tied scores average to chance.
  CHECK(binary_auc({0.5, 0.5, 0.5, 0.5}, {true, true, false, false}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(binary_auc({0.5, 0.5}, {true, true}), ValidationError);
  CHECK_THROWS_AS(binary_auc({0.5}, {true}), ValidationError);
  CHECK_THROWS_AS(binary_auc({0.5, 0.6}, std::vector<bool>{true}), ValidationError);
}

TEST_CASE("auc weighting favors the discriminating member") {
  const std::size_t n = 600, k = 3;
  EnsemblePredictions ens;
  Rng rng(13, 2);
  Matrix sharp(n, k, 0.0);
  Matrix noise(n, k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::int32_t>(rng.next_below(k));
    ens.labels.push_back(y);
    for (std::size_t j = 0; j < k; ++j) {
      sharp(i, j) = j == static_cast<std::size_t>(y) ? 0.8 : 0.1;
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      noise(i, j) = 0.05 + rng.next_double();
      sum += noise(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) noise(i, j) /= sum;
  }
  ens.members = {noise, sharp};

  AucFit fit = fit_weights_auc(ens);
  fit.weights.validate();
  REQUIRE(fit.auc.size() == 2);
  CHECK(fit.auc[1] > 0.95);
  CHECK(fit.auc[0] < 0.65);
  CHECK(fit.weights.w[1] > fit.weights.w[0]);
  CHECK(fit.weights.w[1] == doctest::Approx(fit.auc[1] / (fit.auc[0] + fit.auc[1])).epsilon(1e-12));

  EnsemblePredictions degenerate = ens;
  std::fill(degenerate.labels.begin(), degenerate.labels.end(), 1);
  CHECK_THROWS_AS(fit_weights_auc(degenerate), ValidationError);
}

TEST_CASE("ensemble confidence never exceeds member confidence") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(seed, 3);
    const std::size_t m = 2 + rng.next_below(5);
    const std::size_t n = 50 + rng.next_below(300);
    const std::size_t k = 2 + rng.next_below(6);
    EnsemblePredictions ens = random_ensemble(seed * 31, m, n, k);

    std::vector<double> raw(m);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      raw[j] = 0.05 + rng.next_double();
      sum += raw[j];
    }
    for (double& v : raw) v /= sum;
    // Renormalize exactly enough for validate(): force the last weight.
    double partial = 0.0;
    for (std::size_t j = 0; j + 1 < m; ++j) partial += raw[j];
    raw[m - 1] = 1.0 - partial;
    CombinationWeights w{raw};
    w.validate();

    ConfidenceBoundReport report = confidence_bound_report(ens, w);
    CHECK(report.per_sample_violations == 0);
    CHECK(report.mean_bound_satisfied);
    CHECK(report.pair_count == n * m);
    CHECK(report.ensemble_mean_confidence <= report.member_mean_confidence);

    LabeledPredictionSet mixed = combine(ens, w);
    CHECK(report.ensemble_accuracy == plain_accuracy(mixed));
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      acc += w.w[j] * plain_accuracy(ens.member_set(j));
    }
    CHECK(report.member_mean_accuracy == doctest::Approx(acc).epsilon(1e-12));
  }
}
