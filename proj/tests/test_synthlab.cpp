#include "calib/metrics.hpp"
#include "calib/synthlab.hpp"
#include "calib/types.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

using namespace calib;

namespace {

SynthesisConfig make_config(std::size_t n, std::size_t k, std::size_t m, std::uint64_t seed) {
  SynthesisConfig config;
  config.sample_count = n;
  config.class_count = k;
  config.member_count = m;
  config.seed = seed;
  return config;
}

// Literal transcription of the distribution-level error sums: group cells by
// exact predicted value with a map, plain double arithmetic throughout.
DistErrors naive_dist_errors(const PiecewiseDistributionModel& model) {
  const std::size_t k = model.class_count();
  std::map<double, std::map<std::size_t, double>> all_cells;
  std::map<double, std::map<std::size_t, double>> top_cells;
  for (const ModelRegion& region : model.regions) {
    std::size_t star = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (region.predicted[j] > region.predicted[star]) star = j;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double gap = region.mass * (region.predicted[j] - region.truth[j]);
      all_cells[region.predicted[j]][j] += gap;
      if (j == star) top_cells[region.predicted[j]][j] += gap;
    }
  }
  DistErrors out;
  for (const auto& [value, cells] : all_cells) {
    double outer = 0.0;
    for (const auto& [cls, sum] : cells) {
      outer += sum;
      out.acce += std::abs(sum);
    }
    out.ace += std::abs(outer);
  }
  out.ace /= static_cast<double>(k);
  out.acce /= static_cast<double>(k);
  for (const auto& [value, cells] : top_cells) {
    double outer = 0.0;
    for (const auto& [cls, sum] : cells) {
      outer += sum;
      out.ecce += std::abs(sum);
    }
    out.ece += std::abs(outer);
  }
  return out;
}

}  // namespace

TEST_CASE("dirichlet truth rows live on the simplex and are reproducible") {
  SynthesisConfig config = make_config(50000, 4, 1, 42);
  DirichletTruth truth = sample_dirichlet_truth(config);
  REQUIRE(truth.truth.rows() == 50000);
  REQUIRE(truth.labels.size() == 50000);
  std::vector<double> column_mean(4, 0.0), label_freq(4, 0.0);
  for (std::size_t i = 0; i < truth.truth.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double v = truth.truth(i, j);
      CHECK(v >= 0.0);
      sum += v;
      column_mean[j] += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(truth.labels[i] >= 0);
    REQUIRE(truth.labels[i] < 4);
    label_freq[static_cast<std::size_t>(truth.labels[i])] += 1.0;
  }
  for (std::size_t j = 0; j < 4; ++j) {
    column_mean[j] /= 50000.0;
    label_freq[j] /= 50000.0;
    CHECK(std::abs(label_freq[j] - column_mean[j]) < 0.01);
  }

  DirichletTruth again = sample_dirichlet_truth(config);
  CHECK(again.truth == truth.truth);
  CHECK(again.labels == truth.labels);

  config.seed = 43;
  DirichletTruth other = sample_dirichlet_truth(config);
  CHECK(other.truth != truth.truth);
}

TEST_CASE("synthesis config validation") {
  make_config(10, 2, 1, 0).validate();
  CHECK_THROWS_AS(make_config(0, 4, 1, 0).validate(), ValidationError);
  CHECK_THROWS_AS(make_config(10, 1, 1, 0).validate(), ValidationError);
  CHECK_THROWS_AS(make_config(10, 4, 0, 0).validate(), ValidationError);
  SynthesisConfig bad = make_config(10, 4, 1, 0);
  bad.bin_size = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("generated members are exactly calibrated against the truth") {
  SynthesisConfig config = make_config(5000, 4, 6, 7);
  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens = gen_calibrated_members(truth, config);
  REQUIRE(ens.member_count() == 6);
  REQUIRE(ens.size() == 5000);
  CHECK(ens.labels == truth.labels);

  const BinningScheme exact = BinningScheme::exact_value();
  for (std::size_t m = 0; m < 6; ++m) {
    for (std::size_t i = 0; i < 200; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) sum += ens.members[m](i, j);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Soft-target errors against the generating truth vanish on exact-value
    // regions; this is the defining property of the construction.
    CHECK(ecce(ens.members[m], truth.truth, exact) <= 1e-10);
    CHECK(ece(ens.members[m], truth.truth, exact) <= 1e-10);
  }
  CHECK(ens.members[0] != ens.members[1]);

  EnsemblePredictions again = gen_calibrated_members(truth, config);
  CHECK(again.members[3] == ens.members[3]);

  // A short final bin (n not divisible by bin size) stays exactly calibrated.
  SynthesisConfig odd = make_config(101, 3, 2, 9);
  DirichletTruth small = sample_dirichlet_truth(odd);
  EnsemblePredictions short_bin = gen_calibrated_members(small, odd);
  CHECK(ecce(short_bin.members[0], small.truth, exact) <= 1e-12);

  SynthesisConfig mismatched = make_config(400, 3, 2, 9);
  CHECK_THROWS_AS(gen_calibrated_members(small, mismatched), ValidationError);
}

TEST_CASE("label binning yields exact-value errors of exactly zero") {
  SynthesisConfig config = make_config(100, 4, 1, 5);
  std::vector<std::int32_t> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<std::int32_t>(i % 4);
  BinnedPredictions out = gen_binned_predictions(labels, config);
  CHECK_FALSE(out.unequal_class_counts);
  REQUIRE(out.preds.size() == 100);

  const BinningScheme exact = BinningScheme::exact_value();
  for (std::size_t i = 0; i < 100; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double v = out.preds.probs(i, j);
      CHECK((v == 0.0 || v == 0.5 || v == 1.0));
      sum += v;
    }
    CHECK(sum == 1.0);
  }
  CHECK(ace(out.preds, exact) == 0.0);
  CHECK(ece(out.preds, exact) == 0.0);

  // Odd sample count: the last bin holds one sample and is one-hot.
  std::vector<std::int32_t> odd_labels(101);
  for (std::size_t i = 0; i < 101; ++i) odd_labels[i] = static_cast<std::int32_t>(i % 4);
  SynthesisConfig odd = make_config(101, 4, 1, 5);
  BinnedPredictions odd_out = gen_binned_predictions(odd_labels, odd);
  CHECK(odd_out.unequal_class_counts);
  CHECK(ace(odd_out.preds, exact) == 0.0);
  CHECK(ece(odd_out.preds, exact) == 0.0);

  std::vector<std::int32_t> bad_labels{0, 1, 9, 2};
  SynthesisConfig tiny = make_config(4, 4, 1, 5);
  CHECK_THROWS_AS(gen_binned_predictions(bad_labels, tiny), ValidationError);
}

TEST_CASE("the binned uniform population hits its closed-form errors") {
  PiecewiseDistributionModel model = binned_uniform_population(4, 2);
  model.validate();
  CHECK(model.regions.size() == 10);
  double mass = 0.0;
  for (const ModelRegion& region : model.regions) mass += region.mass;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

  DistErrors errors = dist_calibration_errors(model);
  CHECK(errors.ace == 0.28125);
  CHECK(errors.acce == 0.28125);
  CHECK(errors.ece == 0.375);
  CHECK(errors.ecce == 0.375);

  CHECK(binned_uniform_population(2, 4).regions.size() == 5);
  CHECK(binned_uniform_population(3, 3).regions.size() == 10);
}

TEST_CASE("distribution errors agree with a naive transcription") {
  for (auto [k, b] : {std::pair<std::size_t, std::size_t>{3, 3}, {2, 4}, {5, 2}}) {
    PiecewiseDistributionModel model = binned_uniform_population(k, b);
    DistErrors got = dist_calibration_errors(model);
    DistErrors want = naive_dist_errors(model);
    CHECK(got.ace == doctest::Approx(want.ace).epsilon(1e-14));
    CHECK(got.acce == doctest::Approx(want.acce).epsilon(1e-14));
    CHECK(got.ece == doctest::Approx(want.ece).epsilon(1e-14));
    CHECK(got.ecce == doctest::Approx(want.ecce).epsilon(1e-14));
  }
  DistErrors tau = naive_dist_errors(example1_model(0.02));
  DistErrors got = dist_calibration_errors(example1_model(0.02));
  CHECK(got.ece == doctest::Approx(tau.ece).epsilon(1e-14));
}

TEST_CASE("the three-region example separates all-label from top-label error") {
  PiecewiseDistributionModel model = example1_model(0.05);
  model.validate();
  REQUIRE(model.regions.size() == 3);
  CHECK(model.class_count() == 4);

  DistErrors errors = dist_calibration_errors(model);
  CHECK(errors.ace == 0.0);
  CHECK(errors.acce == 0.0);
  CHECK(errors.ece == doctest::Approx(0.05 / 3.0).epsilon(1e-12));
  CHECK(errors.ecce == doctest::Approx(0.05 / 3.0).epsilon(1e-12));

  DistErrors flat = dist_calibration_errors(example1_model(0.0));
  CHECK(flat.ace == 0.0);
  CHECK(flat.ece == 0.0);

  DistErrors mid = dist_calibration_errors(example1_model(0.03));
  CHECK(mid.ece == doctest::Approx(0.01).epsilon(1e-12));

  CHECK_THROWS_AS(example1_model(-0.01), ValidationError);
  CHECK_THROWS_AS(example1_model(0.051), ValidationError);
}

TEST_CASE("piecewise model validation rejects malformed regions") {
  PiecewiseDistributionModel empty;
  CHECK_THROWS_AS(empty.validate(), ValidationError);

  PiecewiseDistributionModel model = binned_uniform_population(3, 2);
  model.regions[0].mass += 0.5;
  CHECK_THROWS_AS(model.validate(), ValidationError);

  model = binned_uniform_population(3, 2);
  model.regions[0].mass = -model.regions[0].mass;
  CHECK_THROWS_AS(model.validate(), ValidationError);

  model = binned_uniform_population(3, 2);
  model.regions[1].truth[0] += 0.25;
  CHECK_THROWS_AS(model.validate(), ValidationError);

  model = binned_uniform_population(3, 2);
  model.regions[1].predicted.pop_back();
  CHECK_THROWS_AS(model.validate(), ValidationError);
}

TEST_CASE("the epsilon sweep reports each requested region scheme") {
  SynthesisConfig config = make_config(2000, 4, 1, 21);
  std::vector<std::int32_t> labels(2000);
  for (std::size_t i = 0; i < 2000; ++i) labels[i] = static_cast<std::int32_t>(i % 4);
  BinnedPredictions binned = gen_binned_predictions(labels, config);

  std::vector<SweepRow> rows = epsilon_sweep(binned.preds, {15, 5, 0});
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].bins == 15);
  CHECK(rows[1].bins == 5);
  CHECK(rows[2].bins == 0);
  CHECK(rows[0].ace == ace(binned.preds, BinningScheme::fixed_width(15)));
  CHECK(rows[2].ace == ace(binned.preds, BinningScheme::exact_value()));
  CHECK(rows[2].ace == 0.0);
  CHECK(rows[2].ece == 0.0);

  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens = gen_calibrated_members(truth, config);
  std::vector<SweepRow> soft = epsilon_sweep(ens.members[0], truth.truth, {15, 0});
  REQUIRE(soft.size() == 2);
  CHECK(soft[0].ace == ace(ens.members[0], truth.truth, BinningScheme::fixed_width(15)));
  CHECK(soft[1].ece <= 1e-10);
}

TEST_CASE("proposition checks on a generated ensemble find the witness") {
  SynthesisConfig config = make_config(20000, 4, 8, 3);
  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens = gen_calibrated_members(truth, config);
  CombinationWeights w = CombinationWeights::uniform(8);

  PropositionVerdicts verdicts = verify_propositions(ens, w);
  // Averaging distinct calibrated members blurs the exact-value regions, so
  // the ensemble is measurably miscalibrated: exactly the P4 witness.
  CHECK_FALSE(verdicts.p1.applicable);
  CHECK(verdicts.p2.applicable);
  CHECK(verdicts.p2.pass);
  CHECK_FALSE(verdicts.p3.applicable);
  CHECK(verdicts.p4.applicable);
  CHECK(verdicts.p4.pass);
  CHECK(verdicts.p4.detail.find("witness") != std::string::npos);
  CHECK(verdicts.all_applicable_pass());
}

TEST_CASE("proposition checks on identical members pass vacuously for p4") {
  SynthesisConfig config = make_config(50000, 4, 1, 17);
  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens;
  ens.labels = truth.labels;
  ens.members = {truth.truth, truth.truth, truth.truth};
  CombinationWeights w = CombinationWeights::uniform(3);

  PropositionVerdicts verdicts = verify_propositions(ens, w);
  CHECK(verdicts.p1.applicable);
  CHECK(verdicts.p1.pass);
  CHECK(verdicts.p2.applicable);
  CHECK(verdicts.p2.pass);
  CHECK(verdicts.p3.applicable);
  CHECK(verdicts.p3.pass);
  CHECK_FALSE(verdicts.p4.applicable);
  CHECK(verdicts.p4.detail.find("precondition unmet") != std::string::npos);
  CHECK(verdicts.all_applicable_pass());
}

TEST_CASE("proposition checks report unmet preconditions on sharpened members") {
  SynthesisConfig config = make_config(20000, 4, 1, 29);
  DirichletTruth truth = sample_dirichlet_truth(config);
  Matrix sharp(20000, 4);
  for (std::size_t i = 0; i < 20000; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      sharp(i, j) = std::pow(truth.truth(i, j), 4.0);
      sum += sharp(i, j);
    }
    for (std::size_t j = 0; j < 4; ++j) sharp(i, j) /= sum;
  }
  EnsemblePredictions ens;
  ens.labels = truth.labels;
  ens.members = {sharp, sharp};

  PropositionVerdicts verdicts = verify_propositions(ens, CombinationWeights::uniform(2));
  CHECK_FALSE(verdicts.p1.applicable);
  CHECK_FALSE(verdicts.p4.applicable);
  CHECK(verdicts.p4.detail.find("precondition unmet") != std::string::npos);
  CHECK(verdicts.p2.pass);
}

TEST_CASE("verdict aggregation ignores inapplicable entries") {
  PropositionVerdicts verdicts;
  verdicts.p1 = {false, false, "skipped"};
  verdicts.p2 = {true, true, ""};
  verdicts.p3 = {false, false, "skipped"};
  verdicts.p4 = {true, true, "witness"};
  CHECK(verdicts.all_applicable_pass());
  verdicts.p2.pass = false;
  CHECK_FALSE(verdicts.all_applicable_pass());
  verdicts.p2 = {false, false, ""};
  verdicts.p4 = {false, false, ""};
  verdicts.p1 = {false, false, ""};
  CHECK(verdicts.all_applicable_pass());
}
