#pragma once

#include "calib/ensemble.hpp"
#include "calib/metrics.hpp"
#include "calib/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace calib {

struct SynthesisConfig {
  std::size_t bin_size = 2;
  std::size_t class_count = 4;
  std::size_t member_count = 10;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DirichletTruth {
  Matrix truth;                      // N x K rows on the simplex
  std::vector<std::int32_t> labels;  // sampled from the rows
};

// Flat-Dirichlet ground truth: each row is Dirichlet(1,...,1) via K
// exponential draws normalized; labels are drawn from the rows. The row
// stream and the label stream are decorrelated, so the same seed always
// yields the same truth regardless of what else is drawn.
DirichletTruth sample_dirichlet_truth(const SynthesisConfig& config);

// Calibrated-member generator: per member, shuffle the sample indices with a
// member-specific stream, cut them into bins of config.bin_size (the last bin
// may be short), and give every sample in a bin the bin's average true
// distribution. Each member is exactly calibrated on exact-value regions
// against the truth; the ensemble average is not.
EnsemblePredictions gen_calibrated_members(const DirichletTruth& truth,
                                           const SynthesisConfig& config);
Matrix gen_calibrated_member(const Matrix& truth, const SynthesisConfig& config,
                             std::size_t member);

struct BinnedPredictions {
  LabeledPredictionSet preds;
  bool unequal_class_counts = false;  // the 9/32 analysis assumes equal counts
};

// Label-binning generator: shuffle, cut into bins of config.bin_size, and
// predict each bin's one-hot average. With bin size 2 every entry lands in
// {0, 0.5, 1} and the exact-value ACE of the output is 0.
BinnedPredictions gen_binned_predictions(const std::vector<std::int32_t>& labels,
                                         const SynthesisConfig& config);

struct ModelRegion {
  double mass = 0.0;
  std::vector<double> truth;
  std::vector<double> predicted;
};

// Finite-region population model: region masses sum to 1, and each region
// carries a true and a predicted posterior row.
struct PiecewiseDistributionModel {
  std::vector<ModelRegion> regions;

  std::size_t class_count() const { return regions.empty() ? 0 : regions.front().truth.size(); }
  void validate() const;
};

struct DistErrors {
  double ace = 0.0;
  double acce = 0.0;
  double ece = 0.0;
  double ecce = 0.0;
};

// Distribution-level calibration errors, evaluated exactly as finite sums
// over regions grouped by identical predicted probability. ACE/ACCE average
// over classes (1/K); ECE/ECCE weight top-label cells by mass alone.
DistErrors dist_calibration_errors(const PiecewiseDistributionModel& model);

// The 3-region, 4-class model contrasting all-label with top-label
// calibration. tau in [0, 0.05]; tau = 0 makes predicted equal true.
PiecewiseDistributionModel example1_model(double tau);

// Population limit of the label-binning generator: all multisets of b draws
// from K equally likely classes, predicted as their one-hot average, with a
// uniform 1/K true posterior. For K=4, b=2 its distribution ACE is 9/32.
PiecewiseDistributionModel binned_uniform_population(std::size_t class_count,
                                                     std::size_t bin_size);

struct SweepRow {
  int bins = 0;  // 0 means exact-value regions
  double ace = 0.0;
  double ece = 0.0;
};

// ACE and ECE across bin counts (ε scales). A bin count of 0 selects
// exact-value regions.
std::vector<SweepRow> epsilon_sweep(const LabeledPredictionSet& preds,
                                    const std::vector<int>& bin_counts);
std::vector<SweepRow> epsilon_sweep(const Matrix& probs, const Matrix& targets,
                                    const std::vector<int>& bin_counts);

struct VerifyTolerances {
  double equality = 1e-9;           // slack for equality assertions
  double p1_calibration = 0.01;     // max |top gap| to call something calibrated
  double p4_member_gap_max = 0.01;  // members must be at least this calibrated
  double p4_witness_min = 0.01;     // ensemble gap must clear this...
  double p4_witness_factor = 3.0;   // ...and this multiple of the member gaps
};

struct PropositionVerdict {
  bool applicable = false;
  bool pass = false;
  std::string detail;
};

struct PropositionVerdicts {
  PropositionVerdict p1, p2, p3, p4;

  bool all_applicable_pass() const;
};

// Executable forms of the four ensemble-calibration claims.
// P1: if members and ensemble are globally top-label calibrated (within
//     p1_calibration), ensemble accuracy cannot beat the weighted member
//     accuracy by more than the calibration slack.
// P2: the ensemble all-label gap vector is the weighted mean of member gap
//     vectors (linearity, always applicable).
// P3: when all members induce the same exact-value partition of the samples,
//     ensemble per-region gaps equal the weighted mean of member gaps.
// P4: constructive counterexample search - members top-calibrated within
//     p4_member_gap_max while the ensemble top gap exceeds
//     max(p4_witness_min, p4_witness_factor * worst member gap). Finding one
//     is a pass; lacking the material is "precondition unmet", not a failure.
PropositionVerdicts verify_propositions(const EnsemblePredictions& ens,
                                        const CombinationWeights& w,
                                        const VerifyTolerances& tol = {});

}  // namespace calib
