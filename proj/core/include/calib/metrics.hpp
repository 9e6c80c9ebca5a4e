#pragma once

#include "calib/types.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace calib {

// One (class, probability-region) cell with the sample indices assigned to it.
// value is the bin center in fixed-width mode and the shared probability in
// exact-value mode. Empty cells are omitted.
struct RegionCell {
  std::size_t cls = 0;
  double value = 0.0;
  std::vector<std::size_t> samples;
};

struct RegionIndex {
  bool top_label = false;
  BinningScheme scheme;
  std::vector<RegionCell> cells;
};

RegionIndex assign_regions(const LabeledPredictionSet& preds, const BinningScheme& scheme,
                           bool top_label);

// All-label errors: the absolute value sits outside (ace) or inside (acce)
// the per-region class sum. Both are normalized by N*K.
double ace(const LabeledPredictionSet& preds, const BinningScheme& scheme = {});
double acce(const LabeledPredictionSet& preds, const BinningScheme& scheme = {});

// Top-label errors over argmax regions, normalized by N.
double ece(const LabeledPredictionSet& preds, const BinningScheme& scheme = {});
double ecce(const LabeledPredictionSet& preds, const BinningScheme& scheme = {});

// Soft-target variants against a row-stochastic target matrix instead of
// one-hot labels. Used when the generating distribution is known exactly.
double ace(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme = {});
double acce(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme = {});
double ece(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme = {});
double ecce(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme = {});

struct GlobalGaps {
  std::vector<double> all_label;  // mean predicted prob minus empirical frequency, per class
  double top_label = 0.0;         // mean confidence minus accuracy
};

GlobalGaps global_gaps(const LabeledPredictionSet& preds);
GlobalGaps global_gaps(const Matrix& probs, const Matrix& targets);

double accuracy(const LabeledPredictionSet& preds);
double nll(const LabeledPredictionSet& preds);

struct SkceOptions {
  std::optional<double> bandwidth;   // empty means the median heuristic
  std::size_t subsample_cap = 10000; // 0 disables subsampling
};

struct SkceResult {
  double value = 0.0;
  double bandwidth = 0.0;
  bool subsampled = false;
  std::size_t rows_used = 0;
};

SkceResult skce_uq(const LabeledPredictionSet& preds, const SkceOptions& options = {});

struct ReliabilityBin {
  double center = 0.0;
  double occupancy = 0.0;
  double confidence = 0.0;  // NaN when the bin is empty
  double accuracy = 0.0;    // NaN when the bin is empty
  std::size_t count = 0;
};

struct ReliabilityCurve {
  BinningScheme scheme;
  std::vector<ReliabilityBin> bins;
};

ReliabilityCurve reliability(const LabeledPredictionSet& preds, const BinningScheme& scheme = {});

struct MetricReport {
  double accuracy = 0.0;
  double nll = 0.0;
  double ace = 0.0;
  double acce = 0.0;
  double ece = 0.0;
  double ecce = 0.0;
  double skce = 0.0;
  double skce_bandwidth = 0.0;
  bool skce_subsampled = false;
  std::vector<double> global_gap_all_label;
  double global_gap_top_label = 0.0;
  std::size_t bin_count = 0;
};

// with_skce=false skips the quadratic kernel test; the skce fields come back
// as NaN so serialized reports keep a stable key set.
MetricReport compute_metrics(const LabeledPredictionSet& preds, const BinningScheme& scheme = {},
                             const SkceOptions& skce_options = {}, bool with_skce = true);

}  // namespace calib
