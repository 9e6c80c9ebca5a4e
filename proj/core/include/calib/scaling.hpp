#pragma once

#include "calib/types.hpp"

#include <cstddef>
#include <vector>

namespace calib {

enum class TemperatureVariant { Global, PerMember, Regional };

// Temperature calibration map. Global holds one t; PerMember one t per
// ensemble member; Regional one t per confidence region, with R-1 ascending
// boundaries in (0,1) cutting [0,1] into left-closed intervals (the last one
// closed at 1).
struct TemperatureModel {
  TemperatureVariant variant = TemperatureVariant::Global;
  std::vector<double> temps{1.0};
  std::vector<double> boundaries;

  static TemperatureModel global(double t);
  static TemperatureModel per_member(std::vector<double> temps);
  static TemperatureModel regional(std::vector<double> boundaries, std::vector<double> temps);

  std::size_t region_count() const { return temps.size(); }
  void validate() const;
};

// Region index for a temperature-1 max probability: the number of boundaries
// less than or equal to p.
std::size_t region_of(double max_prob, const std::vector<double>& boundaries);

enum class FitOptimizer { GridRefine, FixedAssignmentSgd };

struct FitConfig {
  FitOptimizer optimizer = FitOptimizer::GridRefine;
  double t_min = 0.05;
  double t_max = 10.0;
  std::size_t grid_points = 200;
  double sgd_rate = 0.1;
  std::size_t sgd_iterations = 400;
  BinningScheme bins{};
  // Fixed region boundaries for fit_dynamic; empty means equal-mass quantiles
  // of the temperature-1 max probabilities.
  std::vector<double> boundaries;

  void validate() const;
};

// softmax(z/t). t=1 reproduces softmax bit for bit; argmax per row is
// unchanged for any t.
LabeledPredictionSet scale(const LogitSet& logits, double t);

// Regional scaling: each row's region comes from its temperature-1 max
// probability, then the row is rescaled with that region's temperature.
// Membership is fixed before scaling and never recomputed afterwards.
LabeledPredictionSet scale_dynamic(const LogitSet& logits, const TemperatureModel& model);

struct FitResult {
  double t = 1.0;
  double ece = 0.0;
};

// Minimizes ECE(scale(logits, t)). Grid-refine scans grid_points log-spaced
// temperatures plus t=1, then golden-section refines to width 1e-4; ties break
// toward t=1. The SGD mode runs fixed-assignment subgradient steps and returns
// the best temperature seen (the t=1 start included, so the result is never
// worse than doing nothing).
FitResult fit_temperature(const LogitSet& logits, const FitConfig& config = {});

struct DynamicFitResult {
  TemperatureModel model;
  double ece = 0.0;
};

// Fits a Regional model: boundaries at equal-mass quantiles of the
// temperature-1 max probabilities (or config.boundaries when set), then three
// sweeps of block-coordinate descent, optimizing each region's temperature by
// grid-refine on the full-dataset ECE with the other regions held fixed. The
// incumbent temperature is always a candidate, so the objective never
// increases. Regions with no samples inherit the left neighbor's temperature
// (the leftmost inherits the global fit).
DynamicFitResult fit_dynamic(const LogitSet& logits, std::size_t region_count,
                             const FitConfig& config = {});

}  // namespace calib
