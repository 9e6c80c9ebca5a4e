#pragma once

#include "calib/ensemble.hpp"
#include "calib/metrics.hpp"
#include "calib/scaling.hpp"
#include "calib/synthlab.hpp"
#include "calib/types.hpp"

#include <string>
#include <vector>

namespace calib {

// JSON renderings use 2-space indentation and a stable key set; non-finite
// numbers serialize as null. Parsers reject malformed input with
// ValidationError and ignore unknown keys.

std::string to_json(const MetricReport& report);

std::string to_json(const ReliabilityCurve& curve);
// Header bin_center,occupancy,confidence,accuracy,count; empty bins are
// skipped so the file is plot-ready.
std::string reliability_csv(const ReliabilityCurve& curve);

std::string to_json(const TemperatureModel& model);
// Same shape plus an "achieved_ece" key, for fit outputs.
std::string to_json(const TemperatureModel& model, double achieved_ece);
TemperatureModel temperature_model_from_json(const std::string& text);

std::string to_json(const CombinationWeights& weights);  // plain JSON array
CombinationWeights weights_from_json(const std::string& text);

std::string to_json(const ConfidenceBoundReport& report);

std::string to_json(const PropositionVerdicts& verdicts);

std::string to_json(const std::vector<SweepRow>& rows);
// Header bins,ace,ece; a bins value of 0 denotes exact-value regions.
std::string sweep_csv(const std::vector<SweepRow>& rows);

std::string to_json(const ValidationReport& report);

}  // namespace calib
