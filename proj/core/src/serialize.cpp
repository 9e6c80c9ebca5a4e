#include "calib/serialize.hpp"

#include <json.hpp>

#include <cstdio>

namespace calib {

namespace {

using nlohmann::json;

std::string dump(const json& j) { return j.dump(2); }

json parse(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw ValidationError(std::string(what) + " is not valid JSON");
  }
  return j;
}

void append_csv_value(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

json verdict_json(const PropositionVerdict& v) {
  return json{{"applicable", v.applicable}, {"pass", v.pass}, {"detail", v.detail}};
}

}  // namespace

std::string to_json(const MetricReport& report) {
  json j{
      {"accuracy", report.accuracy},
      {"nll", report.nll},
      {"ace", report.ace},
      {"acce", report.acce},
      {"ece", report.ece},
      {"ecce", report.ecce},
      {"skce", report.skce},
      {"skce_bandwidth", report.skce_bandwidth},
      {"skce_subsampled", report.skce_subsampled},
      {"global_gap_all_label", report.global_gap_all_label},
      {"global_gap_top_label", report.global_gap_top_label},
      {"bin_count", report.bin_count},
  };
  return dump(j);
}

std::string to_json(const ReliabilityCurve& curve) {
  json bins = json::array();
  for (const ReliabilityBin& b : curve.bins) {
    bins.push_back(json{{"bin_center", b.center},
                        {"occupancy", b.occupancy},
                        {"confidence", b.confidence},
                        {"accuracy", b.accuracy},
                        {"count", b.count}});
  }
  json j{{"bin_count", curve.scheme.mode == BinningMode::FixedWidth ? curve.scheme.bin_count : 0},
         {"bins", std::move(bins)}};
  return dump(j);
}

std::string reliability_csv(const ReliabilityCurve& curve) {
  std::string out = "bin_center,occupancy,confidence,accuracy,count\n";
  for (const ReliabilityBin& b : curve.bins) {
    if (b.count == 0) continue;
    append_csv_value(out, b.center);
    out += ',';
    append_csv_value(out, b.occupancy);
    out += ',';
    append_csv_value(out, b.confidence);
    out += ',';
    append_csv_value(out, b.accuracy);
    out += ',';
    out += std::to_string(b.count);
    out += '\n';
  }
  return out;
}

namespace {

json model_json(const TemperatureModel& model) {
  const char* variant = nullptr;
  switch (model.variant) {
    case TemperatureVariant::Global: variant = "global"; break;
    case TemperatureVariant::PerMember: variant = "per_member"; break;
    case TemperatureVariant::Regional: variant = "regional"; break;
  }
  return json{{"variant", variant}, {"temps", model.temps}, {"boundaries", model.boundaries}};
}

}  // namespace

std::string to_json(const TemperatureModel& model) { return dump(model_json(model)); }

std::string to_json(const TemperatureModel& model, double achieved_ece) {
  json j = model_json(model);
  j["achieved_ece"] = achieved_ece;
  return dump(j);
}

TemperatureModel temperature_model_from_json(const std::string& text) {
  const json j = parse(text, "temperature model");
  if (!j.is_object()) throw ValidationError("temperature model must be a JSON object");
  const auto variant_it = j.find("variant");
  const auto temps_it = j.find("temps");
  if (variant_it == j.end() || !variant_it->is_string()) {
    throw ValidationError("temperature model needs a string \"variant\"");
  }
  if (temps_it == j.end() || !temps_it->is_array()) {
    throw ValidationError("temperature model needs a \"temps\" array");
  }
  TemperatureModel model;
  const std::string variant = variant_it->get<std::string>();
  if (variant == "global") {
    model.variant = TemperatureVariant::Global;
  } else if (variant == "per_member") {
    model.variant = TemperatureVariant::PerMember;
  } else if (variant == "regional") {
    model.variant = TemperatureVariant::Regional;
  } else {
    throw ValidationError("unknown temperature model variant \"" + variant + "\"");
  }
  model.temps.clear();
  for (const json& t : *temps_it) {
    if (!t.is_number()) throw ValidationError("temperature entries must be numbers");
    model.temps.push_back(t.get<double>());
  }
  if (const auto it = j.find("boundaries"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("\"boundaries\" must be an array");
    for (const json& b : *it) {
      if (!b.is_number()) throw ValidationError("boundary entries must be numbers");
      model.boundaries.push_back(b.get<double>());
    }
  }
  model.validate();
  return model;
}

std::string to_json(const CombinationWeights& weights) { return dump(json(weights.w)); }

CombinationWeights weights_from_json(const std::string& text) {
  const json j = parse(text, "weights");
  if (!j.is_array() || j.empty()) {
    throw ValidationError("weights must be a nonempty JSON array");
  }
  CombinationWeights weights;
  for (const json& v : j) {
    if (!v.is_number()) throw ValidationError("weight entries must be numbers");
    weights.w.push_back(v.get<double>());
  }
  weights.validate();
  return weights;
}

std::string to_json(const ConfidenceBoundReport& report) {
  json j{
      {"ensemble_mean_confidence", report.ensemble_mean_confidence},
      {"member_mean_confidence", report.member_mean_confidence},
      {"mean_bound_satisfied", report.mean_bound_satisfied},
      {"ensemble_accuracy", report.ensemble_accuracy},
      {"member_mean_accuracy", report.member_mean_accuracy},
      {"per_sample_violations", report.per_sample_violations},
      {"pair_count", report.pair_count},
  };
  return dump(j);
}

std::string to_json(const PropositionVerdicts& verdicts) {
  json j{
      {"p1", verdict_json(verdicts.p1)},
      {"p2", verdict_json(verdicts.p2)},
      {"p3", verdict_json(verdicts.p3)},
      {"p4", verdict_json(verdicts.p4)},
      {"all_applicable_pass", verdicts.all_applicable_pass()},
  };
  return dump(j);
}

std::string to_json(const std::vector<SweepRow>& rows) {
  json arr = json::array();
  for (const SweepRow& r : rows) {
    arr.push_back(json{{"bins", r.bins}, {"ace", r.ace}, {"ece", r.ece}});
  }
  return dump(arr);
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "bins,ace,ece\n";
  for (const SweepRow& r : rows) {
    out += std::to_string(r.bins);
    out += ',';
    append_csv_value(out, r.ace);
    out += ',';
    append_csv_value(out, r.ece);
    out += '\n';
  }
  return out;
}

std::string to_json(const ValidationReport& report) {
  json checks = json::array();
  for (const ValidationCheck& c : report.checks) {
    checks.push_back(json{{"name", c.name},
                          {"pass", c.pass},
                          {"first_bad_row", c.first_bad_row},
                          {"message", c.message}});
  }
  json j{{"ok", report.ok}, {"checks", std::move(checks)}};
  return dump(j);
}

}  // namespace calib
