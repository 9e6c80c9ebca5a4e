#include "calib/ensemble.hpp"
#include "calib/io.hpp"
#include "calib/metrics.hpp"
#include "calib/scaling.hpp"
#include "calib/serialize.hpp"
#include "calib/synthlab.hpp"
#include "calib/types.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <system_error>
#include <vector>

namespace {

using nlohmann::json;

void emit(const std::string& text, const std::string& output_path) {
  std::string payload = text;
  if (payload.empty() || payload.back() != '\n') payload += '\n';
  if (output_path.empty()) {
    std::fwrite(payload.data(), 1, payload.size(), stdout);
    return;
  }
  std::ofstream out(output_path, std::ios::binary);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw calib::IoError(calib::IoErrorCode::WriteFailure, "cannot write " + output_path);
  }
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw calib::IoError(calib::IoErrorCode::FileNotFound, "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void warn_renormalized(const calib::Dataset& data, const std::string& path) {
  if (data.renormalized_rows > 0) {
    std::fprintf(stderr, "note: %zu rows in %s renormalized (sum off by <= 1e-6)\n",
                 data.renormalized_rows, path.c_str());
  }
}

calib::BinningScheme scheme_from_flags(int bins, bool exact) {
  if (exact || bins == 0) return calib::BinningScheme::exact_value();
  return calib::BinningScheme::fixed_width(bins);
}

// Single-model probabilities with labels; ensembles must go through combine.
calib::LabeledPredictionSet load_single(const std::string& path) {
  calib::Dataset data = calib::load_predictions(path);
  warn_renormalized(data, path);
  if (data.member_count() != 1) {
    throw calib::ValidationError(path + " holds " + std::to_string(data.member_count()) +
                                 " members; run `calib combine` first");
  }
  if (data.kind == calib::FileKind::Logits) {
    calib::LogitSet logits = data.logit_set();
    return {calib::softmax_rows(logits.logits), std::move(logits.labels)};
  }
  return data.prediction_set();
}

// Concatenates the members of several files into one probability ensemble.
calib::EnsemblePredictions load_ensemble(const std::vector<std::string>& paths) {
  calib::EnsemblePredictions ens;
  bool first = true;
  for (const std::string& path : paths) {
    calib::Dataset data = calib::load_predictions(path);
    warn_renormalized(data, path);
    if (first) {
      ens.labels = data.labels;
      first = false;
    } else if (ens.labels != data.labels) {
      throw calib::ValidationError(path + " disagrees with the first input on labels");
    }
    for (calib::Matrix& m : data.members) {
      ens.members.push_back(data.kind == calib::FileKind::Logits ? calib::softmax_rows(m)
                                                                 : std::move(m));
    }
  }
  require_valid(validate(ens), "combined inputs");
  return ens;
}

// Same files as logits for pre-combination scaling; probability inputs go
// through the floored log map.
calib::EnsembleLogits load_logit_ensemble(const std::vector<std::string>& paths) {
  calib::EnsembleLogits ens;
  bool first = true;
  for (const std::string& path : paths) {
    calib::Dataset data = calib::load_predictions(path);
    if (first) {
      ens.labels = data.labels;
      first = false;
    } else if (ens.labels != data.labels) {
      throw calib::ValidationError(path + " disagrees with the first input on labels");
    }
    for (calib::Matrix& m : data.members) {
      ens.members.push_back(data.kind == calib::FileKind::Probs ? calib::log_rows(m)
                                                                : std::move(m));
    }
  }
  return ens;
}

calib::CombinationWeights resolve_weights(const std::string& source,
                                          const calib::EnsemblePredictions& ens,
                                          json* fit_info) {
  if (source == "uniform") return calib::CombinationWeights::uniform(ens.member_count());
  if (source == "maxll") {
    calib::WeightFit fit = calib::fit_weights_max_ll(ens);
    if (fit_info) {
      (*fit_info)["objective"] = fit.objective;
      (*fit_info)["iterations"] = fit.iterations;
    }
    return fit.weights;
  }
  if (source == "auc") {
    calib::AucFit fit = calib::fit_weights_auc(ens);
    if (fit_info) (*fit_info)["member_auc"] = fit.auc;
    return fit.weights;
  }
  calib::CombinationWeights w = calib::weights_from_json(slurp(source));
  if (w.w.size() != ens.member_count()) {
    throw calib::ValidationError("weight file has " + std::to_string(w.w.size()) +
                                 " entries for " + std::to_string(ens.member_count()) +
                                 " members");
  }
  return w;
}

json report_json(const calib::MetricReport& report) {
  return json::parse(calib::to_json(report));
}

struct MetricsCmd {
  std::string input, output;
  int bins = 15;
  bool exact = false;
  bool skce = false;
  std::string bandwidth = "auto";

  void run() const {
    calib::LabeledPredictionSet preds = load_single(input);
    calib::SkceOptions skce_options;
    if (bandwidth != "auto") skce_options.bandwidth = std::stod(bandwidth);
    calib::MetricReport report =
        compute_metrics(preds, scheme_from_flags(bins, exact), skce_options, skce);
    emit(calib::to_json(report), output);
  }
};

struct FitCmd {
  std::string input, output;
  std::string mode = "global";
  std::string optimizer = "grid";
  int regions = 6;
  int bins = 15;
  double sgd_rate = 0.1;
  int sgd_iterations = 400;

  void run() const {
    calib::Dataset data = calib::load_predictions(input);
    if (data.kind != calib::FileKind::Logits) {
      throw calib::ValidationError("fit expects a logits input (kind=logits)");
    }
    if (data.member_count() != 1) {
      throw calib::ValidationError("fit expects a single model; run `calib combine` first");
    }
    calib::LogitSet logits = data.logit_set();
    calib::FitConfig config;
    config.optimizer = optimizer == "sgd" ? calib::FitOptimizer::FixedAssignmentSgd
                                          : calib::FitOptimizer::GridRefine;
    config.sgd_rate = sgd_rate;
    config.sgd_iterations = static_cast<std::size_t>(sgd_iterations);
    config.bins = calib::BinningScheme::fixed_width(bins);
    if (mode == "dynamic") {
      calib::DynamicFitResult fit =
          calib::fit_dynamic(logits, static_cast<std::size_t>(regions), config);
      emit(calib::to_json(fit.model, fit.ece), output);
    } else {
      calib::FitResult fit = calib::fit_temperature(logits, config);
      emit(calib::to_json(calib::TemperatureModel::global(fit.t), fit.ece), output);
    }
  }
};

struct CombineCmd {
  std::vector<std::string> inputs;
  std::string output;
  std::string weights_source = "uniform";
  std::string calibrate = "none";
  std::string temp_model_path;
  int bins = 15;
  int regions = 6;

  void run() const {
    calib::EnsemblePredictions ens = load_ensemble(inputs);
    json info;
    json fit_info = json::object();
    calib::CombinationWeights w = resolve_weights(weights_source, ens, &fit_info);

    calib::LabeledPredictionSet plain = calib::combine(ens, w);
    calib::BinningScheme scheme = calib::BinningScheme::fixed_width(bins);
    calib::MetricReport before = compute_metrics(plain, scheme, {}, false);

    std::optional<calib::TemperatureModel> model;
    if (!temp_model_path.empty()) {
      model = calib::temperature_model_from_json(slurp(temp_model_path));
    }

    calib::LabeledPredictionSet out;
    json model_out;
    if (calibrate == "none") {
      out = std::move(plain);
    } else if (calibrate == "pre") {
      if (!model) throw calib::ValidationError("--calibrate pre needs --temp-model");
      out = calib::calibrate_pre(load_logit_ensemble(inputs), *model, w);
      model_out = json::parse(calib::to_json(*model));
    } else if (calibrate == "post") {
      if (!model) throw calib::ValidationError("--calibrate post needs --temp-model");
      out = calib::calibrate_post(ens, w, *model);
      model_out = json::parse(calib::to_json(*model));
    } else if (calibrate == "dyn") {
      calib::LogitSet log_probs{calib::log_rows(plain.probs), plain.labels};
      calib::FitConfig config;
      config.bins = scheme;
      calib::DynamicFitResult fit =
          calib::fit_dynamic(log_probs, static_cast<std::size_t>(regions), config);
      out = calib::scale_dynamic(log_probs, fit.model);
      model_out = json::parse(calib::to_json(fit.model, fit.ece));
    } else {
      throw CLI::ValidationError("--calibrate", "must be none|pre|post|dyn");
    }

    calib::store_predictions(calib::Dataset::from(out), output, calib::format_for_path(output));

    info["weights"] = w.w;
    info["weights_source"] = weights_source;
    if (!fit_info.empty()) info["weight_fit"] = fit_info;
    info["calibrate"] = calibrate;
    info["model"] = model_out.is_null() ? json() : model_out;
    info["before"] = report_json(before);
    info["after"] = calibrate == "none" ? report_json(before)
                                        : report_json(compute_metrics(out, scheme, {}, false));
    info["output"] = output;
    emit(info.dump(2), "");
  }
};

struct SynthCmd {
  std::string algorithm = "alg1";
  std::string output_dir = ".";
  int b = 2;
  int k = 4;
  int m = 10;
  long long n = 100000;
  unsigned long long seed = 0;
  double tau = 0.05;

  void run() const {
    if (b < 1) throw CLI::ValidationError("--b", "bin size must be at least 1");
    if (k < 2) throw CLI::ValidationError("--k", "class count must be at least 2");
    if (m < 1) throw CLI::ValidationError("--m", "member count must be at least 1");
    if (n < 1) throw CLI::ValidationError("--n", "sample count must be at least 1");
    if (!(tau >= 0.0 && tau <= 0.05)) throw CLI::ValidationError("--tau", "must lie in [0, 0.05]");

    calib::SynthesisConfig config;
    config.bin_size = static_cast<std::size_t>(b);
    config.class_count = static_cast<std::size_t>(k);
    config.member_count = static_cast<std::size_t>(m);
    config.sample_count = static_cast<std::size_t>(n);
    config.seed = seed;

    json manifest{{"algorithm", algorithm}, {"b", b}, {"k", k}, {"n", n}, {"seed", seed}};
    json outputs = json::array();
    json warnings = json::array();
    const std::string dir = output_dir.empty() ? "." : output_dir;
    std::error_code dir_error;
    std::filesystem::create_directories(dir, dir_error);
    if (dir_error) {
      throw calib::IoError(calib::IoErrorCode::WriteFailure,
                           dir + ": " + dir_error.message());
    }

    if (algorithm == "alg1") {
      manifest["m"] = m;
      calib::DirichletTruth truth = calib::sample_dirichlet_truth(config);
      calib::EnsemblePredictions members = calib::gen_calibrated_members(truth, config);
      const std::string truth_path = dir + "/truth.calt";
      const std::string members_path = dir + "/members.calt";
      calib::store_predictions(
          calib::Dataset::from(calib::LabeledPredictionSet{truth.truth, truth.labels}),
          truth_path, calib::FileFormat::Binary);
      calib::store_predictions(calib::Dataset::from(members), members_path,
                               calib::FileFormat::Binary);
      outputs.push_back(truth_path);
      outputs.push_back(members_path);
    } else if (algorithm == "alg2") {
      // Round-robin labels: equal class counts whenever k divides n.
      std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<std::int32_t>(i % static_cast<std::size_t>(k));
      }
      config.member_count = 1;
      calib::BinnedPredictions binned = calib::gen_binned_predictions(labels, config);
      if (binned.unequal_class_counts) {
        warnings.push_back("class counts are unequal (n is not divisible by k)");
      }
      const std::string path = dir + "/binned.calt";
      calib::store_predictions(calib::Dataset::from(binned.preds), path,
                               calib::FileFormat::Binary);
      outputs.push_back(path);
    } else if (algorithm == "example1") {
      manifest["tau"] = tau;
      calib::PiecewiseDistributionModel model = calib::example1_model(tau);
      calib::DistErrors errors = calib::dist_calibration_errors(model);
      json regions = json::array();
      for (const calib::ModelRegion& r : model.regions) {
        regions.push_back(
            json{{"mass", r.mass}, {"truth", r.truth}, {"predicted", r.predicted}});
      }
      json model_json{{"regions", std::move(regions)},
                      {"errors",
                       {{"ace", errors.ace},
                        {"acce", errors.acce},
                        {"ece", errors.ece},
                        {"ecce", errors.ecce}}}};
      const std::string path = dir + "/model.json";
      emit(model_json.dump(2), path);
      outputs.push_back(path);
    } else {
      throw CLI::ValidationError("--algorithm", "must be alg1|alg2|example1");
    }

    manifest["outputs"] = std::move(outputs);
    manifest["warnings"] = std::move(warnings);
    emit(manifest.dump(2), dir + "/manifest.json");
    emit(manifest.dump(2), "");
  }
};

struct VerifyCmd {
  std::vector<std::string> inputs;
  std::string props = "1,2,3,4";
  std::string weights_source = "uniform";
  double tolerance = 1e-9;
  int* exit_code = nullptr;

  void run() const {
    calib::EnsemblePredictions ens = load_ensemble(inputs);
    calib::CombinationWeights w = resolve_weights(weights_source, ens, nullptr);
    calib::VerifyTolerances tol;
    tol.equality = tolerance;
    calib::PropositionVerdicts verdicts = calib::verify_propositions(ens, w, tol);

    bool selected[4] = {false, false, false, false};
    for (const std::string& part : CLI::detail::split(props, ',')) {
      if (part == "1") selected[0] = true;
      else if (part == "2") selected[1] = true;
      else if (part == "3") selected[2] = true;
      else if (part == "4") selected[3] = true;
      else throw CLI::ValidationError("--props", "entries must be drawn from 1,2,3,4");
    }
    calib::PropositionVerdict* all[4] = {&verdicts.p1, &verdicts.p2, &verdicts.p3, &verdicts.p4};
    for (int i = 0; i < 4; ++i) {
      if (!selected[i]) *all[i] = {false, false, "not selected"};
    }
    emit(calib::to_json(verdicts), "");
    if (!verdicts.all_applicable_pass()) *exit_code = 4;
  }
};

struct ReliabilityCmd {
  std::string input, output;
  int bins = 15;
  bool exact = false;
  std::string format = "csv";

  void run() const {
    calib::LabeledPredictionSet preds = load_single(input);
    calib::ReliabilityCurve curve = calib::reliability(preds, scheme_from_flags(bins, exact));
    emit(format == "json" ? calib::to_json(curve) : calib::reliability_csv(curve), output);
  }
};

struct SweepCmd {
  std::string input, output, truth_path;
  std::vector<int> bins{1, 2, 3, 5, 10, 15, 25, 50, 100, 0};
  std::string format = "csv";

  void run() const {
    calib::LabeledPredictionSet preds = load_single(input);
    std::vector<calib::SweepRow> rows;
    if (truth_path.empty()) {
      rows = calib::epsilon_sweep(preds, bins);
    } else {
      calib::Dataset truth = calib::load_predictions(truth_path);
      if (truth.kind != calib::FileKind::Probs || truth.member_count() != 1) {
        throw calib::ValidationError("--truth must be a single probability matrix");
      }
      if (truth.size() != preds.size() || truth.class_count() != preds.class_count()) {
        throw calib::ValidationError("--truth shape does not match the input");
      }
      rows = calib::epsilon_sweep(preds.probs, truth.members.front(), bins);
    }
    emit(format == "json" ? calib::to_json(rows) : calib::sweep_csv(rows), output);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"calibration toolkit for probabilistic classifiers and ensembles"};
  app.require_subcommand(1);
  int exit_code = 0;

  MetricsCmd metrics;
  CLI::App* cmd = app.add_subcommand("metrics", "metric report (JSON) for one prediction file");
  cmd->add_option("input", metrics.input, "prediction or logit file")->required();
  cmd->add_option("--bins", metrics.bins, "fixed-width bin count; 0 = exact-value regions")
      ->check(CLI::Range(0, 1 << 20));
  cmd->add_flag("--exact", metrics.exact, "use exact-value regions");
  cmd->add_flag("--skce", metrics.skce, "include the kernel calibration error");
  cmd->add_option("--bandwidth", metrics.bandwidth, "SKCE kernel bandwidth (number or auto)");
  cmd->add_option("--output,-o", metrics.output, "write JSON here instead of stdout");
  cmd->callback([&] { metrics.run(); });

  FitCmd fit;
  cmd = app.add_subcommand("fit", "fit temperature scaling on a logits file");
  cmd->add_option("input", fit.input, "logit file with labels")->required();
  cmd->add_option("--mode", fit.mode, "global or dynamic")
      ->check(CLI::IsMember({"global", "dynamic"}));
  cmd->add_option("--regions", fit.regions, "region count for dynamic mode")
      ->check(CLI::Range(1, 1 << 20));
  cmd->add_option("--optimizer", fit.optimizer, "grid or sgd")
      ->check(CLI::IsMember({"grid", "sgd"}));
  cmd->add_option("--bins", fit.bins, "bin count for the ECE objective")
      ->check(CLI::Range(1, 1 << 20));
  cmd->add_option("--sgd-rate", fit.sgd_rate, "SGD learning rate")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--sgd-iterations", fit.sgd_iterations, "SGD iteration count")
      ->check(CLI::Range(1, 1 << 30));
  cmd->add_option("--output,-o", fit.output, "write model JSON here instead of stdout");
  cmd->callback([&] { fit.run(); });

  CombineCmd combine;
  cmd = app.add_subcommand("combine", "combine members into one prediction file");
  cmd->add_option("inputs", combine.inputs, "member files (identical samples and labels)")
      ->required()
      ->expected(-1);
  cmd->add_option("--weights", combine.weights_source, "uniform|maxll|auc|<json file>");
  cmd->add_option("--calibrate", combine.calibrate, "none|pre|post|dyn");
  cmd->add_option("--temp-model", combine.temp_model_path, "temperature model JSON (pre/post)");
  cmd->add_option("--bins", combine.bins, "bin count for the before/after reports")
      ->check(CLI::Range(1, 1 << 20));
  cmd->add_option("--regions", combine.regions, "region count for --calibrate dyn")
      ->check(CLI::Range(1, 1 << 20));
  cmd->add_option("--output,-o", combine.output, "combined prediction file")->required();
  cmd->callback([&] { combine.run(); });

  SynthCmd synth;
  cmd = app.add_subcommand("synth", "generate synthetic calibration datasets");
  cmd->add_option("--algorithm", synth.algorithm, "alg1|alg2|example1");
  cmd->add_option("--b", synth.b, "bin size");
  cmd->add_option("--k", synth.k, "class count");
  cmd->add_option("--m", synth.m, "member count (alg1)");
  cmd->add_option("--n", synth.n, "sample count");
  cmd->add_option("--seed", synth.seed, "RNG seed");
  cmd->add_option("--tau", synth.tau, "perturbation for example1, in [0, 0.05]");
  cmd->add_option("--output-dir", synth.output_dir, "directory for generated files");
  cmd->callback([&] { synth.run(); });

  VerifyCmd verify;
  verify.exit_code = &exit_code;
  cmd = app.add_subcommand("verify", "check the ensemble calibration propositions");
  cmd->add_option("inputs", verify.inputs, "member files forming the ensemble")
      ->required()
      ->expected(-1);
  cmd->add_option("--props", verify.props, "comma list drawn from 1,2,3,4");
  cmd->add_option("--weights", verify.weights_source, "uniform|maxll|auc|<json file>");
  cmd->add_option("--tolerance", verify.tolerance, "equality tolerance")
      ->check(CLI::PositiveNumber);
  cmd->callback([&] { verify.run(); });

  ReliabilityCmd reliability;
  cmd = app.add_subcommand("reliability", "reliability curve for one prediction file");
  cmd->add_option("input", reliability.input, "prediction or logit file")->required();
  cmd->add_option("--bins", reliability.bins, "fixed-width bin count; 0 = exact-value regions")
      ->check(CLI::Range(0, 1 << 20));
  cmd->add_flag("--exact", reliability.exact, "use exact-value regions");
  cmd->add_option("--format", reliability.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--output,-o", reliability.output, "write here instead of stdout");
  cmd->callback([&] { reliability.run(); });

  SweepCmd sweep;
  cmd = app.add_subcommand("sweep", "ACE/ECE across bin counts");
  cmd->add_option("input", sweep.input, "prediction or logit file")->required();
  cmd->add_option("--bins", sweep.bins, "comma list of bin counts; 0 = exact-value")
      ->delimiter(',');
  cmd->add_option("--truth", sweep.truth_path, "true posterior file for soft targets");
  cmd->add_option("--format", sweep.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--output,-o", sweep.output, "write here instead of stdout");
  cmd->callback([&] { sweep.run(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const calib::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const calib::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return exit_code;
}
