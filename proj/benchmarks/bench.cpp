#include "calib/ensemble.hpp"
#include "calib/metrics.hpp"
#include "calib/scaling.hpp"
#include "calib/synthlab.hpp"
#include "calib/types.hpp"

#include <benchmark/benchmark.h>

#include <cstddef>

namespace {

using namespace calib;

LabeledPredictionSet make_preds(std::size_t n, std::size_t k) {
  SynthesisConfig config;
  config.sample_count = n;
  config.class_count = k;
  config.member_count = 1;
  config.seed = 1;
  DirichletTruth truth = sample_dirichlet_truth(config);
  return {std::move(truth.truth), std::move(truth.labels)};
}

void BM_AceFixedWidth(benchmark::State& state) {
  const auto preds = make_preds(static_cast<std::size_t>(state.range(0)), 10);
  const BinningScheme bins = BinningScheme::fixed_width(15);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ace(preds, bins));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AceFixedWidth)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_AceExactValue(benchmark::State& state) {
  const auto preds = make_preds(static_cast<std::size_t>(state.range(0)), 10);
  const BinningScheme bins = BinningScheme::exact_value();
  for (auto _ : state) {
    benchmark::DoNotOptimize(ace(preds, bins));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AceExactValue)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_EceFixedWidth(benchmark::State& state) {
  const auto preds = make_preds(static_cast<std::size_t>(state.range(0)), 10);
  const BinningScheme bins = BinningScheme::fixed_width(15);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ece(preds, bins));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EceFixedWidth)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_Skce(benchmark::State& state) {
  const auto preds = make_preds(static_cast<std::size_t>(state.range(0)), 10);
  SkceOptions options;
  options.bandwidth = 0.5;
  options.subsample_cap = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(skce_uq(preds, options).value);
  }
}
BENCHMARK(BM_Skce)->Arg(256)->Arg(1024)->Arg(4096);

void BM_FitTemperature(benchmark::State& state) {
  auto preds = make_preds(static_cast<std::size_t>(state.range(0)), 10);
  Matrix z = log_rows(preds.probs);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) *= 2.5;
  }
  const LogitSet logits{std::move(z), std::move(preds.labels)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_temperature(logits, {}).t);
  }
}
BENCHMARK(BM_FitTemperature)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_Combine(benchmark::State& state) {
  const std::size_t m = static_cast<std::size_t>(state.range(0));
  SynthesisConfig config;
  config.sample_count = 10000;
  config.class_count = 10;
  config.member_count = m;
  config.seed = 2;
  DirichletTruth truth = sample_dirichlet_truth(config);
  EnsemblePredictions ens = gen_calibrated_members(truth, config);
  const CombinationWeights w = CombinationWeights::uniform(m);
  for (auto _ : state) {
    benchmark::DoNotOptimize(combine(ens, w).probs.data());
  }
  state.SetItemsProcessed(state.iterations() * 10000 * m);
}
BENCHMARK(BM_Combine)->Arg(4)->Arg(16);

}  // namespace
