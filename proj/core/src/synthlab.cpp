#include "calib/synthlab.hpp"

#include "calib/parallel.hpp"
#include "calib/rng.hpp"
#include "kahan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>

namespace calib {

namespace {

std::uint64_t canon_bits(double p) {
  if (p == 0.0) p = 0.0;
  return std::bit_cast<std::uint64_t>(p);
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct DistTerm {
  std::uint64_t bits;
  std::uint32_t cls;
  std::uint32_t region;
};

struct DistPair {
  double outside = 0.0;
  double inside = 0.0;
};

DistPair reduce_dist_terms(std::vector<DistTerm>& terms, const PiecewiseDistributionModel& model) {
  std::sort(terms.begin(), terms.end(), [](const DistTerm& a, const DistTerm& b) {
    if (a.bits != b.bits) return a.bits < b.bits;
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.region < b.region;
  });
  Kahan outside, inside;
  std::size_t pos = 0;
  while (pos < terms.size()) {
    const std::uint64_t bits = terms[pos].bits;
    Kahan value_sum;
    while (pos < terms.size() && terms[pos].bits == bits) {
      const std::uint32_t cls = terms[pos].cls;
      Kahan cell;
      while (pos < terms.size() && terms[pos].bits == bits && terms[pos].cls == cls) {
        const ModelRegion& r = model.regions[terms[pos].region];
        cell.add(r.mass * (r.predicted[cls] - r.truth[cls]));
        ++pos;
      }
      value_sum.add(cell.sum);
      inside.add(std::abs(cell.sum));
    }
    outside.add(std::abs(value_sum.sum));
  }
  return {outside.sum, inside.sum};
}

void check_posterior_row(const std::vector<double>& row, const char* what) {
  double sum = 0.0;
  for (double v : row) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(std::string(what) + " entry " + format_value(v) +
                            " outside [0,1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError(std::string(what) + " row sums to " + format_value(sum));
  }
}

}  // namespace

void SynthesisConfig::validate() const {
  if (bin_size < 1) throw ValidationError("bin_size must be at least 1");
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  if (member_count < 1) throw ValidationError("member_count must be at least 1");
  if (sample_count < 1) throw ValidationError("sample_count must be at least 1");
}

DirichletTruth sample_dirichlet_truth(const SynthesisConfig& config) {
  config.validate();
  const std::size_t n = config.sample_count;
  const std::size_t k = config.class_count;
  DirichletTruth out;
  out.truth = Matrix(n, k);
  out.labels.resize(n);
  Rng row_rng(config.seed, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.truth.row(i);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = row_rng.next_exponential();
      sum += row[j];
    }
    if (sum > 0.0) {
      for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
    } else {
      for (std::size_t j = 0; j < k; ++j) row[j] = 1.0 / static_cast<double>(k);
    }
  }
  Rng label_rng(config.seed, 1);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = label_rng.next_categorical(out.truth.row(i));
  }
  return out;
}

Matrix gen_calibrated_member(const Matrix& truth, const SynthesisConfig& config,
                             std::size_t member) {
  const std::size_t n = truth.rows();
  const std::size_t k = truth.cols();
  const std::size_t b = config.bin_size;
  Rng rng(config.seed, 2 + member);
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  rng.shuffle(perm);

  Matrix pred(n, k);
  std::vector<double> avg(k);
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(start + b, n);
    std::fill(avg.begin(), avg.end(), 0.0);
    for (std::size_t pos = start; pos < end; ++pos) {
      const auto row = truth.row(perm[pos]);
      for (std::size_t j = 0; j < k; ++j) avg[j] += row[j];
    }
    const double size = static_cast<double>(end - start);
    for (std::size_t j = 0; j < k; ++j) avg[j] /= size;
    for (std::size_t pos = start; pos < end; ++pos) {
      auto row = pred.row(perm[pos]);
      for (std::size_t j = 0; j < k; ++j) row[j] = avg[j];
    }
  }
  return pred;
}

EnsemblePredictions gen_calibrated_members(const DirichletTruth& truth,
                                           const SynthesisConfig& config) {
  config.validate();
  if (truth.truth.rows() != config.sample_count || truth.truth.cols() != config.class_count) {
    throw ValidationError("truth shape does not match the config");
  }
  EnsemblePredictions ens;
  ens.labels = truth.labels;
  ens.members.resize(config.member_count);
  for_chunks(config.member_count, 1, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      ens.members[m] = gen_calibrated_member(truth.truth, config, m);
    }
  });
  return ens;
}

BinnedPredictions gen_binned_predictions(const std::vector<std::int32_t>& labels,
                                         const SynthesisConfig& config) {
  config.validate();
  const std::size_t n = labels.size();
  const std::size_t k = config.class_count;
  const std::size_t b = config.bin_size;
  if (n < 1) throw ValidationError("labels are empty");
  std::vector<std::size_t> counts(k, 0);
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ValidationError("label out of range for class_count");
    }
    counts[static_cast<std::size_t>(y)] += 1;
  }
  BinnedPredictions out;
  for (std::size_t j = 1; j < k; ++j) {
    if (counts[j] != counts[0]) {
      out.unequal_class_counts = true;
      break;
    }
  }

  Rng rng(config.seed, 2);
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  rng.shuffle(perm);

  Matrix pred(n, k);
  std::vector<std::size_t> bin_counts(k);
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t end = std::min(start + b, n);
    std::fill(bin_counts.begin(), bin_counts.end(), 0);
    for (std::size_t pos = start; pos < end; ++pos) {
      bin_counts[static_cast<std::size_t>(labels[perm[pos]])] += 1;
    }
    const double size = static_cast<double>(end - start);
    for (std::size_t pos = start; pos < end; ++pos) {
      auto row = pred.row(perm[pos]);
      for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(bin_counts[j]) / size;
    }
  }
  out.preds = {std::move(pred), labels};
  return out;
}

void PiecewiseDistributionModel::validate() const {
  if (regions.empty()) throw ValidationError("model has no regions");
  const std::size_t k = regions.front().truth.size();
  if (k < 2) throw ValidationError("model needs at least 2 classes");
  double mass = 0.0;
  for (const ModelRegion& r : regions) {
    if (!(r.mass >= 0.0)) throw ValidationError("region mass must be nonnegative");
    if (r.truth.size() != k || r.predicted.size() != k) {
      throw ValidationError("region rows disagree on class count");
    }
    check_posterior_row(r.truth, "true posterior");
    check_posterior_row(r.predicted, "predicted posterior");
    mass += r.mass;
  }
  if (std::abs(mass - 1.0) > 1e-12) {
    throw ValidationError("region masses sum to " + format_value(mass));
  }
}

DistErrors dist_calibration_errors(const PiecewiseDistributionModel& model) {
  model.validate();
  const std::size_t k = model.class_count();
  DistErrors errors;

  std::vector<DistTerm> terms;
  terms.reserve(model.regions.size() * k);
  for (std::size_t r = 0; r < model.regions.size(); ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      terms.push_back({canon_bits(model.regions[r].predicted[j]), static_cast<std::uint32_t>(j),
                       static_cast<std::uint32_t>(r)});
    }
  }
  const DistPair all = reduce_dist_terms(terms, model);
  errors.ace = all.outside / static_cast<double>(k);
  errors.acce = all.inside / static_cast<double>(k);

  terms.clear();
  for (std::size_t r = 0; r < model.regions.size(); ++r) {
    const auto& predicted = model.regions[r].predicted;
    const std::size_t j = argmax_row(std::span<const double>(predicted));
    terms.push_back({canon_bits(predicted[j]), static_cast<std::uint32_t>(j),
                     static_cast<std::uint32_t>(r)});
  }
  const DistPair top = reduce_dist_terms(terms, model);
  errors.ece = top.outside;
  errors.ecce = top.inside;
  return errors;
}

PiecewiseDistributionModel example1_model(double tau) {
  if (!(tau >= 0.0 && tau <= 0.05)) {
    throw ValidationError("tau must lie in [0, 0.05]");
  }
  const double third = 1.0 / 3.0;
  PiecewiseDistributionModel model;
  model.regions = {
      {third, {0.5, 0.4 - tau, 0.05, 0.05 + tau}, {0.5, 0.4, 0.05, 0.05}},
      {third, {0.3 - tau, 0.4 + tau, 0.2, 0.1}, {0.3, 0.4, 0.2, 0.1}},
      {third, {0.3 + tau, 0.3, 0.35, 0.05 - tau}, {0.3, 0.3, 0.35, 0.05}},
  };
  model.validate();
  return model;
}

PiecewiseDistributionModel binned_uniform_population(std::size_t class_count,
                                                     std::size_t bin_size) {
  if (class_count < 2) throw ValidationError("class_count must be at least 2");
  if (bin_size < 1) throw ValidationError("bin_size must be at least 1");
  const std::size_t k = class_count;
  const std::size_t b = bin_size;

  std::vector<double> factorial(b + 1, 1.0);
  for (std::size_t i = 1; i <= b; ++i) factorial[i] = factorial[i - 1] * static_cast<double>(i);
  const double draw_mass = std::pow(static_cast<double>(k), -static_cast<double>(b));

  PiecewiseDistributionModel model;
  std::vector<std::size_t> counts(k, 0);
  const auto emit = [&] {
    double ways = factorial[b];
    for (std::size_t j = 0; j < k; ++j) ways /= factorial[counts[j]];
    ModelRegion region;
    region.mass = ways * draw_mass;
    region.truth.assign(k, 1.0 / static_cast<double>(k));
    region.predicted.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      region.predicted[j] = static_cast<double>(counts[j]) / static_cast<double>(b);
    }
    model.regions.push_back(std::move(region));
  };
  // Enumerate count vectors summing to b in lexicographic order.
  const std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t j,
                                                                 std::size_t left) {
    if (j + 1 == k) {
      counts[j] = left;
      emit();
      return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
      counts[j] = c;
      walk(j + 1, left - c);
    }
  };
  walk(0, b);
  model.validate();
  return model;
}

std::vector<SweepRow> epsilon_sweep(const LabeledPredictionSet& preds,
                                    const std::vector<int>& bin_counts) {
  std::vector<SweepRow> rows;
  rows.reserve(bin_counts.size());
  for (int b : bin_counts) {
    const BinningScheme scheme =
        b == 0 ? BinningScheme::exact_value() : BinningScheme::fixed_width(b);
    rows.push_back({b, ace(preds, scheme), ece(preds, scheme)});
  }
  return rows;
}

std::vector<SweepRow> epsilon_sweep(const Matrix& probs, const Matrix& targets,
                                    const std::vector<int>& bin_counts) {
  std::vector<SweepRow> rows;
  rows.reserve(bin_counts.size());
  for (int b : bin_counts) {
    const BinningScheme scheme =
        b == 0 ? BinningScheme::exact_value() : BinningScheme::fixed_width(b);
    rows.push_back({b, ace(probs, targets, scheme), ece(probs, targets, scheme)});
  }
  return rows;
}

bool PropositionVerdicts::all_applicable_pass() const {
  for (const PropositionVerdict* v : {&p1, &p2, &p3, &p4}) {
    if (v->applicable && !v->pass) return false;
  }
  return true;
}

PropositionVerdicts verify_propositions(const EnsemblePredictions& ens,
                                        const CombinationWeights& w,
                                        const VerifyTolerances& tol) {
  const LabeledPredictionSet combined = combine(ens, w);
  const std::size_t m_count = ens.member_count();
  const std::size_t k = ens.class_count();
  const std::size_t n = ens.size();

  std::vector<GlobalGaps> member_gaps(m_count);
  std::vector<double> member_acc(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    const LabeledPredictionSet member{ens.members[m], ens.labels};
    member_gaps[m] = global_gaps(member);
    member_acc[m] = accuracy(member);
  }
  const GlobalGaps ens_gaps = global_gaps(combined);
  const double ens_acc = accuracy(combined);

  PropositionVerdicts verdicts;

  // P1: calibrated members and ensemble cannot make the ensemble beat the
  // average member accuracy beyond the calibration slack.
  {
    double worst_gap = std::abs(ens_gaps.top_label);
    for (std::size_t m = 0; m < m_count; ++m) {
      worst_gap = std::max(worst_gap, std::abs(member_gaps[m].top_label));
    }
    auto& p1 = verdicts.p1;
    p1.applicable = worst_gap <= tol.p1_calibration;
    double mean_acc = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) mean_acc += w.w[m] * member_acc[m];
    if (p1.applicable) {
      const double slack = 2.0 * tol.p1_calibration + tol.equality;
      p1.pass = ens_acc <= mean_acc + slack;
      p1.detail = "ensemble accuracy " + format_value(ens_acc) + " vs member mean " +
                  format_value(mean_acc) + " (slack " + format_value(slack) + ")";
    } else {
      p1.detail = "precondition unmet: top-label gap " + format_value(worst_gap) +
                  " exceeds " + format_value(tol.p1_calibration);
    }
  }

  // P2: gap linearity, always applicable.
  {
    auto& p2 = verdicts.p2;
    p2.applicable = true;
    double max_diff = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double expected = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) expected += w.w[m] * member_gaps[m].all_label[j];
      max_diff = std::max(max_diff, std::abs(ens_gaps.all_label[j] - expected));
    }
    p2.pass = max_diff <= tol.equality;
    p2.detail = "max |ensemble gap - weighted member gap| = " + format_value(max_diff);
  }

  // P3: shared exact-value regions. Partition samples by identical prediction
  // rows, canonicalized to first-occurrence ids so partitions compare across
  // members.
  {
    auto& p3 = verdicts.p3;
    std::vector<std::vector<std::size_t>> ids(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
      std::map<std::vector<std::uint64_t>, std::size_t> seen;
      ids[m].resize(n);
      std::vector<std::uint64_t> key(k);
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = ens.members[m].row(i);
        for (std::size_t j = 0; j < k; ++j) key[j] = canon_bits(row[j]);
        const auto [it, inserted] = seen.try_emplace(key, seen.size());
        ids[m][i] = it->second;
      }
    }
    bool shared = true;
    for (std::size_t m = 1; m < m_count && shared; ++m) shared = ids[m] == ids[0];
    p3.applicable = shared;
    if (!shared) {
      p3.detail = "precondition unmet: members do not share exact-value regions";
    } else {
      std::size_t region_count = 0;
      for (std::size_t id : ids[0]) region_count = std::max(region_count, id + 1);
      std::vector<std::vector<std::size_t>> members_of(region_count);
      for (std::size_t i = 0; i < n; ++i) members_of[ids[0][i]].push_back(i);
      double max_diff = 0.0;
      for (const auto& samples : members_of) {
        const double size = static_cast<double>(samples.size());
        for (std::size_t j = 0; j < k; ++j) {
          double ens_gap = 0.0;
          for (std::size_t i : samples) {
            ens_gap += combined.probs(i, j) -
                       (ens.labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0);
          }
          ens_gap /= size;
          double expected = 0.0;
          for (std::size_t m = 0; m < m_count; ++m) {
            double gap = 0.0;
            for (std::size_t i : samples) {
              gap += ens.members[m](i, j) -
                     (ens.labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0);
            }
            expected += w.w[m] * (gap / size);
          }
          max_diff = std::max(max_diff, std::abs(ens_gap - expected));
        }
      }
      p3.pass = max_diff <= tol.equality;
      p3.detail = std::to_string(region_count) + " shared regions, max gap difference " +
                  format_value(max_diff);
    }
  }

  // P4: constructive counterexample - calibrated members, uncalibrated
  // ensemble. No witness is "precondition unmet" because the claim is an
  // existence statement, not an implication.
  {
    auto& p4 = verdicts.p4;
    double worst_member = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) {
      worst_member = std::max(worst_member, std::abs(member_gaps[m].top_label));
    }
    const double ens_gap = std::abs(ens_gaps.top_label);
    const double threshold = std::max(tol.p4_witness_min, tol.p4_witness_factor * worst_member);
    if (worst_member <= tol.p4_member_gap_max && ens_gap > threshold) {
      p4.applicable = true;
      p4.pass = true;
      p4.detail = "witness: member top gaps <= " + format_value(worst_member) +
                  ", ensemble top gap " + format_value(ens_gaps.top_label);
    } else if (worst_member > tol.p4_member_gap_max) {
      p4.detail = "precondition unmet: member top-label gap " + format_value(worst_member) +
                  " exceeds " + format_value(tol.p4_member_gap_max);
    } else {
      p4.detail = "precondition unmet: no counterexample material (ensemble top gap " +
                  format_value(ens_gaps.top_label) + " below " + format_value(threshold) + ")";
    }
  }

  return verdicts;
}

}  // namespace calib
