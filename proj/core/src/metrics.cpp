#include "calib/metrics.hpp"

#include "calib/parallel.hpp"
#include "kahan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>

namespace calib {

namespace {

std::uint64_t canon_bits(double p) {
  if (p == 0.0) p = 0.0;  // fold -0.0 into +0.0
  return std::bit_cast<std::uint64_t>(p);
}

struct HardTarget {
  const std::vector<std::int32_t>& labels;
  double operator()(std::size_t i, std::size_t j) const {
    return labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0;
  }
};

struct SoftTarget {
  const Matrix& targets;
  double operator()(std::size_t i, std::size_t j) const { return targets(i, j); }
};

// One element of a region: sample i contributes (prob - target) to the cell
// of class `cls` in the region keyed by `bits`.
struct Term {
  std::uint64_t bits;
  std::uint32_t cls;
  std::uint32_t idx;
};

struct ErrorPair {
  double outside = 0.0;  // |.| outside the class sum (ace / ece numerator)
  double inside = 0.0;   // |.| inside the class sum (acce / ecce numerator)
};

// Reduce per-(region, class) cell sums into the two aggregate forms. Cells
// arrive grouped by region, each region contiguous in class order.
template <class TargetFn>
ErrorPair reduce_terms(std::vector<Term>& terms, const Matrix& probs, TargetFn target) {
  std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) {
    if (a.bits != b.bits) return a.bits < b.bits;
    if (a.cls != b.cls) return a.cls < b.cls;
    return a.idx < b.idx;
  });
  Kahan outside, inside;
  std::size_t pos = 0;
  while (pos < terms.size()) {
    const std::uint64_t bits = terms[pos].bits;
    Kahan region;
    while (pos < terms.size() && terms[pos].bits == bits) {
      const std::uint32_t cls = terms[pos].cls;
      Kahan cell;
      while (pos < terms.size() && terms[pos].bits == bits && terms[pos].cls == cls) {
        const std::size_t i = terms[pos].idx;
        cell.add(probs(i, cls) - target(i, cls));
        ++pos;
      }
      region.add(cell.sum);
      inside.add(std::abs(cell.sum));
    }
    outside.add(std::abs(region.sum));
  }
  return {outside.sum, inside.sum};
}

template <class TargetFn>
ErrorPair all_label_errors(const Matrix& probs, TargetFn target, const BinningScheme& scheme) {
  scheme.validate();
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  if (scheme.mode == BinningMode::FixedWidth) {
    const std::size_t b = scheme.bin_count;
    std::vector<Kahan> cells(b * k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = probs.row(i);
      for (std::size_t j = 0; j < k; ++j) {
        cells[scheme.bin_of(row[j]) * k + j].add(row[j] - target(i, j));
      }
    }
    Kahan outside, inside;
    for (std::size_t z = 0; z < b; ++z) {
      Kahan region;
      for (std::size_t j = 0; j < k; ++j) {
        const double cell = cells[z * k + j].sum;
        region.add(cell);
        inside.add(std::abs(cell));
      }
      outside.add(std::abs(region.sum));
    }
    return {outside.sum, inside.sum};
  }
  std::vector<Term> terms;
  terms.reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      terms.push_back({canon_bits(row[j]), static_cast<std::uint32_t>(j),
                       static_cast<std::uint32_t>(i)});
    }
  }
  return reduce_terms(terms, probs, target);
}

template <class TargetFn>
ErrorPair top_label_errors(const Matrix& probs, TargetFn target, const BinningScheme& scheme) {
  scheme.validate();
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  if (scheme.mode == BinningMode::FixedWidth) {
    const std::size_t b = scheme.bin_count;
    std::vector<Kahan> cells(b * k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = probs.row(i);
      const std::size_t j = argmax_row(row);
      cells[scheme.bin_of(row[j]) * k + j].add(row[j] - target(i, j));
    }
    Kahan outside, inside;
    for (std::size_t z = 0; z < b; ++z) {
      Kahan region;
      for (std::size_t j = 0; j < k; ++j) {
        const double cell = cells[z * k + j].sum;
        region.add(cell);
        inside.add(std::abs(cell));
      }
      outside.add(std::abs(region.sum));
    }
    return {outside.sum, inside.sum};
  }
  std::vector<Term> terms;
  terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    const std::size_t j = argmax_row(row);
    terms.push_back({canon_bits(row[j]), static_cast<std::uint32_t>(j),
                     static_cast<std::uint32_t>(i)});
  }
  return reduce_terms(terms, probs, target);
}

template <class TargetFn>
GlobalGaps gaps_impl(const Matrix& probs, TargetFn target) {
  const std::size_t n = probs.rows();
  const std::size_t k = probs.cols();
  GlobalGaps gaps;
  gaps.all_label.resize(k);
  std::vector<Kahan> per_class(k);
  Kahan top;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.row(i);
    for (std::size_t j = 0; j < k; ++j) per_class[j].add(row[j] - target(i, j));
    const std::size_t j = argmax_row(row);
    top.add(row[j] - target(i, j));
  }
  for (std::size_t j = 0; j < k; ++j) gaps.all_label[j] = per_class[j].sum / static_cast<double>(n);
  gaps.top_label = top.sum / static_cast<double>(n);
  return gaps;
}

void check_target_shape(const Matrix& probs, const Matrix& targets) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
    throw ValidationError("targets must match the prediction matrix shape");
  }
}

std::vector<std::size_t> stride_sample(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> rows;
  if (cap == 0 || n <= cap) {
    rows.resize(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
  }
  const std::size_t stride = (n + cap - 1) / cap;
  for (std::size_t i = 0; i < n; i += stride) rows.push_back(i);
  return rows;
}

}  // namespace

RegionIndex assign_regions(const LabeledPredictionSet& preds, const BinningScheme& scheme,
                           bool top_label) {
  scheme.validate();
  const std::size_t n = preds.size();
  const std::size_t k = preds.class_count();
  RegionIndex index;
  index.top_label = top_label;
  index.scheme = scheme;
  if (scheme.mode == BinningMode::FixedWidth) {
    const std::size_t b = scheme.bin_count;
    std::vector<std::vector<std::size_t>> buckets(b * k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = preds.probs.row(i);
      if (top_label) {
        const std::size_t j = argmax_row(row);
        buckets[scheme.bin_of(row[j]) * k + j].push_back(i);
      } else {
        for (std::size_t j = 0; j < k; ++j) buckets[scheme.bin_of(row[j]) * k + j].push_back(i);
      }
    }
    for (std::size_t z = 0; z < b; ++z) {
      for (std::size_t j = 0; j < k; ++j) {
        auto& bucket = buckets[z * k + j];
        if (bucket.empty()) continue;
        index.cells.push_back({j, scheme.center(z), std::move(bucket)});
      }
    }
  } else {
    std::map<std::pair<std::uint64_t, std::size_t>, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = preds.probs.row(i);
      if (top_label) {
        const std::size_t j = argmax_row(row);
        buckets[{canon_bits(row[j]), j}].push_back(i);
      } else {
        for (std::size_t j = 0; j < k; ++j) buckets[{canon_bits(row[j]), j}].push_back(i);
      }
    }
    for (auto& [key, samples] : buckets) {
      index.cells.push_back(
          {key.second, std::bit_cast<double>(key.first), std::move(samples)});
    }
  }
  return index;
}

double ace(const LabeledPredictionSet& preds, const BinningScheme& scheme) {
  const auto pair = all_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  return pair.outside / static_cast<double>(preds.size() * preds.class_count());
}

double acce(const LabeledPredictionSet& preds, const BinningScheme& scheme) {
  const auto pair = all_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  return pair.inside / static_cast<double>(preds.size() * preds.class_count());
}

double ece(const LabeledPredictionSet& preds, const BinningScheme& scheme) {
  const auto pair = top_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  return pair.outside / static_cast<double>(preds.size());
}

double ecce(const LabeledPredictionSet& preds, const BinningScheme& scheme) {
  const auto pair = top_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  return pair.inside / static_cast<double>(preds.size());
}

double ace(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme) {
  check_target_shape(probs, targets);
  const auto pair = all_label_errors(probs, SoftTarget{targets}, scheme);
  return pair.outside / static_cast<double>(probs.rows() * probs.cols());
}

double acce(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme) {
  check_target_shape(probs, targets);
  const auto pair = all_label_errors(probs, SoftTarget{targets}, scheme);
  return pair.inside / static_cast<double>(probs.rows() * probs.cols());
}

double ece(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme) {
  check_target_shape(probs, targets);
  const auto pair = top_label_errors(probs, SoftTarget{targets}, scheme);
  return pair.outside / static_cast<double>(probs.rows());
}

double ecce(const Matrix& probs, const Matrix& targets, const BinningScheme& scheme) {
  check_target_shape(probs, targets);
  const auto pair = top_label_errors(probs, SoftTarget{targets}, scheme);
  return pair.inside / static_cast<double>(probs.rows());
}

GlobalGaps global_gaps(const LabeledPredictionSet& preds) {
  return gaps_impl(preds.probs, HardTarget{preds.labels});
}

GlobalGaps global_gaps(const Matrix& probs, const Matrix& targets) {
  check_target_shape(probs, targets);
  return gaps_impl(probs, SoftTarget{targets});
}

double accuracy(const LabeledPredictionSet& preds) {
  const std::size_t n = preds.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<std::int32_t>(argmax_row(preds.probs.row(i))) == preds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double nll(const LabeledPredictionSet& preds) {
  constexpr double kFloor = 1e-12;
  const std::size_t n = preds.size();
  Kahan total;
  for (std::size_t i = 0; i < n; ++i) {
    total.add(-std::log(std::max(preds.probs(i, static_cast<std::size_t>(preds.labels[i])),
                                 kFloor)));
  }
  return total.sum / static_cast<double>(n);
}

SkceResult skce_uq(const LabeledPredictionSet& preds, const SkceOptions& options) {
  const std::size_t n_total = preds.size();
  if (n_total < 2) throw ValidationError("skce_uq needs at least 2 samples");
  if (options.bandwidth && !(*options.bandwidth > 0.0)) {
    throw ValidationError("skce_uq bandwidth must be positive");
  }
  const std::size_t k = preds.class_count();
  const auto rows = stride_sample(n_total, options.subsample_cap);
  const std::size_t n = rows.size();
  if (n < 2) throw ValidationError("skce_uq needs at least 2 samples after subsampling");

  const auto l1 = [&](std::size_t a, std::size_t b) {
    const auto pa = preds.probs.row(a);
    const auto pb = preds.probs.row(b);
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) d += std::abs(pa[j] - pb[j]);
    return d;
  };

  SkceResult result;
  result.subsampled = n < n_total;
  result.rows_used = n;
  if (options.bandwidth) {
    result.bandwidth = *options.bandwidth;
  } else {
    const auto med_rows = stride_sample(n, 1000);
    std::vector<double> dists;
    dists.reserve(med_rows.size() * (med_rows.size() - 1) / 2);
    for (std::size_t a = 0; a + 1 < med_rows.size(); ++a) {
      for (std::size_t b = a + 1; b < med_rows.size(); ++b) {
        dists.push_back(l1(rows[med_rows[a]], rows[med_rows[b]]));
      }
    }
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    result.bandwidth = *mid > 0.0 ? *mid : 1.0;
  }

  const double nu = result.bandwidth;
  const std::size_t chunk = 16;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<double> partial(chunks, 0.0);
  for_chunks(n, chunk, [&](std::size_t chunk_idx, std::size_t begin, std::size_t end) {
    Kahan local;
    for (std::size_t a = begin; a < end; ++a) {
      const std::size_t i = rows[a];
      const auto pi = preds.probs.row(i);
      const std::int32_t yi = preds.labels[i];
      for (std::size_t b = a + 1; b < n; ++b) {
        const std::size_t j = rows[b];
        const auto pj = preds.probs.row(j);
        const std::int32_t yj = preds.labels[j];
        double dist = 0.0;
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          dist += std::abs(pi[c] - pj[c]);
          dot += pi[c] * pj[c];
        }
        const double agreement = (yi == yj ? 1.0 : 0.0) -
                                 pi[static_cast<std::size_t>(yj)] -
                                 pj[static_cast<std::size_t>(yi)] + dot;
        local.add(std::exp(-dist / nu) * agreement);
      }
    }
    partial[chunk_idx] = local.sum;
  });
  Kahan total;
  for (double p : partial) total.add(p);
  result.value = 2.0 * total.sum / (static_cast<double>(n) * static_cast<double>(n - 1));
  return result;
}

ReliabilityCurve reliability(const LabeledPredictionSet& preds, const BinningScheme& scheme) {
  scheme.validate();
  const std::size_t n = preds.size();
  ReliabilityCurve curve;
  curve.scheme = scheme;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (scheme.mode == BinningMode::FixedWidth) {
    const std::size_t b = scheme.bin_count;
    std::vector<Kahan> conf(b);
    std::vector<std::size_t> hits(b), counts(b);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = preds.probs.row(i);
      const std::size_t j = argmax_row(row);
      const std::size_t z = scheme.bin_of(row[j]);
      conf[z].add(row[j]);
      counts[z] += 1;
      if (static_cast<std::int32_t>(j) == preds.labels[i]) hits[z] += 1;
    }
    curve.bins.resize(b);
    for (std::size_t z = 0; z < b; ++z) {
      auto& bin = curve.bins[z];
      bin.center = scheme.center(z);
      bin.count = counts[z];
      bin.occupancy = static_cast<double>(counts[z]) / static_cast<double>(n);
      if (counts[z] == 0) {
        bin.confidence = nan;
        bin.accuracy = nan;
      } else {
        bin.confidence = conf[z].sum / static_cast<double>(counts[z]);
        bin.accuracy = static_cast<double>(hits[z]) / static_cast<double>(counts[z]);
      }
    }
    return curve;
  }
  std::map<std::uint64_t, std::pair<std::size_t, std::size_t>> groups;  // value -> (count, hits)
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = preds.probs.row(i);
    const std::size_t j = argmax_row(row);
    auto& slot = groups[canon_bits(row[j])];
    slot.first += 1;
    if (static_cast<std::int32_t>(j) == preds.labels[i]) slot.second += 1;
  }
  for (const auto& [bits, slot] : groups) {
    ReliabilityBin bin;
    bin.center = std::bit_cast<double>(bits);
    bin.count = slot.first;
    bin.occupancy = static_cast<double>(slot.first) / static_cast<double>(n);
    bin.confidence = bin.center;
    bin.accuracy = static_cast<double>(slot.second) / static_cast<double>(slot.first);
    curve.bins.push_back(bin);
  }
  return curve;
}

MetricReport compute_metrics(const LabeledPredictionSet& preds, const BinningScheme& scheme,
                             const SkceOptions& skce_options, bool with_skce) {
  MetricReport report;
  report.accuracy = accuracy(preds);
  report.nll = nll(preds);
  const auto all = all_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  const auto top = top_label_errors(preds.probs, HardTarget{preds.labels}, scheme);
  const double nk = static_cast<double>(preds.size() * preds.class_count());
  const double n = static_cast<double>(preds.size());
  report.ace = all.outside / nk;
  report.acce = all.inside / nk;
  report.ece = top.outside / n;
  report.ecce = top.inside / n;
  if (with_skce) {
    const auto skce = skce_uq(preds, skce_options);
    report.skce = skce.value;
    report.skce_bandwidth = skce.bandwidth;
    report.skce_subsampled = skce.subsampled;
  } else {
    report.skce = std::numeric_limits<double>::quiet_NaN();
    report.skce_bandwidth = std::numeric_limits<double>::quiet_NaN();
  }
  auto gaps = global_gaps(preds);
  report.global_gap_all_label = std::move(gaps.all_label);
  report.global_gap_top_label = gaps.top_label;
  report.bin_count = scheme.mode == BinningMode::FixedWidth ? scheme.bin_count : 0;
  return report;
}

}  // namespace calib
