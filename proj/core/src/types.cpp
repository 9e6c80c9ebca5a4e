#include "calib/types.hpp"

#include <cmath>
#include <cstdio>

namespace calib {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

void add_check(ValidationReport& report, ValidationCheck check) {
  if (!check.pass) report.ok = false;
  report.checks.push_back(std::move(check));
}

ValidationCheck check_shape(std::size_t n, std::size_t k, std::size_t label_count) {
  ValidationCheck c{"shape"};
  if (n < 1) {
    c.pass = false;
    c.message = "empty set (N must be >= 1)";
  } else if (k < 2) {
    c.pass = false;
    c.message = "K must be >= 2, got " + std::to_string(k);
  } else if (label_count != n) {
    c.pass = false;
    c.message = "label count " + std::to_string(label_count) + " does not match N " +
                std::to_string(n);
  }
  return c;
}

ValidationCheck check_labels(const std::vector<std::int32_t>& labels, std::size_t k) {
  ValidationCheck c{"label_range"};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      c.pass = false;
      c.first_bad_row = static_cast<std::ptrdiff_t>(i);
      c.message = "label out of range at row " + std::to_string(i);
      break;
    }
  }
  return c;
}

ValidationCheck check_finite(const Matrix& m) {
  ValidationCheck c{"finite"};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (double v : m.row(i)) {
      if (!std::isfinite(v)) {
        c.pass = false;
        c.first_bad_row = static_cast<std::ptrdiff_t>(i);
        c.message = "non-finite entry at row " + std::to_string(i);
        return c;
      }
    }
  }
  return c;
}

ValidationCheck check_entry_range(const Matrix& m) {
  ValidationCheck c{"entry_range"};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (double v : m.row(i)) {
      if (!(v >= 0.0 && v <= 1.0)) {
        c.pass = false;
        c.first_bad_row = static_cast<std::ptrdiff_t>(i);
        c.message = "entry " + format_double(v) + " outside [0,1] at row " + std::to_string(i);
        return c;
      }
    }
  }
  return c;
}

ValidationCheck check_row_sums(const Matrix& m, double tol) {
  ValidationCheck c{"row_sum"};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (double v : m.row(i)) sum += v;
    if (std::abs(sum - 1.0) > tol) {
      c.pass = false;
      c.first_bad_row = static_cast<std::ptrdiff_t>(i);
      c.message = "row " + std::to_string(i) + " sums to " + format_double(sum);
      return c;
    }
  }
  return c;
}

}  // namespace

BinningScheme BinningScheme::fixed_width(int bins) {
  BinningScheme s;
  s.bin_count = bins;
  s.mode = BinningMode::FixedWidth;
  s.validate();
  return s;
}

BinningScheme BinningScheme::exact_value() {
  BinningScheme s;
  s.mode = BinningMode::ExactValue;
  return s;
}

void BinningScheme::validate() const {
  if (mode == BinningMode::FixedWidth && bin_count < 1) {
    throw ValidationError("bin_count must be >= 1");
  }
}

int BinningScheme::bin_of(double p) const {
  // p in ((z-1)/B, z/B] maps to z; 0 folds into bin 1.
  int z = static_cast<int>(std::ceil(p * bin_count));
  if (z < 1) z = 1;
  if (z > bin_count) z = bin_count;
  return z - 1;
}

double BinningScheme::center(int bin) const {
  const double c = (2.0 * (bin + 1) - 1.0) * epsilon();
  return c < 1.0 ? c : 1.0;
}

ValidationReport validate(const LabeledPredictionSet& preds) {
  ValidationReport report;
  add_check(report, check_shape(preds.probs.rows(), preds.probs.cols(), preds.labels.size()));
  add_check(report, check_labels(preds.labels, preds.probs.cols()));
  add_check(report, check_finite(preds.probs));
  add_check(report, check_entry_range(preds.probs));
  add_check(report, check_row_sums(preds.probs, 1e-9));
  return report;
}

ValidationReport validate(const LogitSet& logits) {
  ValidationReport report;
  add_check(report, check_shape(logits.logits.rows(), logits.logits.cols(), logits.labels.size()));
  add_check(report, check_labels(logits.labels, logits.logits.cols()));
  add_check(report, check_finite(logits.logits));
  return report;
}

namespace {

template <typename Ensemble>
ValidationReport validate_ensemble(const Ensemble& ens, bool probability_members) {
  ValidationReport report;
  ValidationCheck members{"members"};
  if (ens.members.empty()) {
    members.pass = false;
    members.message = "ensemble has no members";
  } else {
    const std::size_t n = ens.members.front().rows();
    const std::size_t k = ens.members.front().cols();
    for (std::size_t m = 1; m < ens.members.size(); ++m) {
      if (ens.members[m].rows() != n || ens.members[m].cols() != k) {
        members.pass = false;
        members.message = "member " + std::to_string(m) + " shape differs from member 0";
        break;
      }
    }
  }
  add_check(report, members);
  if (!members.pass) return report;

  add_check(report, check_shape(ens.size(), ens.class_count(), ens.labels.size()));
  add_check(report, check_labels(ens.labels, ens.class_count()));
  for (std::size_t m = 0; m < ens.members.size(); ++m) {
    ValidationCheck c = check_finite(ens.members[m]);
    c.name = "finite_member_" + std::to_string(m);
    add_check(report, c);
    if (probability_members) {
      ValidationCheck r = check_row_sums(ens.members[m], 1e-9);
      r.name = "row_sum_member_" + std::to_string(m);
      add_check(report, r);
    }
  }
  return report;
}

}  // namespace

ValidationReport validate(const EnsemblePredictions& ens) { return validate_ensemble(ens, true); }

ValidationReport validate(const EnsembleLogits& ens) { return validate_ensemble(ens, false); }

void require_valid(const ValidationReport& report, const std::string& context) {
  if (report.ok) return;
  for (const auto& check : report.checks) {
    if (!check.pass) {
      throw ValidationError(context + ": " + check.message);
    }
  }
  throw ValidationError(context + ": validation failed");
}

bool softmax_row(std::span<const double> in, std::span<double> out) {
  double mx = in[0];
  for (double v : in) {
    if (!std::isfinite(v)) return false;
    if (v > mx) mx = v;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  for (std::size_t j = 0; j < in.size(); ++j) out[j] /= sum;
  return true;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!softmax_row(logits.row(i), out.row(i))) {
      throw ValidationError("softmax: non-finite logit at row " + std::to_string(i));
    }
  }
  return out;
}

LabeledPredictionSet softmax(const LogitSet& logits) {
  return {softmax_rows(logits.logits), logits.labels};
}

Matrix log_rows(const Matrix& probs, double floor) {
  if (!(floor > 0.0)) throw ValidationError("log_probs floor must be > 0");
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto in = probs.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < in.size(); ++j) {
      dst[j] = std::log(in[j] > floor ? in[j] : floor);
    }
  }
  return out;
}

LogitSet log_probs(const LabeledPredictionSet& preds, double floor) {
  return {log_rows(preds.probs, floor), preds.labels};
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

int argmax_row(const Matrix& m, std::size_t i) { return static_cast<int>(argmax_row(m.row(i))); }

}  // namespace calib
