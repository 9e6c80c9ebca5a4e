#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "calib/matrix.hpp"

namespace calib {

// Thrown when data violates a semantic invariant (shapes, ranges, simplex
// membership). Distinct from IoError so the CLI can map the two to different
// exit codes.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// N x K probability matrix plus true labels. Labels are 0-based everywhere in
// memory; the 1-based external convention is converted at the I/O boundary.
struct LabeledPredictionSet {
  Matrix probs;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return probs.rows(); }
  std::size_t class_count() const { return probs.cols(); }
};

// N x K unbounded logits plus true labels.
struct LogitSet {
  Matrix logits;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return logits.rows(); }
  std::size_t class_count() const { return logits.cols(); }
};

// M member probability matrices over the same samples and labels.
struct EnsemblePredictions {
  std::vector<Matrix> members;
  std::vector<std::int32_t> labels;

  std::size_t member_count() const { return members.size(); }
  std::size_t size() const { return members.empty() ? 0 : members.front().rows(); }
  std::size_t class_count() const { return members.empty() ? 0 : members.front().cols(); }
  LabeledPredictionSet member_set(std::size_t m) const { return {members.at(m), labels}; }
};

// M member logit matrices over the same samples and labels.
struct EnsembleLogits {
  std::vector<Matrix> members;
  std::vector<std::int32_t> labels;

  std::size_t member_count() const { return members.size(); }
  std::size_t size() const { return members.empty() ? 0 : members.front().rows(); }
  std::size_t class_count() const { return members.empty() ? 0 : members.front().cols(); }
  LogitSet member_set(std::size_t m) const { return {members.at(m), labels}; }
};

enum class BinningMode { FixedWidth, ExactValue };

// Probability-region scheme. Fixed-width mode partitions [0,1] into B bins
// where bin z (1-based) covers ((z-1)/B, z/B] and bin 1 additionally includes
// 0; centers are min{1,(2z-1)*epsilon}. Exact-value mode treats each distinct
// floating-point predicted probability as its own region.
struct BinningScheme {
  int bin_count = 15;
  BinningMode mode = BinningMode::FixedWidth;

  static BinningScheme fixed_width(int bins);
  static BinningScheme exact_value();

  double epsilon() const { return 0.5 / bin_count; }

  // 0-based bin index for p in [0,1] (fixed-width mode).
  int bin_of(double p) const;

  // Center of the 0-based bin.
  double center(int bin) const;

  void validate() const;
};

struct ValidationCheck {
  std::string name;
  bool pass = true;
  // First offending row, or -1 when the check passed / is not row-indexed.
  std::ptrdiff_t first_bad_row = -1;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationCheck> checks;
};

ValidationReport validate(const LabeledPredictionSet& preds);
ValidationReport validate(const LogitSet& logits);
ValidationReport validate(const EnsemblePredictions& ens);
ValidationReport validate(const EnsembleLogits& ens);

// Throws ValidationError with the first failing check's message.
void require_valid(const ValidationReport& report, const std::string& context);

// Row-wise exp/sum with max subtraction. Throws ValidationError on non-finite
// input. Output rows sum to 1 within 1e-12.
Matrix softmax_rows(const Matrix& logits);
LabeledPredictionSet softmax(const LogitSet& logits);

// Element-wise ln(max(p, floor)). softmax(log_probs(p)) recovers p within
// 1e-10 when every entry is at least the floor.
Matrix log_rows(const Matrix& probs, double floor = 1e-12);
LogitSet log_probs(const LabeledPredictionSet& preds, double floor = 1e-12);

// Softmax of one row with max subtraction, written into out. Returns false
// when the row contains a non-finite value. softmax_rows and temperature
// scaling both run this exact kernel so their outputs round identically.
bool softmax_row(std::span<const double> in, std::span<double> out);

// Lowest-index argmax.
std::size_t argmax_row(std::span<const double> row);
int argmax_row(const Matrix& m, std::size_t i);

}  // namespace calib
