#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "calib/types.hpp"

namespace calib {

enum class FileFormat { Binary, Csv };
enum class FileKind { Probs, Logits };

enum class IoErrorCode {
  FileNotFound,
  BadMagic,
  UnsupportedVersion,
  MalformedHeader,
  RowLengthMismatch,
  TruncatedPayload,
  BadLabel,
  BadValue,
  CsvUnsupportedEnsemble,
  WriteFailure,
};

const char* to_string(IoErrorCode code);

class IoError : public std::runtime_error {
public:
  IoError(IoErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}
  IoErrorCode code() const { return code_; }

private:
  IoErrorCode code_;
};

// What a prediction file holds: M matrices of probabilities or logits over the
// same N samples, plus labels. Labels are 1-based on disk and 0-based here.
struct Dataset {
  FileKind kind = FileKind::Probs;
  std::vector<Matrix> members;
  std::vector<std::int32_t> labels;
  // Rows whose probability sum was off by <= 1e-6 and got renormalized on
  // load. Callers may want to warn when nonzero.
  std::size_t renormalized_rows = 0;

  std::size_t member_count() const { return members.size(); }
  std::size_t size() const { return members.empty() ? 0 : members.front().rows(); }
  std::size_t class_count() const { return members.empty() ? 0 : members.front().cols(); }

  LabeledPredictionSet prediction_set(std::size_t m = 0) const;
  LogitSet logit_set(std::size_t m = 0) const;
  EnsemblePredictions ensemble() const;
  EnsembleLogits logit_ensemble() const;

  static Dataset from(const LabeledPredictionSet& preds);
  static Dataset from(const LogitSet& logits);
  static Dataset from(const EnsemblePredictions& ens);
  static Dataset from(const EnsembleLogits& ens);
};

// Loads a prediction file, sniffing the binary magic and falling back to CSV.
Dataset load_predictions(const std::string& path);
Dataset load_predictions(const std::string& path, FileFormat format);

// Stores a dataset. Binary round-trips bit-exactly; CSV renders values with 17
// significant digits so doubles survive the decimal round trip. CSV carries a
// single member only.
void store_predictions(const Dataset& data, const std::string& path, FileFormat format);

// Format for the given path: .csv means CSV, everything else binary.
FileFormat format_for_path(const std::string& path);

// Renormalizes probability rows whose sum deviates from 1 by at most tol;
// larger deviations throw IoError(BadValue). Returns the renormalized count.
std::size_t normalize_probability_rows(Matrix& probs, double tol = 1e-6);

}  // namespace calib
