#include "calib/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>

namespace calib {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'L', 'T'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 2 + 1 + 1 + 8 + 4 + 4;

// Little-endian scalar packing, independent of host byte order.
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw IoError(IoErrorCode::TruncatedPayload,
                    std::string("file ends inside ") + what);
    }
  }

  std::uint16_t u16() {
    need(2, "header");
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_]) |
                      static_cast<std::uint16_t>(data_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }

  std::uint8_t u8() {
    need(1, "header");
    return data_[pos_++];
  }

  std::uint32_t u32() {
    need(4, "header");
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(data_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8, "header");
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(data_[pos_ + b]) << (8 * b);
    pos_ += 8;
    return v;
  }

  double f64() {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(data_[pos_ + b]) << (8 * b);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void skip_magic() {
    need(4, "magic");
    if (std::memcmp(data_ + pos_, kMagic, 4) != 0) {
      throw IoError(IoErrorCode::BadMagic, "expected CALT magic bytes");
    }
    pos_ += 4;
  }

private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::FileNotFound, "cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError(IoErrorCode::TruncatedPayload, "short read on " + path);
  return buf;
}

Dataset parse_binary(const std::vector<unsigned char>& buf, const std::string& path) {
  Reader r(buf.data(), buf.size());
  r.skip_magic();
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw IoError(IoErrorCode::UnsupportedVersion,
                  "format version " + std::to_string(version) + " in " + path);
  }
  const std::uint8_t kind = r.u8();
  if (kind > 1) {
    throw IoError(IoErrorCode::MalformedHeader, "unknown kind byte " + std::to_string(kind));
  }
  const std::uint8_t reserved = r.u8();
  if (reserved != 0) {
    throw IoError(IoErrorCode::MalformedHeader, "reserved byte must be 0");
  }
  const std::uint64_t n = r.u64();
  const std::uint32_t k = r.u32();
  const std::uint32_t m = r.u32();
  if (n < 1 || k < 2 || m < 1) {
    throw IoError(IoErrorCode::MalformedHeader,
                  "invalid dimensions N=" + std::to_string(n) + " K=" + std::to_string(k) +
                      " M=" + std::to_string(m));
  }

  // Guard the size arithmetic before trusting the header.
  const std::uint64_t payload = r.remaining();
  const std::uint64_t want_labels = n * 4;
  if (n > payload || k > payload || m > payload ||
      payload < want_labels ||
      (payload - want_labels) / 8 / k / n != m ||
      (payload - want_labels) != static_cast<std::uint64_t>(m) * n * k * 8) {
    throw IoError(IoErrorCode::TruncatedPayload,
                  "payload size does not match header of " + path);
  }

  Dataset data;
  data.kind = kind == 0 ? FileKind::Probs : FileKind::Logits;
  data.members.reserve(m);
  for (std::uint32_t mem = 0; mem < m; ++mem) {
    Matrix mat(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = mat.row(i);
      for (std::size_t j = 0; j < k; ++j) row[j] = r.f64();
    }
    data.members.push_back(std::move(mat));
  }
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = r.u32();
    if (label < 1 || label > k) {
      throw IoError(IoErrorCode::BadLabel,
                    "label " + std::to_string(label) + " out of 1.." + std::to_string(k) +
                        " at row " + std::to_string(i));
    }
    data.labels[i] = static_cast<std::int32_t>(label - 1);
  }
  if (data.kind == FileKind::Probs) {
    for (auto& member : data.members) {
      data.renormalized_rows += normalize_probability_rows(member);
    }
  }
  return data;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_value(const std::string& field, std::size_t row) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw IoError(IoErrorCode::BadValue, "cannot parse '" + field + "' at row " +
                                             std::to_string(row));
  }
  return v;
}

Dataset parse_csv(const std::vector<unsigned char>& buf, const std::string& path) {
  std::vector<std::string> lines;
  {
    std::string current;
    for (unsigned char ch : buf) {
      if (ch == '\n') {
        if (!current.empty() && current.back() == '\r') current.pop_back();
        lines.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(static_cast<char>(ch));
      }
    }
    if (!current.empty()) {
      if (current.back() == '\r') current.pop_back();
      lines.push_back(std::move(current));
    }
  }
  if (lines.empty()) {
    throw IoError(IoErrorCode::MalformedHeader, "empty file " + path);
  }

  const auto header = split_fields(lines[0]);
  if (header.size() < 3 || header[0] != "label") {
    throw IoError(IoErrorCode::MalformedHeader,
                  "expected header 'label,<c1..cK|z1..zK>' in " + path);
  }
  const std::size_t k = header.size() - 1;
  const bool logits = !header[1].empty() && header[1][0] == 'z';

  Dataset data;
  data.kind = logits ? FileKind::Logits : FileKind::Probs;
  std::size_t n = 0;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    if (!lines[l].empty()) ++n;
  }
  if (n == 0) {
    throw IoError(IoErrorCode::MalformedHeader, "no data rows in " + path);
  }

  Matrix mat(n, k);
  data.labels.resize(n);
  std::size_t row = 0;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    if (lines[l].empty()) continue;
    const auto fields = split_fields(lines[l]);
    if (fields.size() != k + 1) {
      throw IoError(IoErrorCode::RowLengthMismatch,
                    "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(k + 1));
    }
    const char* begin = fields[0].c_str();
    char* end = nullptr;
    const long label = std::strtol(begin, &end, 10);
    if (end == begin || *end != '\0') {
      throw IoError(IoErrorCode::BadValue,
                    "cannot parse label '" + fields[0] + "' at row " + std::to_string(row));
    }
    if (label < 1 || static_cast<std::size_t>(label) > k) {
      throw IoError(IoErrorCode::BadLabel, "label " + std::to_string(label) + " out of 1.." +
                                               std::to_string(k) + " at row " +
                                               std::to_string(row));
    }
    data.labels[row] = static_cast<std::int32_t>(label - 1);
    auto dst = mat.row(row);
    for (std::size_t j = 0; j < k; ++j) dst[j] = parse_value(fields[j + 1], row);
    ++row;
  }
  if (data.kind == FileKind::Probs) {
    data.renormalized_rows = normalize_probability_rows(mat);
  }
  data.members.push_back(std::move(mat));
  return data;
}

}  // namespace

const char* to_string(IoErrorCode code) {
  switch (code) {
    case IoErrorCode::FileNotFound: return "file not found";
    case IoErrorCode::BadMagic: return "bad magic";
    case IoErrorCode::UnsupportedVersion: return "unsupported version";
    case IoErrorCode::MalformedHeader: return "malformed header";
    case IoErrorCode::RowLengthMismatch: return "row length mismatch";
    case IoErrorCode::TruncatedPayload: return "truncated payload";
    case IoErrorCode::BadLabel: return "bad label";
    case IoErrorCode::BadValue: return "bad value";
    case IoErrorCode::CsvUnsupportedEnsemble: return "csv cannot hold ensembles";
    case IoErrorCode::WriteFailure: return "write failure";
  }
  return "io error";
}

std::size_t normalize_probability_rows(Matrix& probs, double tol) {
  std::size_t fixed = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto row = probs.row(i);
    double sum = 0.0;
    for (double v : row) sum += v;
    const double off = std::abs(sum - 1.0);
    // Valid rows (within the 1e-9 validation tolerance) are left untouched so
    // binary round trips stay bit-exact.
    if (off <= 1e-9) continue;
    if (!(off <= tol)) {
      char msg[96];
      std::snprintf(msg, sizeof(msg), "row %zu sums to %.17g", i, sum);
      throw IoError(IoErrorCode::BadValue, msg);
    }
    for (double& v : row) v /= sum;
    ++fixed;
  }
  return fixed;
}

LabeledPredictionSet Dataset::prediction_set(std::size_t m) const {
  if (kind != FileKind::Probs) {
    throw ValidationError("dataset holds logits, not probabilities");
  }
  return {members.at(m), labels};
}

LogitSet Dataset::logit_set(std::size_t m) const {
  if (kind != FileKind::Logits) {
    throw ValidationError("dataset holds probabilities, not logits");
  }
  return {members.at(m), labels};
}

EnsemblePredictions Dataset::ensemble() const {
  if (kind != FileKind::Probs) {
    throw ValidationError("dataset holds logits, not probabilities");
  }
  return {members, labels};
}

EnsembleLogits Dataset::logit_ensemble() const {
  if (kind != FileKind::Logits) {
    throw ValidationError("dataset holds probabilities, not logits");
  }
  return {members, labels};
}

Dataset Dataset::from(const LabeledPredictionSet& preds) {
  Dataset d;
  d.kind = FileKind::Probs;
  d.members.push_back(preds.probs);
  d.labels = preds.labels;
  return d;
}

Dataset Dataset::from(const LogitSet& logits) {
  Dataset d;
  d.kind = FileKind::Logits;
  d.members.push_back(logits.logits);
  d.labels = logits.labels;
  return d;
}

Dataset Dataset::from(const EnsemblePredictions& ens) {
  Dataset d;
  d.kind = FileKind::Probs;
  d.members = ens.members;
  d.labels = ens.labels;
  return d;
}

Dataset Dataset::from(const EnsembleLogits& ens) {
  Dataset d;
  d.kind = FileKind::Logits;
  d.members = ens.members;
  d.labels = ens.labels;
  return d;
}

FileFormat format_for_path(const std::string& path) {
  if (path.size() >= 4) {
    std::string ext = path.substr(path.size() - 4);
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".csv") return FileFormat::Csv;
  }
  return FileFormat::Binary;
}

Dataset load_predictions(const std::string& path, FileFormat format) {
  const auto buf = read_file(path);
  return format == FileFormat::Binary ? parse_binary(buf, path) : parse_csv(buf, path);
}

Dataset load_predictions(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() >= 4 && std::memcmp(buf.data(), kMagic, 4) == 0) {
    return parse_binary(buf, path);
  }
  return parse_csv(buf, path);
}

void store_predictions(const Dataset& data, const std::string& path, FileFormat format) {
  if (data.members.empty() || data.labels.size() != data.size()) {
    throw ValidationError("dataset shape is inconsistent");
  }
  std::string out;
  if (format == FileFormat::Binary) {
    const std::size_t n = data.size();
    const std::size_t k = data.class_count();
    out.reserve(kHeaderSize + data.member_count() * n * k * 8 + n * 4);
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    out.push_back(data.kind == FileKind::Probs ? 0 : 1);
    out.push_back(0);
    put_u64(out, n);
    put_u32(out, static_cast<std::uint32_t>(k));
    put_u32(out, static_cast<std::uint32_t>(data.member_count()));
    for (const auto& member : data.members) {
      if (member.rows() != n || member.cols() != k) {
        throw ValidationError("ensemble members have mismatched shapes");
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (double v : member.row(i)) put_f64(out, v);
      }
    }
    for (std::int32_t label : data.labels) {
      put_u32(out, static_cast<std::uint32_t>(label + 1));
    }
  } else {
    if (data.member_count() != 1) {
      throw IoError(IoErrorCode::CsvUnsupportedEnsemble,
                    "csv stores a single member, use the binary format");
    }
    const std::size_t k = data.class_count();
    const char prefix = data.kind == FileKind::Probs ? 'c' : 'z';
    out = "label";
    for (std::size_t j = 1; j <= k; ++j) {
      out.push_back(',');
      out.push_back(prefix);
      out += std::to_string(j);
    }
    out.push_back('\n');
    char buf[40];
    const Matrix& mat = data.members.front();
    for (std::size_t i = 0; i < data.size(); ++i) {
      out += std::to_string(data.labels[i] + 1);
      for (double v : mat.row(i)) {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        out += buf;
      }
      out.push_back('\n');
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError(IoErrorCode::WriteFailure, "cannot open " + path + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  file.flush();
  if (!file) throw IoError(IoErrorCode::WriteFailure, "short write to " + path);
}

}  // namespace calib
