#include "calib/io.hpp"
#include "calib/matrix.hpp"
#include "calib/parallel.hpp"
#include "calib/rng.hpp"
#include "calib/types.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <vector>

using namespace calib;

namespace {

std::filesystem::path temp_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() / "calib_test_core";
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LabeledPredictionSet small_set() {
  Matrix p(3, 2);
  p(0, 0) = 0.75; p(0, 1) = 0.25;
  p(1, 0) = 0.5;  p(1, 1) = 0.5;
  p(2, 0) = 0.1;  p(2, 1) = 0.9;
  return {p, {0, 1, 1}};
}

}  // namespace

TEST_CASE("matrix layout is row-major with spans") {
  Matrix m(2, 3);
  m(0, 0) = 1; m(0, 1) = 2; m(0, 2) = 3;
  m(1, 0) = 4; m(1, 1) = 5; m(1, 2) = 6;
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.data()[3] == 4.0);
  auto row = m.row(1);
  CHECK(row.size() == 3);
  CHECK(row[2] == 6.0);
  Matrix copy = m;
  CHECK(copy == m);
  copy(1, 2) = 7;
  CHECK_FALSE(copy == m);
}

TEST_CASE("rng streams are deterministic and decorrelated") {
  Rng a(42, 0), b(42, 0), c(42, 1);
  std::vector<std::uint64_t> xs, ys, zs;
  for (int i = 0; i < 16; ++i) {
    xs.push_back(a.next_u64());
    ys.push_back(b.next_u64());
    zs.push_back(c.next_u64());
  }
  CHECK(xs == ys);
  CHECK(xs != zs);
}

TEST_CASE("rng doubles live in [0,1) and exponentials are positive") {
  Rng rng(7, 0);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.next_exponential() >= 0.0);
  }
}

TEST_CASE("rng next_below stays in range and covers it") {
  Rng rng(3, 5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.next_below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("rng shuffle is a permutation") {
  Rng rng(9, 2);
  std::vector<std::uint32_t> v(100);
  std::iota(v.begin(), v.end(), 0u);
  auto w = v;
  rng.shuffle(w);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}

TEST_CASE("categorical sampling matches weights roughly") {
  Rng rng(11, 0);
  std::vector<double> weights{0.5, 0.3, 0.2};
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    counts[static_cast<std::size_t>(rng.next_categorical(weights))]++;
  }
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(counts[j] / static_cast<double>(n) - weights[j]) < 0.01);
  }
}

TEST_CASE("for_chunks covers the range exactly once") {
  const std::size_t n = 10001;
  std::vector<int> hits(n, 0);
  std::mutex mu;
  for_chunks(n, 64, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::lock_guard<std::mutex> lock(mu);
    for (std::size_t i = begin; i < end; ++i) hits[i]++;
  });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  bool called = false;
  for_chunks(0, 16, [&](std::size_t, std::size_t, std::size_t) { called = true; });
  CHECK_FALSE(called);
}

TEST_CASE("fixed-width bins are left-open right-closed with zero folded down") {
  BinningScheme s = BinningScheme::fixed_width(15);
  CHECK(s.bin_of(0.0) == 0);
  CHECK(s.bin_of(1e-300) == 0);
  CHECK(s.bin_of(1.0 / 15) == 0);
  CHECK(s.bin_of(std::nextafter(1.0 / 15, 2.0)) == 1);
  CHECK(s.bin_of(1.0) == 14);
  CHECK(s.bin_of(0.5) == 7);

  BinningScheme b10 = BinningScheme::fixed_width(10);
  CHECK(b10.bin_of(0.3) == b10.bin_of(std::nextafter(0.3, 0.0)));

  CHECK(s.epsilon() == doctest::Approx(1.0 / 30).epsilon(1e-15));
  CHECK(s.center(0) == doctest::Approx(1.0 / 30));
  CHECK(s.center(14) == doctest::Approx(29.0 / 30));
  BinningScheme b1 = BinningScheme::fixed_width(1);
  CHECK(b1.center(0) == 0.5);
  CHECK(b1.bin_of(0.0) == 0);
  CHECK(b1.bin_of(1.0) == 0);
  CHECK_THROWS_AS(BinningScheme::fixed_width(0).validate(), ValidationError);
}

TEST_CASE("softmax is shift invariant and rows sum to one") {
  Matrix z(2, 3);
  z(0, 0) = 1.0; z(0, 1) = 2.0; z(0, 2) = 3.0;
  z(1, 0) = -5.0; z(1, 1) = 0.0; z(1, 2) = 5.0;
  Matrix shifted = z;
  for (std::size_t j = 0; j < 3; ++j) shifted(0, j) += 1234.5;
  Matrix a = softmax_rows(z);
  Matrix b = softmax_rows(shifted);
  for (std::size_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(a(i, j) - b(i, j)) <= 1e-12);
      sum += a(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax of log probabilities recovers the row") {
  LabeledPredictionSet preds = small_set();
  Matrix back = softmax_rows(log_rows(preds.probs));
  for (std::size_t i = 0; i < back.rows(); ++i) {
    for (std::size_t j = 0; j < back.cols(); ++j) {
      CHECK(back(i, j) == doctest::Approx(preds.probs(i, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  Matrix p(1, 4);
  p(0, 0) = 0.2; p(0, 1) = 0.4; p(0, 2) = 0.4; p(0, 3) = 0.0;
  CHECK(argmax_row(p, 0) == 1);
}

TEST_CASE("validation reports name the failing check and row") {
  LabeledPredictionSet preds = small_set();
  CHECK(validate(preds).ok);

  LabeledPredictionSet bad = preds;
  bad.labels[1] = 9;
  ValidationReport r = validate(bad);
  CHECK_FALSE(r.ok);
  bool found = false;
  for (const auto& c : r.checks) {
    if (!c.pass) {
      found = true;
      CHECK(c.first_bad_row == 1);
    }
  }
  CHECK(found);
  CHECK_THROWS_AS(require_valid(r, "test"), ValidationError);

  LabeledPredictionSet offsum = preds;
  offsum.probs(0, 0) = 0.9;
  CHECK_FALSE(validate(offsum).ok);

  LabeledPredictionSet nan_set = preds;
  nan_set.probs(2, 1) = std::nan("");
  CHECK_FALSE(validate(nan_set).ok);
}

TEST_CASE("ensemble validation checks member shapes") {
  LabeledPredictionSet preds = small_set();
  EnsemblePredictions ens;
  ens.labels = preds.labels;
  ens.members = {preds.probs, preds.probs};
  CHECK(validate(ens).ok);
  ens.members.push_back(Matrix(2, 2, 0.5));
  CHECK_FALSE(validate(ens).ok);
}

TEST_CASE("binary round trip is bit exact") {
  LabeledPredictionSet preds = small_set();
  const auto path = (temp_dir() / "roundtrip.calt").string();
  store_predictions(Dataset::from(preds), path, FileFormat::Binary);
  Dataset loaded = load_predictions(path);
  CHECK(loaded.kind == FileKind::Probs);
  CHECK(loaded.member_count() == 1);
  CHECK(loaded.renormalized_rows == 0);
  CHECK(loaded.members.front() == preds.probs);
  CHECK(loaded.labels == preds.labels);

  // Second store of the loaded data reproduces the identical file.
  const auto path2 = (temp_dir() / "roundtrip2.calt").string();
  store_predictions(loaded, path2, FileFormat::Binary);
  CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("binary format holds ensembles and logits") {
  EnsembleLogits ens;
  ens.labels = {2, 0};
  Matrix z(2, 3);
  z(0, 0) = -1.5; z(0, 1) = 0.0; z(0, 2) = 2.25;
  z(1, 0) = 4.0; z(1, 1) = -0.125; z(1, 2) = 0.5;
  ens.members = {z, z, z};
  const auto path = (temp_dir() / "ens.calt").string();
  store_predictions(Dataset::from(ens), path, FileFormat::Binary);
  Dataset loaded = load_predictions(path);
  CHECK(loaded.kind == FileKind::Logits);
  CHECK(loaded.member_count() == 3);
  CHECK(loaded.members[2] == z);
  CHECK(loaded.labels == ens.labels);
}

TEST_CASE("csv round trip is value exact") {
  LabeledPredictionSet preds = small_set();
  preds.probs(0, 0) = 1.0 / 3.0;
  preds.probs(0, 1) = 2.0 / 3.0;
  const auto path = (temp_dir() / "roundtrip.csv").string();
  store_predictions(Dataset::from(preds), path, FileFormat::Csv);
  Dataset loaded = load_predictions(path);
  CHECK(loaded.kind == FileKind::Probs);
  CHECK(loaded.members.front() == preds.probs);
  CHECK(loaded.labels == preds.labels);
}

TEST_CASE("csv parses the documented header forms") {
  const auto probs_path = (temp_dir() / "probs.csv").string();
  write_bytes(probs_path, "label,c1,c2\n1,0.6,0.4\n");
  Dataset d = load_predictions(probs_path);
  CHECK(d.kind == FileKind::Probs);
  CHECK(d.size() == 1);
  CHECK(d.class_count() == 2);
  CHECK(d.members.front()(0, 0) == 0.6);
  CHECK(d.labels[0] == 0);

  const auto logit_path = (temp_dir() / "logits.csv").string();
  write_bytes(logit_path, "label,z1,z2\r\n2,-1.5,3.25\n\n");
  Dataset l = load_predictions(logit_path);
  CHECK(l.kind == FileKind::Logits);
  CHECK(l.members.front()(0, 1) == 3.25);
  CHECK(l.labels[0] == 1);
}

TEST_CASE("csv cannot hold ensembles") {
  EnsemblePredictions ens;
  ens.labels = {0};
  ens.members = {Matrix(1, 2, 0.5), Matrix(1, 2, 0.5)};
  const auto path = (temp_dir() / "nope.csv").string();
  CHECK_THROWS_AS(store_predictions(Dataset::from(ens), path, FileFormat::Csv), IoError);
}

TEST_CASE("io errors carry their code") {
  const auto check_code = [](const std::string& name, const std::string& bytes,
                             IoErrorCode want) {
    const auto path = (temp_dir() / name).string();
    write_bytes(path, bytes);
    try {
      load_predictions(path, FileFormat::Binary);
      FAIL_CHECK(name << " should not parse");
    } catch (const IoError& e) {
      CHECK(e.code() == want);
    }
  };

  try {
    load_predictions((temp_dir() / "missing.calt").string());
    FAIL_CHECK("missing file should throw");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrorCode::FileNotFound);
  }

  // A valid one-sample file to mutate: header + 2 doubles + 1 label.
  LabeledPredictionSet preds;
  preds.probs = Matrix(1, 2);
  preds.probs(0, 0) = 0.6;
  preds.probs(0, 1) = 0.4;
  preds.labels = {0};
  const auto good_path = (temp_dir() / "good.calt").string();
  store_predictions(Dataset::from(preds), good_path, FileFormat::Binary);
  std::string good = read_bytes(good_path);

  check_code("magic.calt", "XALT" + good.substr(4), IoErrorCode::BadMagic);
  {
    std::string v = good; v[4] = 9; check_code("ver.calt", v, IoErrorCode::UnsupportedVersion);
  }
  {
    std::string v = good; v[6] = 7; check_code("kind.calt", v, IoErrorCode::MalformedHeader);
  }
  {
    std::string v = good; v[7] = 1; check_code("resv.calt", v, IoErrorCode::MalformedHeader);
  }
  check_code("trunc.calt", good.substr(0, good.size() - 2), IoErrorCode::TruncatedPayload);
  check_code("short.calt", good.substr(0, 10), IoErrorCode::TruncatedPayload);
  {
    std::string v = good; v.back() = 3; check_code("label.calt", v, IoErrorCode::BadLabel);
  }
  {
    std::string v = good; v[v.size() - 4] = 0; check_code("label0.calt", v, IoErrorCode::BadLabel);
  }

  const auto csv_path = (temp_dir() / "badrow.csv").string();
  write_bytes(csv_path, "label,c1,c2\n1,0.6\n");
  try {
    load_predictions(csv_path);
    FAIL_CHECK("short row should throw");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrorCode::RowLengthMismatch);
  }

  write_bytes(csv_path, "label,c1,c2\n1,0.6,abc\n");
  try {
    load_predictions(csv_path);
    FAIL_CHECK("non-numeric cell should throw");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrorCode::BadValue);
  }
}

TEST_CASE("row sums slightly off are renormalized, beyond tolerance rejected") {
  const auto write_sum = [&](double p0, double p1, const std::string& name) {
    LabeledPredictionSet preds;
    preds.probs = Matrix(1, 2);
    preds.probs(0, 0) = p0;
    preds.probs(0, 1) = p1;
    preds.labels = {0};
    const auto path = (temp_dir() / name).string();
    store_predictions(Dataset::from(preds), path, FileFormat::Binary);
    return path;
  };

  // Off by 5e-7: inside the repair band.
  const auto fix_path = write_sum(0.6, 0.4 + 5e-7, "fixable.calt");
  Dataset fixed = load_predictions(fix_path);
  CHECK(fixed.renormalized_rows == 1);
  CHECK(fixed.members.front()(0, 0) + fixed.members.front()(0, 1) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // Off by 2e-10: below the band, left untouched bit for bit.
  const auto tiny_path = write_sum(0.6, 0.4 + 2e-10, "tiny.calt");
  Dataset tiny = load_predictions(tiny_path);
  CHECK(tiny.renormalized_rows == 0);
  CHECK(tiny.members.front()(0, 1) == 0.4 + 2e-10);

  // Off by 1e-3: rejected.
  const auto bad_path = write_sum(0.6, 0.401, "badsum.calt");
  try {
    load_predictions(bad_path);
    FAIL_CHECK("bad sum should throw");
  } catch (const IoError& e) {
    CHECK(e.code() == IoErrorCode::BadValue);
  }
}

TEST_CASE("format follows the file extension") {
  CHECK(format_for_path("x.csv") == FileFormat::Csv);
  CHECK(format_for_path("x.CSV") == FileFormat::Csv);
  CHECK(format_for_path("x.calt") == FileFormat::Binary);
  CHECK(format_for_path("noext") == FileFormat::Binary);
}
