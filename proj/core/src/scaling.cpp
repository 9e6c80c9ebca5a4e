#include "calib/scaling.hpp"

#include "calib/metrics.hpp"
#include "calib/parallel.hpp"
#include "kahan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace calib {

namespace {

void check_boundaries(const std::vector<double>& boundaries) {
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const double b = boundaries[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw ValidationError("region boundary must lie strictly inside (0,1)");
    }
    if (i > 0 && !(b > boundaries[i - 1])) {
      throw ValidationError("region boundaries must be strictly ascending");
    }
  }
}

void check_temps(const std::vector<double>& temps) {
  if (temps.empty()) throw ValidationError("temperature model has no temperatures");
  for (double t : temps) {
    if (!(t > 0.0) || !std::isfinite(t)) {
      throw ValidationError("temperatures must be positive and finite");
    }
  }
}

// ECE of scale(logits, t) without materializing the scaled matrix. Runs the
// same softmax kernel and Kahan reduction as the metrics path, so the value
// matches ece(scale(logits, t), scheme) bit for bit in fixed-width mode.
double ece_at_temperature(const LogitSet& logits, double t, const BinningScheme& scheme) {
  if (scheme.mode == BinningMode::ExactValue) {
    return ece(scale(logits, t), scheme);
  }
  const std::size_t n = logits.size();
  const std::size_t k = logits.class_count();
  const std::size_t b = static_cast<std::size_t>(scheme.bin_count);
  std::vector<double> w(k), p(k);
  std::vector<Kahan> cells(b * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = logits.logits.row(i);
    for (std::size_t j = 0; j < k; ++j) w[j] = z[j] / t;
    if (!softmax_row(w, p)) {
      throw ValidationError("fit_temperature: non-finite logit at row " + std::to_string(i));
    }
    const std::size_t j = argmax_row(std::span<const double>(p));
    const double hit = logits.labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0;
    cells[static_cast<std::size_t>(scheme.bin_of(p[j])) * k + j].add(p[j] - hit);
  }
  Kahan outside;
  for (std::size_t z = 0; z < b; ++z) {
    Kahan region;
    for (std::size_t j = 0; j < k; ++j) region.add(cells[z * k + j].sum);
    outside.add(std::abs(region.sum));
  }
  return outside.sum / static_cast<double>(n);
}

// Tie rule for equal ECE: prefer the temperature closer to 1, then the
// smaller one.
bool better_candidate(double ece_a, double t_a, double ece_b, double t_b) {
  if (ece_a != ece_b) return ece_a < ece_b;
  const double da = std::abs(t_a - 1.0);
  const double db = std::abs(t_b - 1.0);
  if (da != db) return da < db;
  return t_a < t_b;
}

std::vector<double> log_spaced_grid(const FitConfig& config) {
  std::vector<double> grid;
  grid.reserve(config.grid_points + 1);
  const double lo = std::log(config.t_min);
  const double hi = std::log(config.t_max);
  const double denom = static_cast<double>(config.grid_points - 1);
  for (std::size_t i = 0; i < config.grid_points; ++i) {
    grid.push_back(std::exp(lo + (hi - lo) * static_cast<double>(i) / denom));
  }
  grid.push_back(1.0);
  return grid;
}

struct Candidate {
  double t = 1.0;
  double ece = std::numeric_limits<double>::infinity();
};

// Scans the grid in parallel, then golden-section refines around the best
// grid point. Every evaluated (t, ece) pair competes in one final argmin, so
// the result never loses to t=1 (always on the grid).
Candidate grid_refine(const std::vector<double>& grid,
                      const std::function<double(double)>& objective) {
  std::vector<double> eces(grid.size());
  for_chunks(grid.size(), 4, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) eces[i] = objective(grid[i]);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (better_candidate(eces[i], grid[i], eces[best], grid[best])) best = i;
  }
  Candidate winner{grid[best], eces[best]};

  // Bracket around the best grid point in sorted-t order.
  std::vector<std::size_t> order(grid.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
  std::size_t pos = 0;
  while (order[pos] != best) ++pos;
  double lo = grid[order[pos > 0 ? pos - 1 : pos]];
  double hi = grid[order[pos + 1 < order.size() ? pos + 1 : pos]];
  if (hi - lo > 1e-4) {
    constexpr double kInvPhi = 0.6180339887498949;
    double x1 = hi - (hi - lo) * kInvPhi;
    double x2 = lo + (hi - lo) * kInvPhi;
    double f1 = objective(x1);
    double f2 = objective(x2);
    while (hi - lo > 1e-4) {
      if (better_candidate(f1, x1, winner.ece, winner.t)) winner = {x1, f1};
      if (better_candidate(f2, x2, winner.ece, winner.t)) winner = {x2, f2};
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - (hi - lo) * kInvPhi;
        f1 = objective(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + (hi - lo) * kInvPhi;
        f2 = objective(x2);
      }
    }
    if (better_candidate(f1, x1, winner.ece, winner.t)) winner = {x1, f1};
    if (better_candidate(f2, x2, winner.ece, winner.t)) winner = {x2, f2};
  }
  return winner;
}

FitResult fit_sgd(const LogitSet& logits, const FitConfig& config) {
  if (config.bins.mode == BinningMode::ExactValue) {
    throw ValidationError("the sgd optimizer requires fixed-width bins");
  }
  const std::size_t n = logits.size();
  const std::size_t k = logits.class_count();
  const std::size_t b = static_cast<std::size_t>(config.bins.bin_count);
  std::vector<double> w(k), p(k);
  std::vector<std::size_t> row_bin(n);
  std::vector<double> row_grad(n);

  double t = 1.0;
  FitResult best{1.0, std::numeric_limits<double>::infinity()};
  for (std::size_t iter = 0; iter <= config.sgd_iterations; ++iter) {
    std::vector<Kahan> cells(b * k);
    for (std::size_t i = 0; i < n; ++i) {
      const auto z = logits.logits.row(i);
      for (std::size_t j = 0; j < k; ++j) w[j] = z[j] / t;
      if (!softmax_row(w, p)) {
        throw ValidationError("fit_temperature: non-finite logit at row " + std::to_string(i));
      }
      const std::size_t j = argmax_row(std::span<const double>(p));
      const double hit = logits.labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0;
      const std::size_t zbin = static_cast<std::size_t>(config.bins.bin_of(p[j]));
      cells[zbin * k + j].add(p[j] - hit);
      row_bin[i] = zbin;
      double inner = 0.0;
      for (std::size_t c = 0; c < k; ++c) inner += p[c] * z[c];
      // d/dt softmax(z/t)_j = s_j (<s,z> - z_j) / t^2, assignments held fixed
      row_grad[i] = p[j] * (inner - z[j]) / (t * t);
    }
    std::vector<double> bin_total(b);
    Kahan outside;
    for (std::size_t z = 0; z < b; ++z) {
      Kahan region;
      for (std::size_t j = 0; j < k; ++j) region.add(cells[z * k + j].sum);
      bin_total[z] = region.sum;
      outside.add(std::abs(region.sum));
    }
    const double ece_now = outside.sum / static_cast<double>(n);
    if (better_candidate(ece_now, t, best.ece, best.t)) best = {t, ece_now};
    if (iter == config.sgd_iterations) break;

    Kahan grad;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = bin_total[row_bin[i]];
      const double sign = s > 0.0 ? 1.0 : (s < 0.0 ? -1.0 : 0.0);
      grad.add(sign * row_grad[i]);
    }
    t = std::clamp(t - config.sgd_rate * grad.sum / static_cast<double>(n), config.t_min,
                   config.t_max);
  }
  return best;
}

std::vector<double> quantile_boundaries(std::vector<double> maxp, std::size_t regions) {
  if (regions <= 1) return {};
  std::sort(maxp.begin(), maxp.end());
  const std::size_t n = maxp.size();
  std::vector<double> cuts(regions - 1);
  for (std::size_t r = 1; r < regions; ++r) {
    cuts[r - 1] = maxp[std::min(r * n / regions, n - 1)];
  }
  bool collapsed = true;
  for (std::size_t i = 1; i < cuts.size(); ++i) collapsed = collapsed && cuts[i] == cuts[0];
  collapsed = collapsed && cuts.size() > 1;

  const auto uniform = [&] {
    std::vector<double> u(regions - 1);
    for (std::size_t r = 1; r < regions; ++r) {
      u[r - 1] = static_cast<double>(r) / static_cast<double>(regions);
    }
    return u;
  };
  if (collapsed) return uniform();

  for (std::size_t i = 1; i < cuts.size(); ++i) {
    if (cuts[i] <= cuts[i - 1]) {
      cuts[i] = std::nextafter(cuts[i - 1], std::numeric_limits<double>::infinity());
    }
  }
  for (std::size_t i = cuts.size(); i-- > 0;) {
    const double limit = i + 1 < cuts.size() ? cuts[i + 1] : 1.0;
    if (cuts[i] >= limit) cuts[i] = std::nextafter(limit, 0.0);
  }
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    if (!(cuts[i] > 0.0 && cuts[i] < 1.0) || (i > 0 && cuts[i] <= cuts[i - 1])) {
      return uniform();
    }
  }
  return cuts;
}

// Full-dataset ECE as a function of one region's temperature, with every
// other region's contribution frozen into base cells.
class RegionObjective {
public:
  RegionObjective(const LogitSet& logits, const BinningScheme& scheme,
                  const std::vector<std::size_t>& region_of_row,
                  const std::vector<double>& temps, std::size_t active_region)
      : logits_(logits),
        scheme_(scheme),
        k_(logits.class_count()),
        bins_(static_cast<std::size_t>(scheme.bin_count)),
        base_(bins_ * k_) {
    std::vector<double> w(k_), p(k_);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (region_of_row[i] == active_region) {
        active_rows_.push_back(i);
        continue;
      }
      add_row(i, temps[region_of_row[i]], base_, w, p);
    }
  }

  const std::vector<std::size_t>& active_rows() const { return active_rows_; }

  double operator()(double t) const {
    std::vector<Kahan> cells = base_;
    std::vector<double> w(k_), p(k_);
    for (std::size_t i : active_rows_) add_row(i, t, cells, w, p);
    Kahan outside;
    for (std::size_t z = 0; z < bins_; ++z) {
      Kahan region;
      for (std::size_t j = 0; j < k_; ++j) region.add(cells[z * k_ + j].sum);
      outside.add(std::abs(region.sum));
    }
    return outside.sum / static_cast<double>(logits_.size());
  }

private:
  void add_row(std::size_t i, double t, std::vector<Kahan>& cells, std::vector<double>& w,
               std::vector<double>& p) const {
    const auto z = logits_.logits.row(i);
    for (std::size_t j = 0; j < k_; ++j) w[j] = z[j] / t;
    if (!softmax_row(w, p)) {
      throw ValidationError("fit_dynamic: non-finite logit at row " + std::to_string(i));
    }
    const std::size_t j = argmax_row(std::span<const double>(p));
    const double hit = logits_.labels[i] == static_cast<std::int32_t>(j) ? 1.0 : 0.0;
    cells[static_cast<std::size_t>(scheme_.bin_of(p[j])) * k_ + j].add(p[j] - hit);
  }

  const LogitSet& logits_;
  const BinningScheme& scheme_;
  std::size_t k_;
  std::size_t bins_;
  std::vector<Kahan> base_;
  std::vector<std::size_t> active_rows_;
};

}  // namespace

TemperatureModel TemperatureModel::global(double t) {
  TemperatureModel m;
  m.variant = TemperatureVariant::Global;
  m.temps = {t};
  m.validate();
  return m;
}

TemperatureModel TemperatureModel::per_member(std::vector<double> temps) {
  TemperatureModel m;
  m.variant = TemperatureVariant::PerMember;
  m.temps = std::move(temps);
  m.validate();
  return m;
}

TemperatureModel TemperatureModel::regional(std::vector<double> boundaries,
                                            std::vector<double> temps) {
  TemperatureModel m;
  m.variant = TemperatureVariant::Regional;
  m.boundaries = std::move(boundaries);
  m.temps = std::move(temps);
  m.validate();
  return m;
}

void TemperatureModel::validate() const {
  check_temps(temps);
  switch (variant) {
    case TemperatureVariant::Global:
      if (temps.size() != 1) throw ValidationError("global model needs exactly one temperature");
      if (!boundaries.empty()) throw ValidationError("global model cannot carry boundaries");
      break;
    case TemperatureVariant::PerMember:
      if (!boundaries.empty()) {
        throw ValidationError("per-member model cannot carry boundaries");
      }
      break;
    case TemperatureVariant::Regional:
      check_boundaries(boundaries);
      if (boundaries.size() + 1 != temps.size()) {
        throw ValidationError("regional model needs one temperature per region");
      }
      break;
  }
}

std::size_t region_of(double max_prob, const std::vector<double>& boundaries) {
  return static_cast<std::size_t>(
      std::upper_bound(boundaries.begin(), boundaries.end(), max_prob) - boundaries.begin());
}

void FitConfig::validate() const {
  if (!(t_min > 0.0)) throw ValidationError("t_min must be positive");
  if (!(t_min <= 1.0 && 1.0 <= t_max)) {
    throw ValidationError("the search range [t_min, t_max] must contain 1");
  }
  if (grid_points < 2) throw ValidationError("grid_points must be at least 2");
  if (!(sgd_rate > 0.0)) throw ValidationError("sgd_rate must be positive");
  bins.validate();
  check_boundaries(boundaries);
}

LabeledPredictionSet scale(const LogitSet& logits, double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("temperature must be positive");
  Matrix w(logits.logits.rows(), logits.logits.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto src = logits.logits.row(i);
    auto dst = w.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) dst[j] = src[j] / t;
  }
  return {softmax_rows(w), logits.labels};
}

LabeledPredictionSet scale_dynamic(const LogitSet& logits, const TemperatureModel& model) {
  model.validate();
  if (model.variant != TemperatureVariant::Regional) {
    throw ValidationError("scale_dynamic needs a regional model");
  }
  const Matrix probs1 = softmax_rows(logits.logits);
  const std::size_t n = logits.size();
  const std::size_t k = logits.class_count();
  Matrix w(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p1 = probs1.row(i);
    const double t = model.temps[region_of(p1[argmax_row(p1)], model.boundaries)];
    const auto src = logits.logits.row(i);
    auto dst = w.row(i);
    for (std::size_t j = 0; j < k; ++j) dst[j] = src[j] / t;
  }
  return {softmax_rows(w), logits.labels};
}

FitResult fit_temperature(const LogitSet& logits, const FitConfig& config) {
  config.validate();
  if (logits.size() == 0) throw ValidationError("fit_temperature: empty input");
  if (config.optimizer == FitOptimizer::FixedAssignmentSgd) return fit_sgd(logits, config);
  const auto grid = log_spaced_grid(config);
  const Candidate winner = grid_refine(
      grid, [&](double t) { return ece_at_temperature(logits, t, config.bins); });
  return {winner.t, winner.ece};
}

DynamicFitResult fit_dynamic(const LogitSet& logits, std::size_t region_count,
                             const FitConfig& config) {
  config.validate();
  if (region_count < 1) throw ValidationError("region_count must be at least 1");
  if (logits.size() == 0) throw ValidationError("fit_dynamic: empty input");

  const Matrix probs1 = softmax_rows(logits.logits);
  std::vector<double> maxp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto row = probs1.row(i);
    maxp[i] = row[argmax_row(row)];
  }

  std::vector<double> boundaries = config.boundaries;
  if (boundaries.empty()) {
    boundaries = quantile_boundaries(maxp, region_count);
  } else if (boundaries.size() + 1 != region_count) {
    throw ValidationError("fixed boundaries must define region_count regions");
  }

  // Coordinate steps always use grid-refine regardless of config.optimizer.
  FitConfig grid_config = config;
  grid_config.optimizer = FitOptimizer::GridRefine;
  const FitResult global = fit_temperature(logits, grid_config);

  std::vector<std::size_t> region(logits.size());
  std::vector<bool> populated(region_count, false);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    region[i] = region_of(maxp[i], boundaries);
    populated[region[i]] = true;
  }

  std::vector<double> temps(region_count, global.t);
  const auto grid = log_spaced_grid(grid_config);
  for (int sweep = 0; sweep < 3; ++sweep) {
    for (std::size_t r = 0; r < region_count; ++r) {
      if (!populated[r]) continue;
      const RegionObjective objective(logits, grid_config.bins, region, temps, r);
      std::vector<double> candidates = grid;
      candidates.push_back(temps[r]);
      temps[r] = grid_refine(candidates, objective).t;
    }
  }
  for (std::size_t r = 0; r < region_count; ++r) {
    if (!populated[r]) temps[r] = r == 0 ? global.t : temps[r - 1];
  }

  DynamicFitResult result;
  result.model = TemperatureModel::regional(std::move(boundaries), std::move(temps));
  result.ece = ece(scale_dynamic(logits, result.model), grid_config.bins);
  return result;
}

}  // namespace calib
