#include "fpanel/kernel.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fpanel {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// All observations in subject order, with subject boundaries.
struct FlatData {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<std::size_t> begin;  // size = subjects + 1

  std::size_t subjects() const { return begin.size() - 1; }
};

FlatData flatten(const FunctionalDataset& data) {
  FlatData flat;
  flat.begin.push_back(0);
  for (const auto& s : data.samples) {
    flat.times.insert(flat.times.end(), s.times.begin(), s.times.end());
    flat.values.insert(flat.values.end(), s.values.begin(), s.values.end());
    flat.begin.push_back(flat.times.size());
  }
  return flat;
}

std::string point_label(double s) { return "t=" + io::format_double(s); }

}  // namespace

std::string to_string(KernelKind kind) {
  return kind == KernelKind::Gaussian ? "gaussian" : "epanechnikov";
}

KernelKind parse_kernel_kind(const std::string& text) {
  if (text == "gaussian") return KernelKind::Gaussian;
  if (text == "epanechnikov") return KernelKind::Epanechnikov;
  fail(ErrorCode::InvalidConfig, "unknown kernel '" + text + "'");
}

void KernelSpec::validate() const {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    fail(ErrorCode::InvalidArgument, "kernel bandwidth must be positive, got " + io::format_double(bandwidth));
}

double kernel_weight(const KernelSpec& spec, double u) {
  const double x = u / spec.bandwidth;
  if (spec.kind == KernelKind::Gaussian) return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  const double x2 = x * x;
  return x2 <= 1.0 ? 0.75 * (1.0 - x2) : 0.0;
}

GridCurve smooth_mean(const FunctionalDataset& data, const KernelSpec& spec, const Eigen::VectorXd& grid) {
  spec.validate();
  const FlatData flat = flatten(data);
  const auto n_obs = static_cast<Eigen::Index>(flat.times.size());
  if (n_obs == 0) fail(ErrorCode::EmptyDataset, "no observations");
  const Eigen::Index n_grid = grid.size();

  RowMatrix weights(n_obs, n_grid);
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < n_obs; ++k)
    for (Eigen::Index g = 0; g < n_grid; ++g)
      weights(k, g) = kernel_weight(spec, flat.times[static_cast<std::size_t>(k)] - grid[g]);

  GridCurve out{grid, Eigen::VectorXd(n_grid)};
  Eigen::VectorXd den(n_grid);
#pragma omp parallel for schedule(static)
  for (Eigen::Index g = 0; g < n_grid; ++g) {
    double num = 0.0;
    double d = 0.0;
    for (Eigen::Index k = 0; k < n_obs; ++k) {
      const double w = weights(k, g);
      d += w;
      num += w * flat.values[static_cast<std::size_t>(k)];
    }
    den[g] = d;
    out.values[g] = num / d;
  }
  for (Eigen::Index g = 0; g < n_grid; ++g)
    if (!(den[g] > 0.0)) fail(ErrorCode::ZeroDenominator, "mean smoother at " + point_label(grid[g]));
  return out;
}

GridSurface smooth_covariance(const FunctionalDataset& data, const GridCurve& mean,
                              const KernelSpec& spec_s, const KernelSpec& spec_t,
                              const Eigen::VectorXd& grid) {
  spec_s.validate();
  spec_t.validate();
  if (!same_grid(mean.grid, grid)) fail(ErrorCode::GridMismatch, "mean curve is on a different grid");
  const FlatData flat = flatten(data);
  const Eigen::Index n_grid = grid.size();

  // Only subjects with at least one off-diagonal pair contribute.
  std::vector<std::size_t> rows;  // observation indices of contributing subjects
  for (std::size_t i = 0; i < flat.subjects(); ++i)
    if (flat.begin[i + 1] - flat.begin[i] >= 2)
      for (std::size_t k = flat.begin[i]; k < flat.begin[i + 1]; ++k) rows.push_back(k);
  if (rows.empty()) fail(ErrorCode::NoOffDiagonalPairs, "every subject has at most one observation");

  std::vector<double> centered(flat.times.size());
  for (std::size_t k = 0; k < flat.times.size(); ++k) centered[k] = flat.values[k] - mean.at(flat.times[k]);

  const auto n_rows = static_cast<Eigen::Index>(rows.size());
  RowMatrix w_s(n_rows, n_grid), w_t(n_rows, n_grid);
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const double t = flat.times[rows[static_cast<std::size_t>(r)]];
    for (Eigen::Index g = 0; g < n_grid; ++g) {
      w_s(r, g) = kernel_weight(spec_s, t - grid[g]);
      w_t(r, g) = kernel_weight(spec_t, t - grid[g]);
    }
  }

  // Row r (observation j of subject i) of `cross`: sum over l != j of C_ijl K_t(t_il - t_b);
  // `count` carries the same sum with C replaced by 1.
  RowMatrix cross = RowMatrix::Zero(n_rows, n_grid);
  RowMatrix count = RowMatrix::Zero(n_rows, n_grid);
  std::vector<Eigen::Index> subject_first(n_rows);
  std::vector<Eigen::Index> subject_last(n_rows);
  {
    Eigen::Index r = 0;
    while (r < n_rows) {
      const std::size_t obs = rows[static_cast<std::size_t>(r)];
      const auto it = std::upper_bound(flat.begin.begin(), flat.begin.end(), obs);
      const auto subject = static_cast<std::size_t>(it - flat.begin.begin()) - 1;
      const auto size = static_cast<Eigen::Index>(flat.begin[subject + 1] - flat.begin[subject]);
      for (Eigen::Index q = r; q < r + size; ++q) {
        subject_first[static_cast<std::size_t>(q)] = r;
        subject_last[static_cast<std::size_t>(q)] = r + size;
      }
      r += size;
    }
  }
#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const double cj = centered[rows[static_cast<std::size_t>(r)]];
    for (Eigen::Index l = subject_first[static_cast<std::size_t>(r)]; l < subject_last[static_cast<std::size_t>(r)]; ++l) {
      if (l == r) continue;
      const double product = cj * centered[rows[static_cast<std::size_t>(l)]];
      for (Eigen::Index b = 0; b < n_grid; ++b) {
        cross(r, b) += product * w_t(l, b);
        count(r, b) += w_t(l, b);
      }
    }
  }

  Eigen::MatrixXd num(n_grid, n_grid), den(n_grid, n_grid);
#pragma omp parallel for schedule(static)
  for (Eigen::Index a = 0; a < n_grid; ++a) {
    std::vector<double> nrow(static_cast<std::size_t>(n_grid), 0.0), drow(static_cast<std::size_t>(n_grid), 0.0);
    for (Eigen::Index r = 0; r < n_rows; ++r) {
      const double w = w_s(r, a);
      if (w == 0.0) continue;
      for (Eigen::Index b = 0; b < n_grid; ++b) {
        nrow[static_cast<std::size_t>(b)] += w * cross(r, b);
        drow[static_cast<std::size_t>(b)] += w * count(r, b);
      }
    }
    for (Eigen::Index b = 0; b < n_grid; ++b) {
      num(a, b) = nrow[static_cast<std::size_t>(b)];
      den(a, b) = drow[static_cast<std::size_t>(b)];
    }
  }

  for (Eigen::Index a = 0; a < n_grid; ++a)
    for (Eigen::Index b = 0; b < n_grid; ++b)
      if (!(den(a, b) > 0.0))
        fail(ErrorCode::ZeroDenominator,
             "covariance smoother at s=" + io::format_double(grid[a]) + ", t=" + io::format_double(grid[b]));

  const Eigen::MatrixXd raw = num.cwiseQuotient(den);
  GridSurface out{grid, Eigen::MatrixXd(n_grid, n_grid)};
  for (Eigen::Index a = 0; a < n_grid; ++a)
    for (Eigen::Index b = 0; b < n_grid; ++b) out.values(a, b) = 0.5 * (raw(a, b) + raw(b, a));
  return out;
}

namespace {

// Leave-one-curve-out squared prediction error of the mean smoother.
double mean_cv(const FlatData& flat, const KernelSpec& spec) {
  const std::size_t n_obs = flat.times.size();
  std::vector<double> err(n_obs, 0.0);
  std::vector<unsigned char> degenerate(n_obs, 0);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < flat.subjects(); ++i) {
    for (std::size_t k = flat.begin[i]; k < flat.begin[i + 1]; ++k) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t q = 0; q < n_obs; ++q) {
        if (q >= flat.begin[i] && q < flat.begin[i + 1]) continue;
        const double w = kernel_weight(spec, flat.times[q] - flat.times[k]);
        den += w;
        num += w * flat.values[q];
      }
      if (!(den > 0.0)) {
        degenerate[k] = 1;
        continue;
      }
      const double r = flat.values[k] - num / den;
      err[k] = r * r;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < n_obs; ++k) {
    if (degenerate[k]) return std::numeric_limits<double>::infinity();
    total += err[k];
  }
  return total;
}

BandwidthChoice pick(std::vector<double> candidates, std::vector<double> scores) {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return candidates[a] < candidates[b]; });
  double best = std::numeric_limits<double>::infinity();
  double chosen = 0.0;
  bool any = false;
  for (std::size_t c : order) {
    if (!std::isfinite(scores[c])) continue;
    if (!any || scores[c] <= best) {
      best = scores[c];
      chosen = candidates[c];
      any = true;
    }
  }
  if (!any) fail(ErrorCode::AllCandidatesDegenerate, "every bandwidth candidate has a zero denominator");
  return {chosen, std::move(candidates), std::move(scores)};
}

void check_candidates(const std::vector<double>& candidates) {
  if (candidates.size() < 2) fail(ErrorCode::InvalidArgument, "bandwidth selection needs at least 2 candidates");
  for (double h : candidates)
    if (!(h > 0.0) || !std::isfinite(h)) fail(ErrorCode::InvalidArgument, "bandwidth candidates must be positive");
}

}  // namespace

BandwidthChoice select_bandwidth(const FunctionalDataset& data, const std::vector<double>& candidates,
                                 KernelKind kind) {
  check_candidates(candidates);
  if (data.samples.size() < 2)
    fail(ErrorCode::InvalidArgument, "leave-one-curve-out cross-validation needs at least 2 subjects");
  const FlatData flat = flatten(data);
  std::vector<double> scores(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) scores[c] = mean_cv(flat, {kind, candidates[c]});
  return pick(candidates, std::move(scores));
}

namespace {

// Observation range of a subject with at least one off-diagonal pair.
struct SubjectPairs {
  std::size_t first;
  std::size_t last;
};

double covariance_cv(const FlatData& flat, const std::vector<double>& centered, const KernelSpec& spec) {
  // Distinct observation times; the leave-one-out surfaces are evaluated there.
  std::vector<double> lattice = flat.times;
  std::sort(lattice.begin(), lattice.end());
  lattice.erase(std::unique(lattice.begin(), lattice.end()), lattice.end());
  const auto n_u = static_cast<Eigen::Index>(lattice.size());
  std::vector<Eigen::Index> where(flat.times.size());
  for (std::size_t k = 0; k < flat.times.size(); ++k)
    where[k] = std::lower_bound(lattice.begin(), lattice.end(), flat.times[k]) - lattice.begin();

  std::vector<SubjectPairs> subjects;
  for (std::size_t i = 0; i < flat.subjects(); ++i)
    if (flat.begin[i + 1] - flat.begin[i] >= 2) subjects.push_back({flat.begin[i], flat.begin[i + 1]});

  RowMatrix kmat(static_cast<Eigen::Index>(flat.times.size()), n_u);
  for (std::size_t k = 0; k < flat.times.size(); ++k)
    for (Eigen::Index u = 0; u < n_u; ++u)
      kmat(static_cast<Eigen::Index>(k), u) = kernel_weight(spec, flat.times[k] - lattice[static_cast<std::size_t>(u)]);

  // Per-subject cross sums on the lattice: R_j(v) = sum_{l != j} C_jl K(t_l - v).
  auto subject_cross = [&](const SubjectPairs& s, RowMatrix& cross, RowMatrix& count) {
    const auto n = static_cast<Eigen::Index>(s.last - s.first);
    cross.setZero(n, n_u);
    count.setZero(n, n_u);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double cj = centered[s.first + static_cast<std::size_t>(j)];
      for (Eigen::Index l = 0; l < n; ++l) {
        if (l == j) continue;
        const double product = cj * centered[s.first + static_cast<std::size_t>(l)];
        const auto row = kmat.row(static_cast<Eigen::Index>(s.first) + l);
        cross.row(j) += product * row;
        count.row(j) += row;
      }
    }
  };

  Eigen::MatrixXd num_total = Eigen::MatrixXd::Zero(n_u, n_u);
  Eigen::MatrixXd den_total = Eigen::MatrixXd::Zero(n_u, n_u);
  RowMatrix cross, count;
  for (const auto& s : subjects) {
    subject_cross(s, cross, count);
    for (Eigen::Index j = 0; j < cross.rows(); ++j) {
      const auto krow = kmat.row(static_cast<Eigen::Index>(s.first) + j);
      for (Eigen::Index u = 0; u < n_u; ++u) {
        const double w = krow[u];
        if (w == 0.0) continue;
        num_total.row(u) += w * cross.row(j);
        den_total.row(u) += w * count.row(j);
      }
    }
  }

  double score = 0.0;
  for (const auto& s : subjects) {
    subject_cross(s, cross, count);
    const auto n = static_cast<Eigen::Index>(s.last - s.first);
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        if (a == b) continue;
        const Eigen::Index ua = where[s.first + static_cast<std::size_t>(a)];
        const Eigen::Index ub = where[s.first + static_cast<std::size_t>(b)];
        double own_num = 0.0;
        double own_den = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
          const double w = kmat(static_cast<Eigen::Index>(s.first) + j, ua);
          own_num += w * cross(j, ub);
          own_den += w * count(j, ub);
        }
        const double den = den_total(ua, ub) - own_den;
        if (!(den > 1e-10 * den_total(ua, ub))) return std::numeric_limits<double>::infinity();
        const double predicted = (num_total(ua, ub) - own_num) / den;
        const double observed = centered[s.first + static_cast<std::size_t>(a)] *
                                centered[s.first + static_cast<std::size_t>(b)];
        score += (observed - predicted) * (observed - predicted);
      }
    }
  }
  return score;
}

}  // namespace

BandwidthChoice select_covariance_bandwidth(const FunctionalDataset& data, const GridCurve& mean,
                                            const std::vector<double>& candidates, KernelKind kind) {
  check_candidates(candidates);
  if (data.samples.size() < 2)
    fail(ErrorCode::InvalidArgument, "leave-one-curve-out cross-validation needs at least 2 subjects");
  const FlatData flat = flatten(data);
  std::vector<double> centered(flat.times.size());
  for (std::size_t k = 0; k < flat.times.size(); ++k) centered[k] = flat.values[k] - mean.at(flat.times[k]);

  bool any_pair = false;
  for (std::size_t i = 0; i < flat.subjects(); ++i) any_pair = any_pair || flat.begin[i + 1] - flat.begin[i] >= 2;
  if (!any_pair) fail(ErrorCode::NoOffDiagonalPairs, "every subject has at most one observation");

  std::vector<double> scores(candidates.size());
  // Candidates are independent; each is evaluated serially so its sum order is fixed.
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < candidates.size(); ++c)
    scores[c] = covariance_cv(flat, centered, {kind, candidates[c]});
  return pick(candidates, std::move(scores));
}

std::vector<double> default_bandwidth_candidates(const DomainMap& domain) {
  const double step = domain.year_step();
  return {0.5 * step, step, 1.5 * step, 2.0 * step, 3.0 * step, 4.0 * step};
}

double default_bandwidth(const DomainMap& domain) { return 2.0 * domain.year_step(); }

}  // namespace fpanel
