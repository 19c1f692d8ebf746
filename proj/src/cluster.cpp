#include "fpanel/cluster.hpp"

#include "fpanel/error.hpp"

#include <algorithm>
#include <map>
#include <random>

namespace fpanel {

double l2_distance(const GridCurve& a, const GridCurve& b) {
  if (!same_grid(a.grid, b.grid)) fail(ErrorCode::GridMismatch, "curves for l2_distance are on different grids");
  const Eigen::VectorXd w = trapezoid_weights(a.grid);
  return std::sqrt(w.dot((a.values - b.values).cwiseAbs2()));
}

std::vector<std::size_t> ClusterModel::sizes() const {
  std::vector<std::size_t> out(k, 0);
  for (auto c : assignments) ++out[c];
  return out;
}

namespace {

struct Workspace {
  Eigen::MatrixXd X;  // curves x G
  Eigen::VectorXd w;
};

double sq_dist(const Workspace& ws, Eigen::Index i, const Eigen::MatrixXd& centers, Eigen::Index c) {
  double acc = 0.0;
  for (Eigen::Index g = 0; g < ws.X.cols(); ++g) {
    const double d = ws.X(i, g) - centers(c, g);
    acc += ws.w[g] * (d * d);
  }
  return acc;
}

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t nearest(const Workspace& ws, Eigen::Index i, const Eigen::MatrixXd& centers) {
  std::size_t best = 0;
  double best_d = sq_dist(ws, i, centers, 0);
  for (Eigen::Index c = 1; c < centers.rows(); ++c) {
    const double d = sq_dist(ws, i, centers, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

Eigen::MatrixXd seed_plus_plus(const Workspace& ws, std::size_t k, std::mt19937_64& rng) {
  const Eigen::Index n = ws.X.rows();
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(k), ws.X.cols());
  auto first = std::min<Eigen::Index>(static_cast<Eigen::Index>(unit_draw(rng) * static_cast<double>(n)), n - 1);
  centers.row(0) = ws.X.row(first);
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(ws, i, centers, 0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double target = unit_draw(rng) * total;
      double running = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        running += d2[static_cast<std::size_t>(i)];
        if (running > target && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Eigen::Index>(static_cast<Eigen::Index>(unit_draw(rng) * static_cast<double>(n)), n - 1);
    }
    const auto row = static_cast<Eigen::Index>(c);
    centers.row(row) = ws.X.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], sq_dist(ws, i, centers, row));
  }
  return centers;
}

Eigen::MatrixXd centroid_means(const Workspace& ws, const std::vector<std::size_t>& assign, std::size_t k,
                               std::vector<std::size_t>& counts) {
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), ws.X.cols());
  counts.assign(k, 0);
  for (std::size_t i = 0; i < assign.size(); ++i) {
    centers.row(static_cast<Eigen::Index>(assign[i])) += ws.X.row(static_cast<Eigen::Index>(i));
    ++counts[assign[i]];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] > 0) centers.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(counts[c]);
  return centers;
}

// Fills each empty cluster with the curve farthest from its own centroid,
// taken from a cluster that can spare it.
void repair_empty(const Workspace& ws, std::vector<std::size_t>& assign, std::size_t k, Eigen::MatrixXd& centers,
                  std::vector<std::size_t>& counts) {
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
      if (counts[assign[i]] < 2) continue;
      const double d = sq_dist(ws, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(assign[i]));
      if (d > far_d) {
        far_d = d;
        far = static_cast<Eigen::Index>(i);
      }
    }
    assign[static_cast<std::size_t>(far)] = c;
    centers = centroid_means(ws, assign, k, counts);
  }
}

double objective_of(const Workspace& ws, const std::vector<std::size_t>& assign, const Eigen::MatrixXd& centers) {
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    total += sq_dist(ws, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(assign[i]));
  return total;
}

struct RestartResult {
  std::vector<std::size_t> assign;
  Eigen::MatrixXd centers;
  RestartTrace trace;
};

RestartResult run_restart(const Workspace& ws, const KMeansOptions& opt, std::size_t restart) {
  std::seed_seq seq{static_cast<std::uint32_t>(opt.seed & 0xffffffffu), static_cast<std::uint32_t>(opt.seed >> 32),
                    static_cast<std::uint32_t>(restart)};
  std::mt19937_64 rng(seq);
  const auto n = static_cast<std::size_t>(ws.X.rows());
  RestartResult r;
  r.centers = seed_plus_plus(ws, opt.k, rng);
  r.assign.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.assign[i] = nearest(ws, static_cast<Eigen::Index>(i), r.centers);

  std::vector<std::size_t> counts;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    r.centers = centroid_means(ws, r.assign, opt.k, counts);
    repair_empty(ws, r.assign, opt.k, r.centers, counts);
    r.trace.objectives.push_back(objective_of(ws, r.assign, r.centers));
    r.trace.iterations = it + 1;
    std::vector<std::size_t> next(n);
    for (std::size_t i = 0; i < n; ++i) next[i] = nearest(ws, static_cast<Eigen::Index>(i), r.centers);
    if (next == r.assign) {
      r.trace.converged = true;
      break;
    }
    r.assign = std::move(next);
  }
  r.trace.objective = r.trace.objectives.back();
  return r;
}

Workspace make_workspace(const std::vector<GridCurve>& curves) {
  Workspace ws;
  const auto n = static_cast<Eigen::Index>(curves.size());
  ws.X.resize(n, curves.front().grid.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& c = curves[static_cast<std::size_t>(i)];
    if (!same_grid(c.grid, curves.front().grid)) fail(ErrorCode::GridMismatch, "curve " + std::to_string(i));
    ws.X.row(i) = c.values.transpose();
  }
  ws.w = trapezoid_weights(curves.front().grid);
  return ws;
}

}  // namespace

ClusterModel fkmeans(const std::vector<GridCurve>& curves, const KMeansOptions& options) {
  if (options.k == 0) fail(ErrorCode::InvalidArgument, "k must be at least 1");
  if (options.restarts == 0 || options.max_iterations == 0)
    fail(ErrorCode::InvalidArgument, "restarts and max_iterations must be positive");
  if (curves.size() < options.k)
    fail(ErrorCode::TooFewCurves,
         std::to_string(curves.size()) + " curves for k = " + std::to_string(options.k));
  const Workspace ws = make_workspace(curves);

  std::vector<RestartResult> results(options.restarts);
  const auto restarts = static_cast<long>(options.restarts);
#pragma omp parallel for schedule(dynamic)
  for (long r = 0; r < restarts; ++r)
    results[static_cast<std::size_t>(r)] = run_restart(ws, options, static_cast<std::size_t>(r));

  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].trace.objective < results[best].trace.objective) best = r;

  ClusterModel model;
  model.k = options.k;
  model.seed = options.seed;
  model.restarts = options.restarts;
  model.best_restart = best;
  model.assignments = results[best].assign;
  model.objective = results[best].trace.objective;
  for (Eigen::Index c = 0; c < results[best].centers.rows(); ++c)
    model.centroids.push_back({curves.front().grid, results[best].centers.row(c).transpose()});
  for (auto& r : results) model.traces.push_back(std::move(r.trace));
  return model;
}

double clustering_objective(const ClusterModel& model, const std::vector<GridCurve>& curves) {
  if (curves.size() != model.assignments.size()) fail(ErrorCode::IndexMismatch, "curve count differs from the model");
  double total = 0.0;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double d = l2_distance(curves[i], model.centroids[model.assignments[i]]);
    total += d * d;
  }
  return total;
}

std::vector<GridCurve> cluster_means(const ClusterModel& model, const std::vector<GridCurve>& aux) {
  if (aux.size() != model.assignments.size())
    fail(ErrorCode::IndexMismatch, std::to_string(aux.size()) + " auxiliary curves for " +
                                       std::to_string(model.assignments.size()) + " clustered subjects");
  if (aux.empty()) return {};
  for (const auto& c : aux)
    if (!same_grid(c.grid, aux.front().grid)) fail(ErrorCode::GridMismatch, "auxiliary curves on different grids");
  std::vector<GridCurve> out(model.k, GridCurve{aux.front().grid, Eigen::VectorXd::Zero(aux.front().grid.size())});
  std::vector<std::size_t> counts(model.k, 0);
  for (std::size_t i = 0; i < aux.size(); ++i) {
    out[model.assignments[i]].values += aux[i].values;
    ++counts[model.assignments[i]];
  }
  for (std::size_t c = 0; c < model.k; ++c)
    if (counts[c] > 0) out[c].values /= static_cast<double>(counts[c]);
  return out;
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) fail(ErrorCode::IndexMismatch, "labelings differ in length");
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [key, v] : joint) index += choose2(v);
  for (const auto& [key, v] : ra) sa += choose2(v);
  for (const auto& [key, v] : rb) sb += choose2(v);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = total > 0.0 ? sa * sb / total : 0.0;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

std::vector<double> objective_by_k(const std::vector<GridCurve>& curves, const std::vector<std::size_t>& ks,
                                   KMeansOptions options) {
  std::vector<double> out;
  for (auto k : ks) {
    options.k = k;
    out.push_back(fkmeans(curves, options).objective);
  }
  return out;
}

std::size_t monotonicity_violations(const RestartTrace& trace) {
  std::size_t bad = 0;
  for (std::size_t i = 1; i < trace.objectives.size(); ++i) {
    const double prev = trace.objectives[i - 1];
    if (trace.objectives[i] > prev + 1e-12 * std::max(1.0, prev)) ++bad;
  }
  return bad;
}

}  // namespace fpanel
