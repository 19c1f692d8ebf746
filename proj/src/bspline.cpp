#include "fpanel/bspline.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fpanel {

BSplineBasis::BSplineBasis(std::size_t n_basis, std::size_t order) : n_basis_(n_basis), order_(order) {
  if (order_ < 1) fail(ErrorCode::InvalidArgument, "B-spline order must be at least 1");
  if (n_basis_ < order_)
    fail(ErrorCode::InvalidArgument, "n_basis " + std::to_string(n_basis) + " is below the order " + std::to_string(order));
  const std::size_t interior = n_basis_ - order_;
  knots_.assign(order_, 0.0);
  for (std::size_t i = 1; i <= interior; ++i) knots_.push_back(static_cast<double>(i) / static_cast<double>(interior + 1));
  knots_.insert(knots_.end(), order_, 1.0);
}

std::vector<double> BSplineBasis::breakpoints() const {
  std::vector<double> out;
  for (double k : knots_)
    if (out.empty() || k != out.back()) out.push_back(k);
  return out;
}

std::size_t BSplineBasis::span(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) {
    std::ostringstream msg;
    msg << "t = " << t << " is outside [0, 1]";
    fail(ErrorCode::PointOutsideDomain, msg.str());
  }
  const std::size_t p = degree();
  if (t >= 1.0) return n_basis_ - 1;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  auto mu = static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::clamp(mu, p, n_basis_ - 1);
}

// Derivatives of the order nonzero basis functions on span mu (de Boor / Piegl-Tiller).
Eigen::MatrixXd BSplineBasis::local_derivatives(double t, std::size_t mu, std::size_t n) const {
  const int p = static_cast<int>(degree());
  const int i = static_cast<int>(mu);
  const int nd = std::min(static_cast<int>(n), p);
  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(static_cast<std::size_t>(p) + 1), right(static_cast<std::size_t>(p) + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[static_cast<std::size_t>(i + 1 - j)];
    right[j] = knots_[static_cast<std::size_t>(i + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = r - 1 <= pk ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= p - k;
  }
  return ders;
}

Eigen::VectorXd BSplineBasis::evaluate(double t, std::size_t deriv) const {
  const std::size_t mu = span(t);
  const Eigen::MatrixXd local = local_derivatives(t, mu, deriv);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_basis_));
  const std::size_t first = mu - degree();
  for (std::size_t j = 0; j < order_; ++j)
    out[static_cast<Eigen::Index>(first + j)] = local(static_cast<Eigen::Index>(deriv), static_cast<Eigen::Index>(j));
  return out;
}

Eigen::MatrixXd BSplineBasis::design_matrix(const Eigen::VectorXd& points, std::size_t deriv) const {
  Eigen::MatrixXd out(points.size(), static_cast<Eigen::Index>(n_basis_));
  for (Eigen::Index r = 0; r < points.size(); ++r) out.row(r) = evaluate(points[r], deriv).transpose();
  return out;
}

void gauss_legendre(std::size_t points, double a, double b, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  if (points == 0) fail(ErrorCode::InvalidArgument, "Gauss-Legendre rule needs at least one point");
  const auto m = static_cast<Eigen::Index>(points);
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    const double kk = static_cast<double>(k);
    jacobi(k, k - 1) = jacobi(k - 1, k) = kk / std::sqrt(4.0 * kk * kk - 1.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  const double half = 0.5 * (b - a);
  nodes = (solver.eigenvalues().array() + 1.0) * half + a;
  weights = 2.0 * solver.eigenvectors().row(0).transpose().array().square() * half;
}

Eigen::MatrixXd BSplineBasis::integrate_products(std::size_t deriv) const {
  const auto nb = static_cast<Eigen::Index>(n_basis_);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(nb, nb);
  const std::vector<double> breaks = breakpoints();
  Eigen::VectorXd nodes, weights;
  for (std::size_t iv = 0; iv + 1 < breaks.size(); ++iv) {
    // order points integrate polynomials of degree 2*order - 1 exactly
    gauss_legendre(order_, breaks[iv], breaks[iv + 1], nodes, weights);
    const std::size_t mu = span(0.5 * (breaks[iv] + breaks[iv + 1]));
    const auto first = static_cast<Eigen::Index>(mu - degree());
    for (Eigen::Index q = 0; q < nodes.size(); ++q) {
      const Eigen::VectorXd v = local_derivatives(nodes[q], mu, deriv).row(static_cast<Eigen::Index>(deriv)).transpose();
      out.block(first, first, v.size(), v.size()) += weights[q] * (v * v.transpose());
    }
  }
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd BSplineBasis::penalty_matrix(std::size_t derivative_order) const {
  if (order_ <= derivative_order)
    fail(ErrorCode::OrderTooLow, "order " + std::to_string(order_) + " cannot carry a derivative penalty of order " +
                                     std::to_string(derivative_order));
  return integrate_products(derivative_order);
}

Eigen::MatrixXd BSplineBasis::gram_matrix() const { return integrate_products(0); }

double PenalizedCurve::value(double t) const { return basis.evaluate(t).dot(coefficients); }

GridCurve PenalizedCurve::on_grid(const Eigen::VectorXd& grid) const {
  return {grid, basis.design_matrix(grid) * coefficients};
}

double PenalizedCurve::roughness() const {
  return coefficients.dot(basis.penalty_matrix(2) * coefficients);
}

namespace {

// Square root R of a PSD matrix, R'R = P, from its eigendecomposition. Roundoff
// eigenvalues are zeroed so the null space stays unpenalized under large lambda.
Eigen::MatrixXd psd_root(const Eigen::MatrixXd& p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  const double floor = 1e-12 * es.eigenvalues().cwiseAbs().maxCoeff();
  const Eigen::VectorXd d = (es.eigenvalues().array() > floor).select(es.eigenvalues().cwiseSqrt(), 0.0);
  return d.asDiagonal() * es.eigenvectors().transpose();
}

// Solves min ||y - Bx||^2 + lambda x'Px by QR of the stacked matrix [B; sqrt(lambda) R],
// which avoids squaring the condition number of the normal equations. A tiny
// ridge is stacked on when the system is rank deficient.
class PenalizedSolver {
 public:
  PenalizedSolver(const Eigen::MatrixXd& B, const Eigen::MatrixXd& root, double lambda) : rows_(B.rows()) {
    const Eigen::Index p = B.cols();
    Eigen::MatrixXd stacked(rows_ + (lambda > 0.0 ? root.rows() : 0), p);
    stacked.topRows(rows_) = B;
    if (lambda > 0.0) stacked.bottomRows(root.rows()) = std::sqrt(lambda) * root;
    qr_.compute(stacked);
    if (qr_.rank() < p) {
      const double ridge = 1e-10 * std::max(1.0, stacked.colwise().squaredNorm().mean());
      Eigen::MatrixXd padded(stacked.rows() + p, p);
      padded << stacked, std::sqrt(ridge) * Eigen::MatrixXd::Identity(p, p);
      qr_.compute(padded);
      if (qr_.rank() < p) fail(ErrorCode::SingularSystem, "penalized least squares is singular after ridge fallback");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(qr_.rows());
    rhs.head(rows_) = y;
    return qr_.solve(rhs);
  }

  // tr(B (A)^-1 B') = ||B R^-1||_F^2 with R the triangular factor.
  double hat_trace(const Eigen::MatrixXd& B) const {
    const Eigen::Index p = B.cols();
    const Eigen::MatrixXd r = qr_.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd bp = B * qr_.colsPermutation();
    const Eigen::MatrixXd z = r.transpose().triangularView<Eigen::Lower>().solve(bp.transpose());
    return z.squaredNorm();
  }

 private:
  Eigen::Index rows_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

void check_fit_inputs(const Eigen::VectorXd& points, const Eigen::VectorXd& values, double lambda) {
  if (points.size() == 0) fail(ErrorCode::EmptyDataset, "no observations to smooth");
  if (points.size() != values.size()) fail(ErrorCode::InvalidArgument, "points and values differ in length");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorCode::InvalidArgument, "lambda must be finite and >= 0");
  if (!values.allFinite()) fail(ErrorCode::NonFiniteEntries, "values to smooth");
}

}  // namespace

PenalizedCurve smooth_penalized(const Eigen::VectorXd& points, const Eigen::VectorXd& values,
                                const BSplineBasis& basis, double lambda) {
  check_fit_inputs(points, values, lambda);
  const Eigen::MatrixXd B = basis.design_matrix(points);
  const Eigen::MatrixXd root = lambda > 0.0 ? psd_root(basis.penalty_matrix(2)) : Eigen::MatrixXd();
  return {basis, PenalizedSolver(B, root, lambda).solve(values), lambda};
}

PenalizedCurve smooth_penalized(const SparseFunctionalSample& sample, const BSplineBasis& basis, double lambda) {
  const auto n = static_cast<Eigen::Index>(sample.size());
  return smooth_penalized(Eigen::Map<const Eigen::VectorXd>(sample.times.data(), n),
                          Eigen::Map<const Eigen::VectorXd>(sample.values.data(), n), basis, lambda);
}

PenalizedCurve smooth_penalized(const GridCurve& curve, const BSplineBasis& basis, double lambda) {
  return smooth_penalized(curve.grid, curve.values, basis, lambda);
}

LambdaChoice gcv_lambda(const Eigen::VectorXd& points, const Eigen::VectorXd& values, const BSplineBasis& basis,
                        const std::vector<double>& candidates) {
  if (candidates.size() < 2) fail(ErrorCode::InvalidArgument, "GCV needs at least two lambda candidates");
  if (points.size() < 2) fail(ErrorCode::InvalidArgument, "GCV needs at least two observations");
  check_fit_inputs(points, values, 0.0);
  for (double l : candidates)
    if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorCode::InvalidArgument, "lambda candidates must be finite and >= 0");

  const Eigen::MatrixXd B = basis.design_matrix(points);
  const Eigen::MatrixXd root = psd_root(basis.penalty_matrix(2));
  const auto n = static_cast<double>(points.size());

  LambdaChoice out;
  out.candidates = candidates;
  for (double lambda : candidates) {
    double score = std::numeric_limits<double>::infinity();
    try {
      const PenalizedSolver solver(B, root, lambda);
      const Eigen::VectorXd x = solver.solve(values);
      const double trace = solver.hat_trace(B);
      const double rss = (values - B * x).squaredNorm();
      const double room = n - trace;
      if (room > 1e-10 * n) score = n * rss / (room * room);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularSystem) throw;
    }
    out.scores.push_back(score);
  }
  int best = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double s = out.scores[i];
    if (!std::isfinite(s)) continue;
    if (best < 0 || s < out.scores[static_cast<std::size_t>(best)] ||
        (s == out.scores[static_cast<std::size_t>(best)] && candidates[i] > candidates[static_cast<std::size_t>(best)]))
      best = static_cast<int>(i);
  }
  if (best < 0) fail(ErrorCode::DegenerateTrace, "tr(H) >= n for every lambda candidate");
  out.lambda = candidates[static_cast<std::size_t>(best)];
  return out;
}

LambdaChoice gcv_lambda(const GridCurve& curve, const BSplineBasis& basis, const std::vector<double>& candidates) {
  return gcv_lambda(curve.grid, curve.values, basis, candidates);
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0 && hi >= lo) || count == 0) fail(ErrorCode::InvalidArgument, "log_spaced needs 0 < lo <= hi and count > 0");
  std::vector<double> out;
  if (count == 1) return {lo};
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1)));
  return out;
}

std::vector<PenalizedCurve> smooth_curves(const std::vector<GridCurve>& curves, const BSplineBasis& basis,
                                          const std::vector<double>& candidates) {
  if (candidates.empty()) fail(ErrorCode::InvalidArgument, "no smoothing parameter given");
  std::vector<PenalizedCurve> out(curves.size(), PenalizedCurve{basis, {}, 0.0});
  std::vector<std::string> errors(curves.size());
  const auto n = static_cast<long>(curves.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto& c = curves[static_cast<std::size_t>(i)];
    try {
      const double lambda = candidates.size() > 1 ? gcv_lambda(c, basis, candidates).lambda : candidates.front();
      out[static_cast<std::size_t>(i)] = smooth_penalized(c, basis, lambda);
    } catch (const Error& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) fail(ErrorCode::SingularSystem, "curve " + std::to_string(i) + ": " + errors[i]);
  return out;
}

void export_basis(const BSplineBasis& basis, const Eigen::VectorXd& grid, const std::filesystem::path& dir) {
  nlohmann::ordered_json meta;
  meta["n_basis"] = basis.n_basis();
  meta["order"] = basis.order();
  meta["knots"] = basis.knots();
  meta["penalty_derivative_order"] = 2;
  io::write_file(dir / "basis.json", meta.dump(2) + "\n");

  auto matrix_csv = [](const Eigen::MatrixXd& m, const std::string& first) {
    std::string text = first;
    for (Eigen::Index c = 0; c < m.cols(); ++c) text += ",b" + std::to_string(c + 1);
    text += '\n';
    return text;
  };
  const Eigen::MatrixXd design = basis.design_matrix(grid);
  std::string text = matrix_csv(design, "t");
  for (Eigen::Index r = 0; r < design.rows(); ++r) {
    text += io::format_double(grid[r]);
    for (Eigen::Index c = 0; c < design.cols(); ++c) text += "," + io::format_double(design(r, c));
    text += '\n';
  }
  io::write_file(dir / "design.csv", text);

  const Eigen::MatrixXd penalty = basis.penalty_matrix(2);
  text = matrix_csv(penalty, "row");
  for (Eigen::Index r = 0; r < penalty.rows(); ++r) {
    text += "b" + std::to_string(r + 1);
    for (Eigen::Index c = 0; c < penalty.cols(); ++c) text += "," + io::format_double(penalty(r, c));
    text += '\n';
  }
  io::write_file(dir / "penalty.csv", text);
}

}  // namespace fpanel
