#include "fpanel/bspline.hpp"
#include "fpanel/synth.hpp"
#include "support/expect_error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fpanel;

namespace {

// Textbook Cox-de Boor recursion with the right-closed last interval.
double cox_de_boor(const std::vector<double>& u, std::size_t i, std::size_t k, double t) {
  if (k == 1) {
    if (u[i] <= t && t < u[i + 1]) return 1.0;
    const bool last = t == u.back() && u[i] < u[i + 1] && u[i + 1] == u.back();
    return last ? 1.0 : 0.0;
  }
  double out = 0.0;
  if (u[i + k - 1] > u[i]) out += (t - u[i]) / (u[i + k - 1] - u[i]) * cox_de_boor(u, i, k - 1, t);
  if (u[i + k] > u[i + 1]) out += (u[i + k] - t) / (u[i + k] - u[i + 1]) * cox_de_boor(u, i + 1, k - 1, t);
  return out;
}

Eigen::VectorXd greville(const BSplineBasis& b) {
  const auto& u = b.knots();
  Eigen::VectorXd g(static_cast<Eigen::Index>(b.n_basis()));
  for (std::size_t j = 0; j < b.n_basis(); ++j) {
    double s = 0.0;
    for (std::size_t m = 1; m < b.order(); ++m) s += u[j + m];
    g[static_cast<Eigen::Index>(j)] = b.order() > 1 ? s / static_cast<double>(b.order() - 1) : u[j];
  }
  return g;
}

// Least-squares coefficients of f on a dense grid; exact for f in the spline space.
template <class F>
Eigen::VectorXd coefficients_of(const BSplineBasis& b, F f) {
  const Eigen::VectorXd t = uniform_grid(401);
  Eigen::VectorXd y(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) y[i] = f(t[i]);
  return b.design_matrix(t).colPivHouseholderQr().solve(y);
}

Eigen::VectorXd noisy_sine(const Eigen::VectorXd& t, std::uint64_t seed, double sd) {
  Rng rng(seed);
  Eigen::VectorXd y(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) y[i] = std::sin(2 * std::numbers::pi * t[i]) + sd * rng.normal();
  return y;
}

}  // namespace

TEST(BSpline, PartitionOfUnity) {
  for (std::size_t order : {1u, 2u, 3u, 4u}) {
    const BSplineBasis b(12, order);
    for (int i = 0; i <= 1000; ++i) {
      const Eigen::VectorXd v = b.evaluate(i / 1000.0);
      EXPECT_NEAR(v.sum(), 1.0, 1e-12) << "order " << order << " t " << i / 1000.0;
      EXPECT_GE(v.minCoeff(), -1e-15);
    }
  }
}

TEST(BSpline, OrderOneIsIntervalIndicator) {
  const BSplineBasis b(4, 1);
  EXPECT_EQ(b.evaluate(0.3), Eigen::Vector4d(0, 1, 0, 0));
  EXPECT_EQ(b.evaluate(0.0), Eigen::Vector4d(1, 0, 0, 0));
  EXPECT_EQ(b.evaluate(1.0), Eigen::Vector4d(0, 0, 0, 1));
}

TEST(BSpline, MatchesCoxDeBoorRecursion) {
  const BSplineBasis b(9, 4);
  for (int i = 0; i <= 200; ++i) {
    const double t = i / 200.0;
    const Eigen::VectorXd v = b.evaluate(t);
    for (std::size_t j = 0; j < b.n_basis(); ++j)
      EXPECT_NEAR(v[static_cast<Eigen::Index>(j)], cox_de_boor(b.knots(), j, b.order(), t), 1e-13) << t << " " << j;
  }
}

TEST(BSpline, DerivativeMatchesFiniteDifference) {
  const BSplineBasis b(10, 4);
  const double h = 1e-6;
  for (double t : {0.1, 0.37, 0.5, 0.83}) {
    const Eigen::VectorXd fd = (b.evaluate(t + h) - b.evaluate(t - h)) / (2 * h);
    EXPECT_LT((b.evaluate(t, 1) - fd).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(BSpline, DomainAndOrderErrors) {
  const BSplineBasis b(8, 4);
  EXPECT_CODE(PointOutsideDomain, b.evaluate(1.1));
  EXPECT_CODE(PointOutsideDomain, b.design_matrix(Eigen::Vector2d(0.5, -0.01)));
  EXPECT_CODE(OrderTooLow, BSplineBasis(6, 2).penalty_matrix(2));
  EXPECT_CODE(InvalidArgument, BSplineBasis(3, 4));
}

TEST(Penalty, SymmetricPsdWithLinearNullSpace) {
  const BSplineBasis b(15, 4);
  const Eigen::MatrixXd P = b.penalty_matrix(2);
  EXPECT_LT((P - P.transpose()).cwiseAbs().maxCoeff(), 1e-12 * P.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  EXPECT_GE(ev.minCoeff(), -1e-10 * top);
  int null = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) null += ev[i] < 1e-10 * top;
  EXPECT_EQ(null, 2);
}

TEST(Penalty, LineHasZeroRoughness) {
  const BSplineBasis b(15, 4);
  // Greville abscissae reproduce the identity exactly.
  const Eigen::VectorXd x = 3.0 * greville(b).array() - 1.0;
  EXPECT_NEAR(x.dot(b.penalty_matrix(2) * x), 0.0, 1e-9);
}

TEST(Penalty, QuadraticCurvature) {
  const BSplineBasis b(11, 4);
  for (double c : {1.0, -2.5, 7.0}) {
    const Eigen::VectorXd x = coefficients_of(b, [c](double t) { return 0.5 * c * t * t - t; });
    EXPECT_NEAR(x.dot(b.penalty_matrix(2) * x), c * c, 1e-8 * c * c);
  }
}

TEST(Penalty, GramIntegratesProducts) {
  const BSplineBasis b(9, 4);
  const Eigen::VectorXd x = coefficients_of(b, [](double t) { return t; });
  EXPECT_NEAR(x.dot(b.gram_matrix() * x), 1.0 / 3.0, 1e-12);
}

TEST(PenalizedFit, InterpolatesAtZeroLambda) {
  const BSplineBasis b(12, 4);
  const Eigen::VectorXd t = greville(b);
  const Eigen::VectorXd y = noisy_sine(t, 1, 0.2);
  const PenalizedCurve fit = smooth_penalized(t, y, b, 0.0);
  for (Eigen::Index i = 0; i < t.size(); ++i) EXPECT_NEAR(fit.value(t[i]), y[i], 1e-8);
}

TEST(PenalizedFit, HugeLambdaGivesLeastSquaresLine) {
  const BSplineBasis b(12, 4);
  const Eigen::VectorXd t = uniform_grid(41);
  const Eigen::VectorXd y = noisy_sine(t, 2, 0.1);
  const PenalizedCurve fit = smooth_penalized(t, y, b, 1e9);
  Eigen::MatrixXd X(t.size(), 2);
  X.col(0).setOnes();
  X.col(1) = t;
  const Eigen::Vector2d line = X.colPivHouseholderQr().solve(y);
  for (double s : {0.0, 0.3, 0.7, 1.0}) EXPECT_NEAR(fit.value(s), line[0] + line[1] * s, 1e-3);
  EXPECT_LT(fit.roughness(), 1e-6);
}

TEST(PenalizedFit, ConstantStaysConstant) {
  const BSplineBasis b(10, 4);
  const Eigen::VectorXd t = uniform_grid(27);
  for (double lambda : {0.0, 1e-4, 1.0, 1e6}) {
    const PenalizedCurve fit = smooth_penalized(t, Eigen::VectorXd::Constant(t.size(), 2.5), b, lambda);
    for (double s : {0.0, 0.41, 1.0}) EXPECT_NEAR(fit.value(s), 2.5, 1e-9);
  }
}

TEST(PenalizedFit, LinearInTheData) {
  const BSplineBasis b(10, 4);
  const Eigen::VectorXd t = uniform_grid(27);
  const Eigen::VectorXd y1 = noisy_sine(t, 3, 0.3), y2 = noisy_sine(t, 4, 0.3);
  const double lambda = 1e-3;
  const Eigen::VectorXd lhs = smooth_penalized(t, 2.0 * y1 - 0.5 * y2, b, lambda).coefficients;
  const Eigen::VectorXd rhs =
      2.0 * smooth_penalized(t, y1, b, lambda).coefficients - 0.5 * smooth_penalized(t, y2, b, lambda).coefficients;
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Gcv, PicksInteriorMinimumBelowHeavySmoothing) {
  const BSplineBasis b(15, 4);
  const Eigen::VectorXd t = uniform_grid(60);
  const Eigen::VectorXd y = noisy_sine(t, 5, 0.3);
  const LambdaChoice c = gcv_lambda(t, y, b, log_spaced(1e-8, 1e2, 11));
  ASSERT_EQ(c.scores.size(), 11u);
  for (double s : c.scores) EXPECT_GE(s, c.scores[static_cast<std::size_t>(
                                             std::find(c.candidates.begin(), c.candidates.end(), c.lambda) -
                                             c.candidates.begin())]);
  const LambdaChoice pair = gcv_lambda(t, y, b, {c.lambda, 1e6 * c.lambda});
  EXPECT_LT(pair.scores[0], pair.scores[1]);
  EXPECT_EQ(pair.lambda, c.lambda);
}

TEST(Gcv, TiesAndDuplicatesGoToLargerLambda) {
  const BSplineBasis b(8, 4);
  const Eigen::VectorXd t = uniform_grid(20);
  // Zero data: RSS is exactly zero for every lambda.
  const LambdaChoice zero = gcv_lambda(t, Eigen::VectorXd::Zero(t.size()), b, {1e-4, 1e-2, 1.0});
  EXPECT_EQ(zero.lambda, 1.0);
  const Eigen::VectorXd y = noisy_sine(t, 6, 0.2);
  const LambdaChoice dup = gcv_lambda(t, y, b, {1e-3, 1e-3});
  EXPECT_EQ(dup.lambda, 1e-3);
  EXPECT_EQ(dup.scores[0], dup.scores[1]);
}

TEST(Gcv, DegenerateTraceAndBadCandidates) {
  const BSplineBasis b(10, 4);
  const Eigen::VectorXd t = greville(b);
  EXPECT_CODE(DegenerateTrace, gcv_lambda(t, noisy_sine(t, 7, 0.1), b, {0.0, 0.0}));
  EXPECT_CODE(InvalidArgument, gcv_lambda(t, noisy_sine(t, 7, 0.1), b, {1.0}));
  EXPECT_CODE(InvalidArgument, gcv_lambda(t, noisy_sine(t, 7, 0.1), b, {1.0, -1.0}));
}

TEST(Gcv, LogSpacedEndpoints) {
  const auto g = log_spaced(1e-6, 1.0, 7);
  ASSERT_EQ(g.size(), 7u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-6);
  EXPECT_DOUBLE_EQ(g.back(), 1.0);
  EXPECT_NEAR(g[3], 1e-3, 1e-15);
}

TEST(SmoothCurves, MatchesOneAtATime) {
  const BSplineBasis b(12, 4);
  const Eigen::VectorXd t = uniform_grid(27);
  std::vector<GridCurve> curves;
  for (std::uint64_t s = 10; s < 30; ++s) curves.push_back({t, noisy_sine(t, s, 0.2)});
  const auto grid = log_spaced(1e-6, 1.0, 7);
  const auto all = smooth_curves(curves, b, grid);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const double lambda = gcv_lambda(curves[i], b, grid).lambda;
    EXPECT_EQ(all[i].lambda, lambda);
    EXPECT_TRUE(all[i].coefficients == smooth_penalized(curves[i], b, lambda).coefficients);
  }
}
