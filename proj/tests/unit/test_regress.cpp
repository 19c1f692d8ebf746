#include "fpanel/regress.hpp"
#include "support/expect_error.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace fpanel;

namespace {

const Eigen::VectorXd kGrid = uniform_grid(51);

Eigen::MatrixXd noise(Eigen::Index rows, Eigen::Index cols, double sd, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

// Y = beta(t) X(t) + noise on the rich predictor fixture.
RegressionData concurrent_data(const std::function<double(double)>& beta, std::size_t n, double sd,
                               std::uint64_t seed = fixtures::kSeed) {
  const KlSample x = generate_kl(fixtures::rich_predictor(seed), n, kGrid);
  Eigen::MatrixXd y = x.truth;
  for (Eigen::Index j = 0; j < kGrid.size(); ++j) y.col(j) *= beta(kGrid[j]);
  y += noise(y.rows(), y.cols(), sd, seed + 1);
  RegressionData d;
  d.response = fixtures::curve_set(y, kGrid);
  d.predictors["X"] = fixtures::curve_set(x.truth, kGrid);
  return d;
}

RegressionSpec spec_for(std::vector<TermSpec> terms, std::size_t k = 10) {
  RegressionSpec s;
  s.terms = std::move(terms);
  s.kx = s.ky = k;
  return s;
}

TermSpec term(const std::string& x, TermKind kind, std::optional<std::string> scalar = std::nullopt) {
  return {x, kind, std::move(scalar)};
}

}  // namespace

TEST(FofRegress, InterceptOnlyIsCrossSectionalMean) {
  const KlSample x = generate_kl(fixtures::rich_predictor(), 40, kGrid);
  RegressionData d;
  d.response = fixtures::curve_set(x.truth, kGrid);
  const RegressionFit fit = fit_regression(d, spec_for({}));
  const Eigen::VectorXd mean = x.truth.colwise().mean().transpose();
  EXPECT_LT((fit.alpha.values - mean).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(fit.residuals.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
  // Sine components vanish at both ends, so every curve equals the mean there.
  const GridCurve r2 = r2_functional(fit);
  EXPECT_TRUE(std::isnan(r2.values[0]) && std::isnan(r2.values[50]));
  EXPECT_LT(r2.values.segment(1, 49).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FofRegress, DiagonalTruthConcentratesSurfaceNearDiagonal) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 200, 0.3);
  const RegressionFit fit = fit_mflm(d, spec_for({term("X", TermKind::Surface)}));
  const Eigen::MatrixXd& b = fit.terms[0].surface;
  double near = 0, far = 0;
  int n_near = 0, n_far = 0;
  for (Eigen::Index s = 0; s < b.rows(); ++s)
    for (Eigen::Index t = 0; t < b.cols(); ++t) {
      const double gap = std::abs(kGrid[s] - kGrid[t]);
      if (gap <= 0.1 + 1e-12) near += std::abs(b(s, t)), ++n_near;
      if (gap > 0.3) far += std::abs(b(s, t)), ++n_far;
    }
  EXPECT_LT(far / n_far, 0.25 * near / n_near);
  // Residual mean vanishes with an intercept.
  EXPECT_LT(fit.residuals.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FofRegress, ConcurrentRecoversConstantCoefficient) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 200, 0.3);
  const RegressionFit fit = fit_concurrent(d, spec_for({term("X", TermKind::Concurrent)}));
  for (Eigen::Index j = 0; j < kGrid.size(); ++j)
    if (kGrid[j] >= 0.1 - 1e-12 && kGrid[j] <= 0.9 + 1e-12) EXPECT_NEAR(fit.terms[0].beta_t[j], 2.0, 0.2) << kGrid[j];
  const GridCurve r2 = r2_functional(fit);
  for (Eigen::Index j = 0; j < r2.values.size(); ++j)
    if (std::isfinite(r2.values[j])) EXPECT_LE(r2.values[j], 1.0);
}

TEST(FofRegress, ConcurrentAndSurfaceAgreeInSign) {
  const auto beta = [](double t) { return 2.0 * std::sin(2.0 * std::numbers::pi * t); };
  const RegressionData d = concurrent_data(beta, 200, 0.3);
  const RegressionFit conc = fit_concurrent(d, spec_for({term("X", TermKind::Concurrent)}));
  const RegressionFit surf = fit_mflm(d, spec_for({term("X", TermKind::Surface)}));
  int checked = 0, agree = 0;
  for (Eigen::Index t = 0; t < kGrid.size(); ++t) {
    if (std::abs(beta(kGrid[t])) <= 0.5) continue;
    double mass = 0.0;
    for (Eigen::Index s = 0; s < kGrid.size(); ++s)
      if (std::abs(kGrid[s] - kGrid[t]) <= 0.1 + 1e-12) mass += surf.terms[0].surface(s, t);
    ++checked;
    agree += (mass > 0) == (conc.terms[0].beta_t[t] > 0) && (mass > 0) == (beta(kGrid[t]) > 0);
  }
  ASSERT_GT(checked, 20);
  EXPECT_GE(agree, 0.95 * checked);
}

TEST(FofRegress, ZeroAndDuplicatePredictorsAreCollinear) {
  RegressionData d = concurrent_data([](double) { return 1.0; }, 60, 0.3);
  RegressionData zero = d;
  zero.predictors["X"].values.setZero();
  EXPECT_CODE(CollinearPredictors, fit_concurrent(zero, spec_for({term("X", TermKind::Concurrent)})));
  d.predictors["X2"] = d.predictors["X"];
  EXPECT_CODE(CollinearPredictors,
              fit_concurrent(d, spec_for({term("X", TermKind::Concurrent), term("X2", TermKind::Concurrent)})));
  EXPECT_CODE(CollinearPredictors,
              fit_mflm(d, spec_for({term("X", TermKind::Surface), term("X2", TermKind::Surface)})));
}

TEST(FofRegress, DegenerateSubjectScalars) {
  RegressionData d = concurrent_data([](double) { return 1.0; }, 60, 0.3);
  const auto base = spec_for({term("X", TermKind::Concurrent)});
  d.scalars["M"] = Eigen::VectorXd::Zero(60);
  EXPECT_CODE(CollinearPredictors, fit_concurrent(d, attach_interaction(base, "X", "M", d, TermKind::Concurrent)));
  d.scalars["M"] = Eigen::VectorXd::Ones(60);
  EXPECT_CODE(CollinearPredictors, fit_concurrent(d, attach_interaction(base, "X", "M", d, TermKind::Concurrent)));
  d.scalars["M"][3] = std::nan("");
  EXPECT_CODE(MissingScalar, attach_interaction(base, "X", "M", d, TermKind::Concurrent));
  EXPECT_CODE(MissingScalar, attach_interaction(base, "X", "absent", d, TermKind::Concurrent));
}

TEST(FofRegress, PredictReproducesTrainingFitAndMean) {
  const RegressionData d = concurrent_data([](double t) { return 1.0 + t; }, 80, 0.3);
  for (const auto& spec : {spec_for({term("X", TermKind::Surface)}), spec_for({term("X", TermKind::Concurrent)})}) {
    const RegressionFit fit = fit_regression(d, spec);
    EXPECT_LT((predict(fit, d.predictors) - fit.fitted).cwiseAbs().maxCoeff(), 1e-10);
    std::map<std::string, CurveSet> at_mean = d.predictors;
    CurveSet& x = at_mean["X"];
    const Eigen::RowVectorXd xbar = x.values.colwise().mean();
    x = fixtures::curve_set(xbar, kGrid);
    const Eigen::RowVectorXd ybar = d.response.values.colwise().mean();
    EXPECT_LT((predict(fit, at_mean).row(0) - ybar).cwiseAbs().maxCoeff(), 1e-8);
    at_mean["X"].grid = uniform_grid(41);
    EXPECT_CODE(GridMismatch, predict(fit, at_mean));
  }
}

TEST(FofRegress, PredictionIsLinearInTheCenteredPredictor) {
  FofTruth truth;
  truth.surface = [](double s, double t) { return std::sin(std::numbers::pi * s) * std::cos(std::numbers::pi * t); };
  const FofSample fs = generate_fof(truth, fixtures::rich_predictor(), 150, kGrid);
  RegressionData d;
  d.response = fixtures::curve_set(fs.y_observed, kGrid);
  d.predictors["X"] = fixtures::curve_set(fs.x.truth, kGrid);
  const RegressionFit fit = fit_mflm(d, spec_for({term("X", TermKind::Surface)}));
  const Eigen::RowVectorXd xbar = fs.x.truth.colwise().mean();
  const Eigen::RowVectorXd ybar = fs.y_observed.colwise().mean();
  std::map<std::string, CurveSet> twice = d.predictors;
  twice["X"].values = (2.0 * (fs.x.truth.rowwise() - xbar)).rowwise() + xbar;
  const Eigen::MatrixXd p1 = predict(fit, d.predictors).rowwise() - ybar;
  const Eigen::MatrixXd p2 = predict(fit, twice).rowwise() - ybar;
  EXPECT_LT((p2 - 2.0 * p1).cwiseAbs().maxCoeff(), 1e-9);
  // The fine-quadrature truth of the doubled, centered curves is twice the centered truth.
  const Eigen::MatrixXd oracle = 2.0 * (fs.y_truth.rowwise() - fs.y_truth.colwise().mean());
  EXPECT_LT((p2 - oracle).norm() / oracle.norm(), 0.05);
}

TEST(R2Functional, PerfectFitAndUpperBound) {
  RegressionFit fit;
  fit.grid = kGrid;
  fit.response = generate_kl(fixtures::rich_predictor(), 30, kGrid).truth.middleCols(1, 49);
  fit.grid = kGrid.segment(1, 49);
  fit.fitted = fit.response;
  fit.residuals = Eigen::MatrixXd::Zero(30, 49);
  const GridCurve r2 = r2_functional(fit);
  EXPECT_LT((r2.values.array() - 1.0).abs().maxCoeff(), 1e-15);
  fit.response.setConstant(3.0);
  EXPECT_TRUE(std::isnan(r2_functional(fit).values[10]));
}

TEST(R2Functional, SignalToNoiseFourToOne) {
  // X_i(t) = z_i with Var z = 1 and noise variance 1/4: population R^2 = 0.8.
  const std::size_t n = 300;
  Rng rng(fixtures::kSeed);
  Eigen::MatrixXd x(n, kGrid.size()), y(n, kGrid.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.normal();
    for (Eigen::Index j = 0; j < kGrid.size(); ++j) {
      x(static_cast<Eigen::Index>(i), j) = z + 0.3 * std::sin(std::numbers::pi * kGrid[j]);
      y(static_cast<Eigen::Index>(i), j) = z + 0.5 * rng.normal();
    }
  }
  RegressionData d;
  d.response = fixtures::curve_set(y, kGrid);
  d.predictors["X"] = fixtures::curve_set(x, kGrid);
  const RegressionFit fit = fit_concurrent(d, spec_for({term("X", TermKind::Concurrent)}));
  const double mean_r2 = r2_functional(fit).values.mean();
  EXPECT_GE(mean_r2, 0.7);
  EXPECT_LE(mean_r2, 0.9);
}

TEST(FofRegress, HeavyPenaltyFlattensSurface) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 150, 0.3);
  auto spec = spec_for({term("X", TermKind::Surface)});
  spec.penalty_grid = {1e-8};
  const RegressionFit loose = fit_mflm(d, spec);
  spec.penalty_grid = {1e9};
  const RegressionFit tight = fit_mflm(d, spec);
  const double r_loose = surface_roughness(loose, loose.terms[0]);
  const double r_tight = surface_roughness(tight, tight.terms[0]);
  EXPECT_GT(r_loose, 0.0);
  EXPECT_LT(r_tight, 1e-6 * r_loose);
}

TEST(FofRegress, LinearInTheResponseAtFixedPenalty) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 100, 0.3);
  RegressionData w = d, combo = d;
  w.response.values = noise(100, kGrid.size(), 1.0, 99);
  combo.response.values = 1.5 * d.response.values - 0.7 * w.response.values;
  for (TermKind kind : {TermKind::Surface, TermKind::Concurrent}) {
    auto spec = spec_for({term("X", kind)});
    spec.penalty_grid = {0.01};
    const RegressionFit a = fit_regression(d, spec), b = fit_regression(w, spec), c = fit_regression(combo, spec);
    const Eigen::MatrixXd expect = 1.5 * a.terms[0].coefficients - 0.7 * b.terms[0].coefficients;
    EXPECT_LT((c.terms[0].coefficients - expect).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((c.alpha.values - (1.5 * a.alpha.values - 0.7 * b.alpha.values)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FofRegress, ShiftingAPredictorChangesNothingButCentering) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 100, 0.3);
  RegressionData shifted = d;
  shifted.predictors["X"].values.array() += 5.0;
  for (TermKind kind : {TermKind::Surface, TermKind::Concurrent}) {
    const RegressionFit a = fit_regression(d, spec_for({term("X", kind)}));
    const RegressionFit b = fit_regression(shifted, spec_for({term("X", kind)}));
    EXPECT_EQ(a.terms[0].lambda, b.terms[0].lambda);
    EXPECT_LT((a.terms[0].coefficients - b.terms[0].coefficients).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((a.alpha.values - b.alpha.values).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((b.terms[0].center.array() - a.terms[0].center.array() - 5.0).abs().maxCoeff(), 1e-8);
  }
}

TEST(FofRegress, RejectsBadSpecs) {
  const RegressionData d = concurrent_data([](double) { return 2.0; }, 40, 0.3);
  auto spec = spec_for({term("X", TermKind::Surface)});
  spec.penalty_grid.clear();
  EXPECT_CODE(NoPenaltyCandidates, fit_regression(d, spec));
  EXPECT_CODE(UnknownVariable, fit_regression(d, spec_for({term("Q", TermKind::Surface)})));
  RegressionData other = d;
  other.predictors["X"].subjects[0] = "elsewhere";
  EXPECT_CODE(SubjectMismatch, fit_regression(other, spec_for({term("X", TermKind::Surface)})));
  EXPECT_EQ(parse_term_kind("concurrent"), TermKind::Concurrent);
  EXPECT_CODE(InvalidConfig, parse_term_kind("historical"));
  EXPECT_EQ(parse_penalty_mode("literal"), PenaltyMode::Literal);
}
