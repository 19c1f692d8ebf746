// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
// usage: acceptance <fpanel executable> <source dir> <scratch dir>

#include "../support/fixtures.hpp"

#include "fpanel/cluster.hpp"
#include "fpanel/error.hpp"
#include "fpanel/fpca.hpp"
#include "fpanel/io.hpp"
#include "fpanel/panel.hpp"
#include "fpanel/regress.hpp"
#include "fpanel/static_fe.hpp"
#include "fpanel/synth.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace fpanel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Args {
  fs::path exe;
  fs::path source;
  fs::path scratch;
};

// 1. Dense, noiseless standard fixture: PACE against the direct eigendecomposition.
void dense_oracle(Outcome& o) {
  const auto start = Clock::now();
  const Eigen::VectorXd grid = uniform_grid(51);
  const KlSample s = generate_kl(fixtures::dense_truth(51), 100, grid);
  PaceConfig cfg;
  const FpcaFit fit = fit_pace(s.data, cfg);
  const DenseEigen oracle = dense_fpca_oracle(s.truth, grid);
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double rel = std::abs(fit.eigen.eigenvalues[k] - oracle.eigenvalues[k]) / oracle.eigenvalues[k];
    Eigen::VectorXd a = fit.eigen.eigenfunctions.col(k), b = oracle.eigenfunctions.col(k);
    if (a.dot(b) < 0) a = -a;
    const double l2 = fixtures::grid_l2(grid, a, b);
    o.detail << " lambda" << k + 1 << " rel.err=" << fmt(rel) << " phi" << k + 1 << " L2=" << fmt(l2);
    o.check(rel < 0.05, "eigenvalue " + std::to_string(k + 1) + " within 5%");
    o.check(l2 < 0.1, "eigenfunction " + std::to_string(k + 1) + " L2 < 0.1");
  }
  const double t = seconds_since(start);
  o.detail << " h_mu=" << fmt(fit.smoothing.mean_kernel.bandwidth) << " h_G=" << fmt(fit.smoothing.cov_kernel_s.bandwidth)
           << " time=" << fmt(t) << "s";
  o.check(t < 10.0, "runtime < 10 s");
}

// 2. Sparse standard fixture: reconstruction, noise variance and K.
void sparse_recovery(Outcome& o) {
  const auto start = Clock::now();
  const Eigen::VectorXd grid = uniform_grid(51);
  const KlTruth truth = KlTruth::standard();
  const KlSample s = generate_kl(truth, 300, grid);
  PaceConfig cfg;
  const FpcaFit fit = fit_pace(s.data, cfg);
  const Eigen::MatrixXd rec = reconstruct_all(fit);
  double ise_rec = 0.0, ise_mean = 0.0;
  for (Eigen::Index i = 0; i < rec.rows(); ++i) {
    const double a = fixtures::grid_l2(grid, rec.row(i).transpose(), s.truth.row(i).transpose());
    const double b = fixtures::grid_l2(grid, fit.mean().values, s.truth.row(i).transpose());
    ise_rec += a * a;
    ise_mean += b * b;
  }
  const double ratio = ise_rec / ise_mean;
  const double s2 = truth.sigma * truth.sigma;
  const std::size_t K95 = choose_K(fit.eigen.eigenvalues, 0.95);
  const double t = seconds_since(start);
  o.detail << " ISE ratio=" << fmt(ratio) << " sigma2_hat=" << fmt(fit.sigma2) << " (target " << fmt(s2) << ")"
           << " K=" << K95 << " h_mu=" << fmt(fit.smoothing.mean_kernel.bandwidth)
           << " h_G=" << fmt(fit.smoothing.cov_kernel_s.bandwidth) << " time=" << fmt(t) << "s";
  o.check(ratio <= 0.30, "ISE ratio <= 0.30");
  o.check(fit.sigma2 >= 0.5 * s2 && fit.sigma2 <= 1.5 * s2, "sigma2 within [0.5, 1.5] x truth");
  o.check(K95 == 2, "choose_K(0.95) = 2");
  o.check(t < 60.0, "runtime < 60 s");
}

// 3. choose_K on (9, 0.9, 0.1) at 0.99.
void choose_k_exact(Outcome& o) {
  Eigen::VectorXd ev(3);
  ev << 9.0, 0.9, 0.1;
  const std::size_t K = choose_K(ev, 0.99);
  o.detail << " K=" << K;
  o.check(K == 2, "K = 2");
}

// 4. Function-on-function surface recovery from dense noiseless curves.
void fof_surface(Outcome& o) {
  const auto start = Clock::now();
  const Eigen::VectorXd grid = uniform_grid(51);
  FofTruth ft;
  ft.surface = [](double s, double t) { return std::sin(std::numbers::pi * s) * std::cos(std::numbers::pi * t); };
  const FofSample fs = generate_fof(ft, fixtures::rich_predictor(), 300, grid);
  RegressionData data;
  data.response = fixtures::curve_set(fs.y_observed, grid);
  data.predictors["X"] = fixtures::curve_set(fs.x.truth, grid);
  RegressionSpec spec;
  spec.terms.push_back({"X", TermKind::Surface, std::nullopt});
  const RegressionFit fit = fit_mflm(data, spec);
  double se = 0.0;
  for (Eigen::Index a = 0; a < grid.size(); ++a)
    for (Eigen::Index b = 0; b < grid.size(); ++b) {
      const double d = fit.terms[0].surface(a, b) - ft.surface(grid[a], grid[b]);
      se += d * d;
    }
  const double rmse = std::sqrt(se / static_cast<double>(grid.size() * grid.size()));
  const Eigen::MatrixXd centered = fs.y_truth.rowwise() - fs.y_truth.colwise().mean();
  const double r2 = 1.0 - (fit.fitted - fs.y_truth).squaredNorm() / centered.squaredNorm();
  const double t = seconds_since(start);
  o.detail << " RMSE=" << fmt(rmse) << " R2=" << fmt(r2) << " lambda=" << fmt(fit.terms[0].lambda) << " time=" << fmt(t) << "s";
  o.check(rmse <= 0.15, "surface RMSE <= 0.15");
  o.check(r2 >= 0.95, "predicted-curve R2 >= 0.95");
  o.check(t < 120.0, "runtime < 120 s");
}

double value_range(const Eigen::MatrixXd& m) { return m.maxCoeff() - m.minCoeff(); }

double max_central_deviation(const Eigen::VectorXd& grid, const Eigen::VectorXd& beta, double target) {
  double worst = 0.0;
  for (Eigen::Index g = 0; g < grid.size(); ++g)
    if (grid[g] >= 0.1 - 1e-12 && grid[g] <= 0.9 + 1e-12) worst = std::max(worst, std::abs(beta[g] - target));
  return worst;
}

// 5. Concurrent model with a constant planted coefficient.
void concurrent_recovery(Outcome& o) {
  const Eigen::VectorXd grid = uniform_grid(51);
  const KlSample x = generate_kl(fixtures::dense_truth(51), 200, grid);
  const double sigma = 0.1 * value_range(x.truth);
  Rng rng(fixtures::kSeed + 5);
  Eigen::MatrixXd y = 2.0 * x.truth;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index g = 0; g < y.cols(); ++g) y(i, g) += sigma * rng.normal();
  RegressionData data;
  data.response = fixtures::curve_set(y, grid);
  data.predictors["X"] = fixtures::curve_set(x.truth, grid);
  RegressionSpec spec;
  spec.terms.push_back({"X", TermKind::Concurrent, std::nullopt});
  const RegressionFit fit = fit_concurrent(data, spec);
  const double dev = max_central_deviation(grid, fit.terms[0].beta_t, 2.0);
  o.detail << " max|beta-2| on central 80%=" << fmt(dev) << " lambda=" << fmt(fit.terms[0].lambda);
  o.check(dev <= 0.2, "beta within 0.2 of 2");

  data.predictors["X2"] = data.predictors["X"];
  spec.terms.push_back({"X2", TermKind::Concurrent, std::nullopt});
  bool raised = false;
  try {
    fit_concurrent(data, spec);
  } catch (const Error& e) {
    raised = e.code() == ErrorCode::CollinearPredictors;
    o.detail << " duplicate predictor -> " << to_string(e.code());
  }
  o.check(raised, "identical predictors raise CollinearPredictorsAt");
}

// 6. Scalar-modulated coefficient: Y = (1 + m_i) X_i(t) + noise, m_i in {0, 1}.
void interaction_recovery(Outcome& o) {
  const Eigen::VectorXd grid = uniform_grid(51);
  const KlSample x = generate_kl(fixtures::dense_truth(51), 200, grid);
  const double sigma = 0.1 * value_range(x.truth);
  Rng rng(fixtures::kSeed + 6);
  Eigen::VectorXd m(x.truth.rows());
  Eigen::MatrixXd y(x.truth.rows(), x.truth.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    m[i] = static_cast<double>(i % 2);
    for (Eigen::Index g = 0; g < y.cols(); ++g) y(i, g) = (1.0 + m[i]) * x.truth(i, g) + sigma * rng.normal();
  }
  RegressionData data;
  data.response = fixtures::curve_set(y, grid);
  data.predictors["X"] = fixtures::curve_set(x.truth, grid);
  data.scalars["M"] = m;
  RegressionSpec spec;
  spec.terms.push_back({"X", TermKind::Concurrent, std::nullopt});
  spec = attach_interaction(spec, "X", "M", data, TermKind::Concurrent);
  const RegressionFit fit = fit_concurrent(data, spec);
  const double dev = max_central_deviation(grid, fit.term("X_x_M")->beta_t, 1.0);
  o.detail << " max|beta_int-1| on central 80%=" << fmt(dev);
  o.check(dev <= 0.25, "interaction within 0.25 of 1");
}

// 7. Planted clusters: perfect recovery and monotone Lloyd objectives.
void kmeans_planted(Outcome& o) {
  std::size_t perfect = 0, violations = 0;
  double worst = 1.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto planted = fixtures::planted_clusters(1000 + s);
    KMeansOptions opt;
    opt.k = 3;
    opt.seed = 77 + s;
    const ClusterModel model = fkmeans(planted.curves, opt);
    const double ari = adjusted_rand_index(model.assignments, planted.labels);
    worst = std::min(worst, ari);
    if (ari == 1.0) ++perfect;
    for (const auto& tr : model.traces) violations += monotonicity_violations(tr);
  }
  o.detail << " seeds with ARI=1: " << perfect << "/10 (min " << fmt(worst) << "), monotonicity violations=" << violations;
  o.check(perfect == 10, "ARI = 1 for all 10 seeds");
  o.check(violations == 0, "objective nonincreasing");
}

// 8. Static two-way fixed effects.
void static_fe(Outcome& o) {
  PanelTruth exact;
  exact.beta3 = 0.25;
  exact.gamma = {0.3, -0.2};
  exact.sigma = 0.0;
  exact.missing_fraction = 0.1;
  const PanelSample p0 = generate_panel(exact);
  StaticPanelSpec spec;
  spec.controls = p0.controls;
  const StaticPanelFit f0 = fit_static_panel_fe(p0.table, spec);
  const std::vector<double> planted{exact.beta1, exact.beta2, exact.beta3, 0.3, -0.2};
  double err0 = 0.0;
  for (std::size_t k = 0; k < planted.size(); ++k)
    err0 = std::max(err0, std::abs(f0.coefficients[static_cast<Eigen::Index>(k)] - planted[k]));
  o.detail << " zero-noise max err=" << fmt(err0);
  o.check(err0 <= 1e-8, "zero-noise recovery within 1e-8");

  PanelTruth noisy;
  noisy.countries = 40;
  noisy.years = 20;
  const PanelSample p1 = generate_panel(noisy);
  StaticPanelSpec plain;
  plain.interaction = false;
  const StaticPanelFit f1 = fit_static_panel_fe(p1.table, plain);
  const double z1 = std::abs(f1.coefficient("HHI") - noisy.beta1) / f1.std_error("HHI");
  const double z2 = std::abs(f1.coefficient("MCAP") - noisy.beta2) / f1.std_error("MCAP");
  o.detail << " noisy |z|=(" << fmt(z1) << ", " << fmt(z2) << ")";
  o.check(z1 <= 3.0 && z2 <= 3.0, "noisy estimates within 3 SE");

  PanelTruth unbalanced = noisy;
  unbalanced.missing_fraction = 0.2;
  unbalanced.beta3 = 0.1;
  unbalanced.gamma = {0.3, -0.2};
  const PanelSample p2 = generate_panel(unbalanced);
  const StaticPanelFit within = fit_static_panel_fe(p2.table, spec);
  const StaticPanelFit dummy = fit_static_panel_dummy(p2.table, spec);
  const double diff = (within.coefficients - dummy.coefficients).cwiseAbs().maxCoeff();
  const double sdiff = (within.std_errors - dummy.std_errors).cwiseAbs().maxCoeff();
  o.detail << " demeaning-vs-dummy max diff=" << fmt(diff) << " (SE " << fmt(sdiff) << ")";
  o.check(diff <= 1e-8, "demeaning equals dummy path within 1e-8");
}

// 9. Missingness percentages and CSV round trip on the bundled ingest fixture.
void ingest_fidelity(Outcome& o, const Args& args) {
  const fs::path fixture = args.source / "tests" / "data" / "ingest_fixture.csv";
  const PanelTable table = load_panel(fixture, {});
  // Hand counts over the 48 x 27 = 1296-cell cube.
  const std::map<std::string, std::string> expected{
      {"POV", "62.50"}, {"HHI", "12.96"}, {"GDP", "1.00"}, {"MCAP", "31.33"}, {"INF", "1.39"}};
  const auto report = missingness_report(table);
  std::size_t matched = 0;
  for (const auto& row : report) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", row.percent);
    auto it = expected.find(row.variable);
    if (it != expected.end() && it->second == buf) ++matched;
    o.detail << " " << row.variable << "=" << buf;
  }
  o.check(matched == expected.size() && report.size() == expected.size(), "percentages match hand counts");

  const fs::path out = args.scratch / "roundtrip.csv";
  write_panel(table, out);
  const PanelTable back = load_panel(out, table.variables());
  o.check(back == table, "re-read table is cell-identical");
  o.check(io::read_file(out) == format_panel(back), "re-written text is byte-identical");
}

// 10. Pipeline reruns are byte-identical across thread counts; bundled run < 2 min.
void determinism(Outcome& o, const Args& args) {
  const fs::path config = args.source / "configs" / "sample.json";
  const fs::path input = args.source / "data" / "sample_panel.csv";
  std::vector<fs::path> runs;
  double longest = 0.0;
  for (int threads : {1, 4, 1}) {
    const fs::path dir = args.scratch / ("run_" + std::to_string(runs.size()) + "_t" + std::to_string(threads));
    fs::remove_all(dir);
    const std::string cmd = "\"" + args.exe.string() + "\" pipeline --config \"" + config.string() + "\" --input \"" +
                            input.string() + "\" --output \"" + dir.string() + "\" --threads " +
                            std::to_string(threads) + " 2> \"" + (args.scratch / "pipeline.log").string() + "\"";
    const auto start = Clock::now();
    const int rc = std::system(cmd.c_str());
    longest = std::max(longest, seconds_since(start));
    o.check(rc == 0, "pipeline exit code 0 (threads=" + std::to_string(threads) + ")");
    runs.push_back(dir);
  }
  std::size_t files = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), runs[0]);
    ++files;
    const std::string ref = io::read_file(entry.path());
    for (std::size_t r = 1; r < runs.size(); ++r) {
      if (!fs::exists(runs[r] / rel) || io::read_file(runs[r] / rel) != ref) {
        ++differing;
        o.detail << " differs: " << rel.string();
      }
    }
  }
  o.detail << " csv files=" << files << " differing=" << differing << " slowest run=" << fmt(longest) << "s";
  o.check(files > 0, "pipeline produced CSV outputs");
  o.check(differing == 0, "byte-identical CSV outputs");
  o.check(longest < 120.0, "end-to-end run < 2 minutes");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 4) {
    std::cerr << "usage: acceptance <fpanel executable> <source dir> <scratch dir>\n";
    return 2;
  }
  Args args{argv[1], argv[2], argv[3]};
  fs::create_directories(args.scratch);

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"dense-path FPCA oracle equivalence", dense_oracle},
      {"sparse PACE recovery", sparse_recovery},
      {"choose_K exactness", choose_k_exact},
      {"function-on-function surface recovery", fof_surface},
      {"concurrent recovery", concurrent_recovery},
      {"interaction term", interaction_recovery},
      {"functional k-means", kmeans_planted},
      {"static FE benchmark", static_fe},
      {"ingest fidelity", [&](Outcome& o) { ingest_fidelity(o, args); }},
      {"determinism", [&](Outcome& o) { determinism(o, args); }},
  };
  int failures = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    Outcome o;
    try {
      criteria[c].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c + 1 << " (" << criteria[c].first << "):" << o.detail.str()
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
