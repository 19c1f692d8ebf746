#include "fpanel/synth.hpp"

#include "fpanel/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace fpanel {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::size_t Rng::index(std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

std::string to_string(EigenFamily family) { return family == EigenFamily::Sine ? "sine" : "legendre"; }

EigenFamily parse_eigen_family(const std::string& text) {
  if (text == "sine") return EigenFamily::Sine;
  if (text == "legendre") return EigenFamily::Legendre;
  fail(ErrorCode::InvalidConfig, "eigenfunction family must be 'sine' or 'legendre': " + text);
}

KlTruth KlTruth::standard() { return {}; }

double KlTruth::mean(double t) const { return mean_level + mean_amplitude * std::sin(2.0 * std::numbers::pi * t); }

double KlTruth::eigenfunction(std::size_t k, double t) const {
  if (family == EigenFamily::Sine) return std::sqrt(2.0) * std::sin(static_cast<double>(k + 1) * std::numbers::pi * t);
  // shifted Legendre polynomial of degree k + 1, normalized on [0, 1]
  const std::size_t degree = k + 1;
  const double x = 2.0 * t - 1.0;
  double p0 = 1.0, p1 = x;
  for (std::size_t d = 2; d <= degree; ++d) {
    const double dd = static_cast<double>(d);
    const double p2 = ((2.0 * dd - 1.0) * x * p1 - (dd - 1.0) * p0) / dd;
    p0 = p1;
    p1 = p2;
  }
  return std::sqrt(2.0 * static_cast<double>(degree) + 1.0) * p1;
}

double KlTruth::curve(const std::vector<double>& scores, double t) const {
  double v = mean(t);
  for (std::size_t k = 0; k < scores.size(); ++k) v += scores[k] * eigenfunction(k, t);
  return v;
}

void KlTruth::validate() const {
  if (eigenvalues.empty()) fail(ErrorCode::InvalidConfig, "KL truth needs at least one eigenvalue");
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    if (!(eigenvalues[k] > 0.0)) fail(ErrorCode::InvalidConfig, "eigenvalues must be positive");
    if (k > 0 && eigenvalues[k] > eigenvalues[k - 1]) fail(ErrorCode::InvalidConfig, "eigenvalues must be descending");
  }
  if (!(sigma >= 0.0)) fail(ErrorCode::InvalidConfig, "noise sigma must be >= 0");
  if (lattice < 2) fail(ErrorCode::InvalidConfig, "time lattice needs at least 2 points");
  if (n_min < 1 || n_min > n_max || n_max > lattice)
    fail(ErrorCode::InvalidConfig, "observation counts must satisfy 1 <= n_min <= n_max <= lattice");
}

namespace {

std::string subject_name(const std::string& prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n).size();
  std::string num = std::to_string(i + 1);
  return prefix + std::string(width > num.size() ? width - num.size() : 0, '0') + num;
}

}  // namespace

KlSample generate_kl(const KlTruth& truth, std::size_t n, const Eigen::VectorXd& grid) {
  truth.validate();
  if (n < 1) fail(ErrorCode::InvalidArgument, "need at least one subject");
  Rng rng(truth.seed);
  const Eigen::VectorXd lattice = uniform_grid(truth.lattice);
  const std::size_t M = truth.eigenvalues.size();

  KlSample out;
  out.grid = grid;
  out.truth.resize(static_cast<Eigen::Index>(n), grid.size());
  out.scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M));
  out.data.domain = truth.domain();
  out.data.variable = "X";
  std::vector<std::size_t> pool(truth.lattice);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xi(M);
    for (std::size_t k = 0; k < M; ++k) xi[k] = std::sqrt(truth.eigenvalues[k]) * rng.normal();
    const std::size_t count = truth.n_min + rng.index(truth.n_max - truth.n_min + 1);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t j = 0; j < count; ++j) std::swap(pool[j], pool[j + rng.index(truth.lattice - j)]);
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());

    SparseFunctionalSample s;
    s.subject = subject_name("S", i, n);
    for (std::size_t j : chosen) {
      const double t = lattice[static_cast<Eigen::Index>(j)];
      s.times.push_back(t);
      s.values.push_back(truth.curve(xi, t) + truth.sigma * rng.normal());
    }
    out.data.samples.push_back(std::move(s));
    for (Eigen::Index g = 0; g < grid.size(); ++g) out.truth(static_cast<Eigen::Index>(i), g) = truth.curve(xi, grid[g]);
    for (std::size_t k = 0; k < M; ++k) out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = xi[k];
  }
  return out;
}

PanelTable to_panel(const FunctionalDataset& data, const std::string& variable) {
  std::vector<std::string> subjects = data.subject_ids();
  PanelTable table(subjects, data.domain.year_min, data.domain.year_max, {variable});
  for (const auto& s : data.samples) {
    const std::size_t idx = *table.subject_index(s.subject);
    for (std::size_t j = 0; j < s.size(); ++j) {
      const double year = data.domain.to_year(s.times[j]);
      const int y = static_cast<int>(std::lround(year));
      if (std::abs(year - y) > 1e-9) fail(ErrorCode::InvalidArgument, "observation time is not on a whole year");
      table.set(idx, y, 0, s.values[j]);
    }
  }
  return table;
}

double simpson401(const std::function<double(double)>& f) {
  constexpr int intervals = 400;
  const double h = 1.0 / intervals;
  double total = f(0.0) + f(1.0);
  for (int i = 1; i < intervals; ++i) total += (i % 2 == 1 ? 4.0 : 2.0) * f(i * h);
  return total * h / 3.0;
}

FofSample generate_fof(const FofTruth& truth, const KlTruth& x_truth, std::size_t n, const Eigen::VectorXd& grid) {
  FofSample out;
  out.x = generate_kl(x_truth, n, grid);
  const auto G = grid.size();
  out.y_truth.resize(static_cast<Eigen::Index>(n), G);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> xi(static_cast<std::size_t>(out.x.scores.cols()));
    for (std::size_t k = 0; k < xi.size(); ++k) xi[k] = out.x.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    for (Eigen::Index g = 0; g < G; ++g) {
      const double t = grid[g];
      double v = truth.alpha(t);
      if (truth.surface) v += simpson401([&](double s) { return truth.surface(s, t) * x_truth.curve(xi, s); });
      if (truth.concurrent) v += truth.concurrent(t) * x_truth.curve(xi, t);
      out.y_truth(static_cast<Eigen::Index>(i), g) = v;
    }
  }
  // Response noise uses its own stream so X stays identical across sigma_y values.
  Rng rng(x_truth.seed ^ 0x9e3779b97f4a7c15ULL);
  out.y_observed = out.y_truth;
  if (truth.sigma_y > 0.0)
    for (Eigen::Index i = 0; i < out.y_observed.rows(); ++i)
      for (Eigen::Index g = 0; g < G; ++g) out.y_observed(i, g) += truth.sigma_y * rng.normal();
  return out;
}

PanelSample generate_panel(const PanelTruth& truth) {
  if (truth.countries < 2 || truth.years < 2) fail(ErrorCode::InvalidArgument, "panel needs at least 2 x 2 cells");
  if (!(truth.missing_fraction >= 0.0 && truth.missing_fraction < 1.0))
    fail(ErrorCode::InvalidArgument, "missing fraction must lie in [0, 1)");
  Rng rng(truth.seed);
  const std::size_t C = truth.countries, T = truth.years, q = truth.gamma.size();
  std::vector<std::string> countries;
  for (std::size_t c = 0; c < C; ++c) countries.push_back(subject_name("C", c, C));
  std::vector<std::string> vars{"POV", "HHI", "MCAP"};
  PanelSample out{PanelTable(countries, truth.year_min, truth.year_min + static_cast<int>(T) - 1, {}), {}, {}, {}, 0, {}};
  for (std::size_t k = 0; k < q; ++k) {
    vars.push_back("Z" + std::to_string(k + 1));
    out.controls.push_back(vars.back());
  }
  out.table = PanelTable(countries, truth.year_min, truth.year_min + static_cast<int>(T) - 1, vars);
  const std::size_t V = vars.size();

  std::vector<double> a(C), h(C), m(C), l(T), d(T);
  for (std::size_t c = 0; c < C; ++c) {
    a[c] = rng.normal();
    h[c] = rng.normal();
    m[c] = 2.0 + rng.normal();
  }
  for (std::size_t t = 0; t < T; ++t) {
    l[t] = 0.5 * rng.normal();
    d[t] = 0.5 * rng.normal();
  }
  // regressors with within variation, indexed [var][c][t]
  std::vector<std::vector<std::vector<double>>> x(V, std::vector<std::vector<double>>(C, std::vector<double>(T)));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      x[1][c][t] = h[c] + d[t] + rng.normal();
      x[2][c][t] = m[c] + 0.5 * d[t] + rng.normal();
      for (std::size_t k = 0; k < q; ++k) x[3 + k][c][t] = 0.5 * h[c] + rng.normal();
    }
  std::vector<std::vector<std::vector<bool>>> present(V, std::vector<std::vector<bool>>(C, std::vector<bool>(T, true)));
  if (truth.missing_fraction > 0.0)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) present[v][c][t] = rng.uniform() >= truth.missing_fraction;

  std::vector<double> av(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    std::size_t cnt = 0;
    for (std::size_t t = 0; t < T; ++t)
      if (present[2][c][t]) {
        sum += x[2][c][t];
        ++cnt;
      }
    if (cnt > 0) {
      av[c] = sum / static_cast<double>(cnt);
      out.avmcap[countries[c]] = av[c];
    }
  }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      double y = a[c] + l[t] + truth.beta1 * x[1][c][t] + truth.beta2 * x[2][c][t] + truth.beta3 * x[1][c][t] * av[c];
      for (std::size_t k = 0; k < q; ++k) y += truth.gamma[k] * x[3 + k][c][t];
      x[0][c][t] = y + truth.sigma * rng.normal();
    }

  for (std::size_t c = 0; c < C; ++c) {
    out.country_effects[countries[c]] = a[c];
    for (std::size_t t = 0; t < T; ++t) {
      bool complete = true;
      for (std::size_t v = 0; v < V; ++v) {
        const int year = truth.year_min + static_cast<int>(t);
        if (present[v][c][t]) out.table.set(c, year, v, x[v][c][t]);
        else complete = false;
      }
      if (complete) ++out.complete_rows;
    }
  }
  for (std::size_t t = 0; t < T; ++t) out.year_effects[truth.year_min + static_cast<int>(t)] = l[t];
  return out;
}

DenseEigen dense_fpca_oracle(const Eigen::MatrixXd& curves, const Eigen::VectorXd& grid) {
  const Eigen::Index n = curves.rows(), G = curves.cols();
  if (n < 1 || G != grid.size() || G < 2) fail(ErrorCode::InvalidArgument, "dense oracle needs curves on the grid");
  const Eigen::RowVectorXd mean = curves.colwise().mean();
  const Eigen::MatrixXd centered = curves.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::VectorXd w(G);
  for (Eigen::Index g = 0; g < G; ++g) {
    const double left = g > 0 ? grid[g] - grid[g - 1] : 0.0;
    const double right = g + 1 < G ? grid[g + 1] - grid[g] : 0.0;
    w[g] = 0.5 * (left + right);
  }
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd a = sw.asDiagonal() * cov * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  DenseEigen out;
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenfunctions = es.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < G; ++k) {
    out.eigenfunctions.col(k) = out.eigenfunctions.col(k).cwiseQuotient(sw);
    if (w.dot(out.eigenfunctions.col(k)) < 0.0) out.eigenfunctions.col(k) *= -1.0;
  }
  return out;
}

PanelTable generate_study(const StudyOptions& options) {
  const std::vector<std::string> vars{"POV", "HHI", "GDP", "G", "TRADE", "INF", "GROWTH", "MCAP"};
  const std::vector<double> missing{0.60, 0.13, 0.01, 0.27, 0.03, 0.014, 0.013, 0.31};
  const std::size_t C = options.countries;
  const int Y = options.year_max - options.year_min + 1;
  if (C < 4 || Y < 4) fail(ErrorCode::InvalidArgument, "study panel needs at least 4 countries and 4 years");
  std::vector<std::string> countries;
  for (std::size_t c = 0; c < C; ++c) countries.push_back(subject_name("C", c, C));
  PanelTable table(countries, options.year_min, options.year_max, vars);
  Rng rng(options.seed);
  const double pi = std::numbers::pi;

  for (std::size_t c = 0; c < C; ++c) {
    // market-capitalization tiers: roughly 15% high, 55% medium, 30% low
    const double u = static_cast<double>(c) / static_cast<double>(C);
    const int tier = u < 0.15 ? 0 : (u < 0.70 ? 1 : 2);
    const double level = tier == 0 ? 4.6 : (tier == 1 ? 3.6 : 2.6);
    const double slope = tier == 0 ? 0.3 : (tier == 1 ? 0.2 : -0.1);
    const double m1 = 0.25 * rng.normal(), m2 = 0.12 * rng.normal();
    const double h0 = -1.8 + 0.25 * rng.normal(), h1 = 0.2 * rng.normal(), h2 = 0.1 * rng.normal();
    const double p0 = 2.6 + 0.5 * rng.normal(), p1 = 0.2 * rng.normal();
    const double gdp0 = 8.5 + rng.normal(), g0 = 16.0 * std::exp(0.2 * rng.normal()), tr0 = 70.0 * std::exp(0.3 * rng.normal());
    const double inf0 = 4.0 + 1.5 * rng.normal();
    const bool no_mcap = c == C / 2;  // one country never reports market capitalization

    // country average of log MCAP drives the modulation of the HHI effect
    const double av_log_mcap = level + slope * 0.5;
    for (int y = options.year_min; y <= options.year_max; ++y) {
      const double t = static_cast<double>(y - options.year_min) / static_cast<double>(Y - 1);
      const double lm = level + slope * t + m1 * std::sqrt(2.0) * std::sin(pi * t) + m2 * std::sqrt(2.0) * std::sin(2 * pi * t) +
                        0.08 * rng.normal();
      const double lh = h0 + h1 * std::sqrt(2.0) * std::sin(pi * t) + h2 * std::sqrt(2.0) * std::sin(2 * pi * t) + 0.05 * rng.normal();
      const double hhi = std::exp(lh);
      const double effect = 6.0 * (1.0 - 0.35 * (av_log_mcap - 3.6));
      const double lp = p0 - 0.8 * t + p1 * std::sqrt(2.0) * std::sin(pi * t) + effect * (hhi - 0.17) + 0.1 * rng.normal();
      const double values[] = {std::exp(lp),
                               hhi,
                               std::exp(gdp0 + 0.9 * t + 0.03 * rng.normal()),
                               g0 * std::exp(0.1 * std::sin(pi * t) + 0.03 * rng.normal()),
                               tr0 * std::exp(0.15 * t + 0.04 * rng.normal()),
                               std::abs(inf0 + 2.0 * rng.normal()) + 0.1,
                               3.0 + 2.0 * rng.normal(),
                               std::exp(lm)};
      for (std::size_t v = 0; v < vars.size(); ++v) {
        const bool drop = rng.uniform() < missing[v] || (no_mcap && vars[v] == "MCAP");
        if (!drop) table.set(c, y, v, values[v]);
      }
    }
  }
  return table;
}

}  // namespace fpanel
