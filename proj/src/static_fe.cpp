#include "fpanel/static_fe.hpp"

#include "fpanel/error.hpp"

#include <algorithm>
#include <cmath>

namespace fpanel {

double StaticPanelFit::coefficient(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return coefficients[static_cast<Eigen::Index>(k)];
  fail(ErrorCode::UnknownVariable, "no coefficient named " + name);
}

double StaticPanelFit::std_error(const std::string& name) const {
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return std_errors[static_cast<Eigen::Index>(k)];
  fail(ErrorCode::UnknownVariable, "no coefficient named " + name);
}

PanelRows assemble_panel_rows(const PanelTable& table, const StaticPanelSpec& spec) {
  auto need = [&](const std::string& name) {
    auto v = table.variable_index(name);
    if (!v) fail(ErrorCode::UnknownVariable, "variable " + name + " is not in the panel");
    return *v;
  };
  const std::size_t vy = need(spec.response);
  std::vector<std::size_t> vars{need(spec.competition), need(spec.development)};
  PanelRows rows;
  rows.names = {spec.competition, spec.development};
  if (spec.interaction) rows.names.push_back(spec.competition + "_x_AV" + spec.development);
  for (const auto& c : spec.controls) {
    vars.push_back(need(c));
    rows.names.push_back(c);
  }
  const std::size_t vdev = vars[1];

  // Country averages of the development variable over every observed year.
  std::vector<double> average(table.subjects().size(), std::nan(""));
  for (std::size_t s = 0; s < table.subjects().size(); ++s) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int y = table.year_min(); y <= table.year_max(); ++y)
      if (auto v = table.get(s, y, vdev)) {
        sum += *v;
        ++count;
      }
    if (count > 0) {
      average[s] = sum / static_cast<double>(count);
      rows.avmcap[table.subjects()[s]] = average[s];
    }
  }

  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  std::vector<std::size_t> raw_country;
  std::vector<int> raw_year;
  for (std::size_t s = 0; s < table.subjects().size(); ++s) {
    for (int y = table.year_min(); y <= table.year_max(); ++y) {
      auto yv = table.get(s, y, vy);
      std::vector<double> x;
      bool complete = yv.has_value();
      for (std::size_t k = 0; complete && k < vars.size(); ++k) {
        auto v = table.get(s, y, vars[k]);
        if (!v) complete = false;
        else x.push_back(*v);
      }
      if (!complete) {
        ++rows.dropped;
        continue;
      }
      if (spec.interaction) x.insert(x.begin() + 2, x[0] * average[s]);
      xs.push_back(std::move(x));
      ys.push_back(*yv);
      raw_country.push_back(s);
      raw_year.push_back(y);
    }
  }
  if (ys.empty()) fail(ErrorCode::NoCompleteCases, "no country-year row has every required variable");

  std::vector<std::size_t> used_s(raw_country);
  std::sort(used_s.begin(), used_s.end());
  used_s.erase(std::unique(used_s.begin(), used_s.end()), used_s.end());
  std::vector<int> used_y(raw_year);
  std::sort(used_y.begin(), used_y.end());
  used_y.erase(std::unique(used_y.begin(), used_y.end()), used_y.end());
  if (used_s.size() < 2 || used_y.size() < 2)
    fail(ErrorCode::NoCompleteCases, "complete cases cover " + std::to_string(used_s.size()) + " countries and " +
                                         std::to_string(used_y.size()) + " years; need at least 2 of each");
  for (auto s : used_s) rows.countries.push_back(table.subjects()[s]);
  rows.years = used_y;

  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto k = static_cast<Eigen::Index>(rows.names.size());
  rows.y.resize(n);
  rows.x.resize(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    rows.y[i] = ys[r];
    for (Eigen::Index c = 0; c < k; ++c) rows.x(i, c) = xs[r][static_cast<std::size_t>(c)];
    rows.country.push_back(static_cast<std::size_t>(std::lower_bound(used_s.begin(), used_s.end(), raw_country[r]) - used_s.begin()));
    rows.year.push_back(static_cast<std::size_t>(std::lower_bound(used_y.begin(), used_y.end(), raw_year[r]) - used_y.begin()));
  }
  return rows;
}

namespace {

// Removes country and year means from every column by alternating projections.
std::size_t demean(Eigen::MatrixXd& m, const PanelRows& rows) {
  const std::size_t C = rows.countries.size(), T = rows.years.size();
  const Eigen::Index n = m.rows();
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  std::vector<double> cnt_c(C, 0.0), cnt_t(T, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    cnt_c[rows.country[static_cast<std::size_t>(i)]] += 1.0;
    cnt_t[rows.year[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (std::size_t it = 1; it <= 100000; ++it) {
    double change = 0.0;
    for (int pass = 0; pass < 2; ++pass) {
      const auto& group = pass == 0 ? rows.country : rows.year;
      const auto& cnt = pass == 0 ? cnt_c : cnt_t;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cnt.size()), m.cols());
      for (Eigen::Index i = 0; i < n; ++i) sums.row(static_cast<Eigen::Index>(group[static_cast<std::size_t>(i)])) += m.row(i);
      for (std::size_t g = 0; g < cnt.size(); ++g) sums.row(static_cast<Eigen::Index>(g)) /= cnt[g];
      for (Eigen::Index i = 0; i < n; ++i) m.row(i) -= sums.row(static_cast<Eigen::Index>(group[static_cast<std::size_t>(i)]));
      change = std::max(change, sums.cwiseAbs().maxCoeff());
    }
    if (change <= 1e-10 * scale) return it;
  }
  fail(ErrorCode::SingularSystem, "two-way demeaning did not converge");
}

void check_rank(const Eigen::MatrixXd& demeaned, const Eigen::MatrixXd& raw, const std::vector<std::string>& names) {
  const Eigen::Index k = demeaned.cols();
  std::vector<std::string> bad;
  Eigen::VectorXd norms(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    norms[c] = demeaned.col(c).norm();
    if (!(norms[c] > 1e-10 * std::max(raw.col(c).norm(), 1e-300))) bad.push_back(names[static_cast<std::size_t>(c)]);
  }
  if (!bad.empty()) {
    std::string text;
    for (const auto& b : bad) text += (text.empty() ? "" : ", ") + b;
    fail(ErrorCode::PerfectCollinearity, "absorbed by the fixed effects: " + text);
  }
  const Eigen::MatrixXd scaled = demeaned * norms.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    std::string text;
    for (Eigen::Index r = qr.rank(); r < k; ++r)
      text += (text.empty() ? "" : ", ") + names[static_cast<std::size_t>(qr.colsPermutation().indices()[r])];
    fail(ErrorCode::PerfectCollinearity, "linearly dependent on the other regressors after demeaning: " + text);
  }
}

double small_sample_factor(std::size_t groups, std::size_t n, std::size_t k) {
  const double G = static_cast<double>(groups), N = static_cast<double>(n), K = static_cast<double>(k);
  return G / (G - 1.0) * (N - 1.0) / (N - K);
}

// Sandwich with rows of `h` = (X'X)^{-1} X' for the slope block.
Eigen::MatrixXd clustered_covariance(const Eigen::MatrixXd& h, const Eigen::VectorXd& resid, const PanelRows& rows) {
  const Eigen::Index k = h.rows();
  std::vector<Eigen::VectorXd> score(rows.countries.size(), Eigen::VectorXd::Zero(k));
  for (Eigen::Index i = 0; i < resid.size(); ++i) score[rows.country[static_cast<std::size_t>(i)]] += h.col(i) * resid[i];
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k);
  for (const auto& s : score) v += s * s.transpose();
  return small_sample_factor(rows.countries.size(), static_cast<std::size_t>(resid.size()), static_cast<std::size_t>(k)) * v;
}

StaticPanelFit base_fit(const PanelRows& rows) {
  StaticPanelFit fit;
  fit.names = rows.names;
  fit.observations = static_cast<std::size_t>(rows.y.size());
  fit.dropped = rows.dropped;
  fit.countries = rows.countries.size();
  fit.years = rows.years.size();
  fit.avmcap = rows.avmcap;
  return fit;
}

}  // namespace

StaticPanelFit fit_two_way_fe(const PanelRows& rows) {
  StaticPanelFit fit = base_fit(rows);
  const Eigen::Index n = rows.y.size(), k = rows.x.cols();
  Eigen::MatrixXd m(n, k + 1);
  m.col(0) = rows.y;
  m.rightCols(k) = rows.x;
  fit.demean_iterations = demean(m, rows);
  const Eigen::VectorXd yt = m.col(0);
  const Eigen::MatrixXd xt = m.rightCols(k);
  check_rank(xt, rows.x, rows.names);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xt);
  fit.coefficients = qr.solve(yt);
  const Eigen::VectorXd resid = yt - xt * fit.coefficients;
  const Eigen::MatrixXd h = (xt.transpose() * xt).ldlt().solve(xt.transpose());
  fit.covariance = clustered_covariance(h, resid, rows);
  fit.std_errors = fit.covariance.diagonal().cwiseSqrt();

  // Effects from the raw residual y - X b = a_i + l_t + e.
  const Eigen::VectorXd r = rows.y - rows.x * fit.coefficients;
  const std::size_t C = rows.countries.size(), T = rows.years.size();
  std::vector<double> a(C, 0.0), l(T, 0.0);
  for (int it = 0; it < 100000; ++it) {
    double change = 0.0;
    std::vector<double> sa(C, 0.0), ca(C, 0.0), sl(T, 0.0), cl(T, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sa[rows.country[static_cast<std::size_t>(i)]] += r[i] - l[rows.year[static_cast<std::size_t>(i)]];
      ca[rows.country[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (std::size_t c = 0; c < C; ++c) {
      const double v = sa[c] / ca[c];
      change = std::max(change, std::abs(v - a[c]));
      a[c] = v;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      sl[rows.year[static_cast<std::size_t>(i)]] += r[i] - a[rows.country[static_cast<std::size_t>(i)]];
      cl[rows.year[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double v = sl[t] / cl[t];
      change = std::max(change, std::abs(v - l[t]));
      l[t] = v;
    }
    if (change <= 1e-12 * std::max(1.0, r.cwiseAbs().maxCoeff())) break;
  }
  const double shift = l[0];
  for (std::size_t c = 0; c < C; ++c) fit.country_effects[rows.countries[c]] = a[c] + shift;
  for (std::size_t t = 0; t < T; ++t) fit.year_effects[rows.years[t]] = l[t] - shift;
  return fit;
}

StaticPanelFit fit_two_way_dummy(const PanelRows& rows) {
  StaticPanelFit fit = base_fit(rows);
  const Eigen::Index n = rows.y.size(), k = rows.x.cols();
  const auto C = static_cast<Eigen::Index>(rows.countries.size());
  const auto T = static_cast<Eigen::Index>(rows.years.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, k + C + T - 1);
  d.leftCols(k) = rows.x;
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, k + static_cast<Eigen::Index>(rows.country[static_cast<std::size_t>(i)])) = 1.0;
    const auto t = static_cast<Eigen::Index>(rows.year[static_cast<std::size_t>(i)]);
    if (t > 0) d(i, k + C + t - 1) = 1.0;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
  qr.setThreshold(1e-10);
  if (qr.rank() < d.cols()) fail(ErrorCode::PerfectCollinearity, "dummy-variable design is rank deficient");
  const Eigen::VectorXd coef = qr.solve(rows.y);
  fit.coefficients = coef.head(k);
  const Eigen::VectorXd resid = rows.y - d * coef;
  const Eigen::MatrixXd h = (d.transpose() * d).ldlt().solve(d.transpose()).topRows(k);
  fit.covariance = clustered_covariance(h, resid, rows);
  fit.std_errors = fit.covariance.diagonal().cwiseSqrt();
  for (Eigen::Index c = 0; c < C; ++c) fit.country_effects[rows.countries[static_cast<std::size_t>(c)]] = coef[k + c];
  fit.year_effects[rows.years[0]] = 0.0;
  for (Eigen::Index t = 1; t < T; ++t) fit.year_effects[rows.years[static_cast<std::size_t>(t)]] = coef[k + C + t - 1];
  return fit;
}

StaticPanelFit fit_static_panel_fe(const PanelTable& table, const StaticPanelSpec& spec) {
  return fit_two_way_fe(assemble_panel_rows(table, spec));
}

StaticPanelFit fit_static_panel_dummy(const PanelTable& table, const StaticPanelSpec& spec) {
  return fit_two_way_dummy(assemble_panel_rows(table, spec));
}

}  // namespace fpanel
