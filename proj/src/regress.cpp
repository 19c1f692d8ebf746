#include "fpanel/regress.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace fpanel {

CurveSet CurveSet::subset(const std::vector<std::string>& keep) const {
  CurveSet out;
  out.subjects = keep;
  out.grid = grid;
  out.domain = domain;
  out.values.resize(static_cast<Eigen::Index>(keep.size()), grid.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    auto it = std::find(subjects.begin(), subjects.end(), keep[r]);
    if (it == subjects.end()) fail(ErrorCode::SubjectMismatch, "subject " + keep[r] + " is not in the curve set");
    out.values.row(static_cast<Eigen::Index>(r)) = values.row(it - subjects.begin());
  }
  return out;
}

std::vector<std::string> common_subjects(const std::vector<const CurveSet*>& sets) {
  if (sets.empty()) return {};
  std::set<std::string> common(sets.front()->subjects.begin(), sets.front()->subjects.end());
  for (std::size_t s = 1; s < sets.size(); ++s) {
    std::set<std::string> next;
    for (const auto& id : sets[s]->subjects)
      if (common.count(id)) next.insert(id);
    common = std::move(next);
  }
  return {common.begin(), common.end()};
}

std::string to_string(TermKind kind) { return kind == TermKind::Surface ? "surface" : "concurrent"; }

TermKind parse_term_kind(const std::string& text) {
  if (text == "surface") return TermKind::Surface;
  if (text == "concurrent") return TermKind::Concurrent;
  fail(ErrorCode::InvalidConfig, "term kind must be 'surface' or 'concurrent': " + text);
}

std::string to_string(PenaltyMode mode) { return mode == PenaltyMode::Both ? "both" : "literal"; }

PenaltyMode parse_penalty_mode(const std::string& text) {
  if (text == "both") return PenaltyMode::Both;
  if (text == "literal") return PenaltyMode::Literal;
  fail(ErrorCode::InvalidConfig, "penalty mode must be 'both' or 'literal': " + text);
}

std::string TermSpec::label() const { return scalar ? predictor + "_x_" + *scalar : predictor; }

RegressionSpec attach_interaction(RegressionSpec spec, const std::string& functional, const std::string& scalar,
                                  const RegressionData& data, TermKind kind) {
  auto it = data.scalars.find(scalar);
  if (it == data.scalars.end()) fail(ErrorCode::MissingScalar, "scalar " + scalar + " is not available");
  if (static_cast<std::size_t>(it->second.size()) != data.response.size())
    fail(ErrorCode::MissingScalar, "scalar " + scalar + " does not cover every subject");
  for (Eigen::Index i = 0; i < it->second.size(); ++i)
    if (!std::isfinite(it->second[i]))
      fail(ErrorCode::MissingScalar, "scalar " + scalar + " is missing for subject " +
                                         data.response.subjects[static_cast<std::size_t>(i)]);
  spec.terms.push_back({functional, kind, scalar});
  return spec;
}

const TermFit* RegressionFit::term(const std::string& label) const {
  for (const auto& t : terms)
    if (t.spec.label() == label) return &t;
  return nullptr;
}

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

struct TermDesign {
  TermSpec spec;
  Eigen::MatrixXd x;       // centered design, subjects x G
  Eigen::VectorXd center;  // G
  Eigen::MatrixXd z;       // subjects x kx, surface only
  Eigen::Index offset = 0;
  Eigen::Index dim = 0;
};

struct Bases {
  BSplineBasis bx;
  BSplineBasis by;
  Eigen::MatrixXd psi;           // G x ky
  Eigen::MatrixXd x_projection;  // G x kx
  Eigen::MatrixXd jx, jy, px, py;
};

Bases make_bases(const RegressionSpec& spec, const Eigen::VectorXd& grid) {
  Bases b{BSplineBasis(spec.kx, spec.order), BSplineBasis(spec.ky, spec.order), {}, {}, {}, {}, {}, {}};
  if (static_cast<std::size_t>(grid.size()) < std::max(spec.kx, spec.ky))
    fail(ErrorCode::InvalidConfig, "grid of " + std::to_string(grid.size()) + " points is too coarse for " +
                                       std::to_string(std::max(spec.kx, spec.ky)) + " basis functions");
  const Eigen::MatrixXd bxg = b.bx.design_matrix(grid);
  b.psi = b.by.design_matrix(grid);
  b.jx = b.bx.gram_matrix();
  b.jy = b.by.gram_matrix();
  b.px = b.bx.penalty_matrix(2);
  b.py = b.by.penalty_matrix(2);
  // Least-squares basis coefficients d = (B'B)^{-1} B'x, then integrals J d.
  const Eigen::MatrixXd btb = bxg.transpose() * bxg;
  b.x_projection = bxg * btb.ldlt().solve(b.jx);
  return b;
}

Eigen::MatrixXd term_raw(const TermSpec& term, const std::map<std::string, CurveSet>& predictors,
                         const std::map<std::string, Eigen::VectorXd>& scalars, const std::vector<std::string>& subjects,
                         const Eigen::VectorXd& grid) {
  auto it = predictors.find(term.predictor);
  if (it == predictors.end()) fail(ErrorCode::UnknownVariable, "predictor " + term.predictor + " has no curves");
  const CurveSet& set = it->second;
  if (!same_grid(set.grid, grid)) fail(ErrorCode::GridMismatch, "predictor " + term.predictor + " is on another grid");
  if (set.subjects != subjects) fail(ErrorCode::SubjectMismatch, "predictor " + term.predictor + " covers other subjects");
  Eigen::MatrixXd raw = set.values;
  if (term.scalar) {
    auto s = scalars.find(*term.scalar);
    if (s == scalars.end() || static_cast<std::size_t>(s->second.size()) != subjects.size() || !s->second.allFinite())
      fail(ErrorCode::MissingScalar, "scalar " + *term.scalar + " is unavailable for some subject");
    raw.array().colwise() *= s->second.array();
  }
  return raw;
}

std::string interval_text(const Eigen::VectorXd& grid, const DomainMap& domain, Eigen::Index a, Eigen::Index b) {
  std::ostringstream out;
  out << "t in [" << io::format_double(grid[a]) << ", " << io::format_double(grid[b]) << "] (years "
      << io::format_double(domain.to_year(grid[a])) << "-" << io::format_double(domain.to_year(grid[b])) << ")";
  return out.str();
}

// Smallest eigenvalue relative to the largest across the grid, per grid point.
// Terms are scaled to unit mean square first so units do not matter.
void check_concurrent_collinearity(const std::vector<TermDesign>& terms, const Eigen::VectorXd& grid,
                                   const DomainMap& domain, std::vector<std::string>& warnings) {
  std::vector<const TermDesign*> conc;
  for (const auto& t : terms)
    if (t.spec.kind == TermKind::Concurrent) conc.push_back(&t);
  if (conc.empty()) return;
  const auto p = static_cast<Eigen::Index>(conc.size());
  const Eigen::Index G = grid.size();
  std::string names;
  for (auto* t : conc) names += (names.empty() ? "" : ", ") + t->spec.label();

  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    scale[j] = std::sqrt(conc[static_cast<std::size_t>(j)]->x.squaredNorm() / static_cast<double>(G));
    if (!(scale[j] > 0.0))
      fail(ErrorCode::CollinearPredictors, "term " + conc[static_cast<std::size_t>(j)]->spec.label() +
                                               " has an identically zero design on " +
                                               interval_text(grid, domain, 0, G - 1));
  }
  std::vector<double> lo(static_cast<std::size_t>(G)), hi(static_cast<std::size_t>(G));
  for (Eigen::Index g = 0; g < G; ++g) {
    Eigen::MatrixXd c(p, p);
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b)
        c(a, b) = conc[static_cast<std::size_t>(a)]->x.col(g).dot(conc[static_cast<std::size_t>(b)]->x.col(g)) /
                  (scale[a] * scale[b]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    lo[static_cast<std::size_t>(g)] = es.eigenvalues()[0];
    hi[static_cast<std::size_t>(g)] = es.eigenvalues()[p - 1];
  }
  const double top = *std::max_element(hi.begin(), hi.end());
  std::vector<bool> bad(static_cast<std::size_t>(G));
  for (Eigen::Index g = 0; g < G; ++g) bad[static_cast<std::size_t>(g)] = lo[static_cast<std::size_t>(g)] <= 1e-10 * top;

  // An isolated deficient grid point (e.g. where every curve passes through the
  // same value) is bridged by the penalty; a run of two or more is an interval.
  for (Eigen::Index g = 0; g < G;) {
    if (!bad[static_cast<std::size_t>(g)]) {
      ++g;
      continue;
    }
    Eigen::Index e = g;
    while (e + 1 < G && bad[static_cast<std::size_t>(e + 1)]) ++e;
    if (e > g)
      fail(ErrorCode::CollinearPredictors, "pointwise design of " + names + " is rank-deficient on " +
                                               interval_text(grid, domain, g, e));
    warnings.push_back("pointwise design of " + names + " is rank-deficient at the single point " +
                       interval_text(grid, domain, g, g));
    g = e + 1;
  }
}


void check_surface_collinearity(const std::vector<TermDesign>& terms, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& grid, const DomainMap& domain) {
  std::vector<const TermDesign*> surf;
  for (const auto& t : terms)
    if (t.spec.kind == TermKind::Surface) surf.push_back(&t);
  if (surf.empty()) return;
  const auto p = static_cast<Eigen::Index>(surf.size());
  const std::string whole = interval_text(grid, domain, 0, grid.size() - 1);
  Eigen::MatrixXd c(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b)
      c(a, b) = (surf[static_cast<std::size_t>(a)]->x.cwiseProduct(surf[static_cast<std::size_t>(b)]->x) * w).sum();
  for (Eigen::Index a = 0; a < p; ++a)
    if (!(c(a, a) > 0.0))
      fail(ErrorCode::CollinearPredictors,
           "term " + surf[static_cast<std::size_t>(a)]->spec.label() + " has an identically zero design on " + whole);
  const Eigen::VectorXd d = c.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd r = d.asDiagonal() * c * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r, Eigen::EigenvaluesOnly);
  if (es.eigenvalues()[0] <= 1e-10 * es.eigenvalues()[p - 1]) {
    std::string names;
    for (auto* t : surf) names += (names.empty() ? "" : ", ") + t->spec.label();
    fail(ErrorCode::CollinearPredictors, "surface terms " + names + " are linearly dependent on " + whole);
  }
}

struct System {
  std::vector<TermDesign> terms;
  Eigen::MatrixXd yc;  // centered response, subjects x G
  Eigen::VectorXd w;
  Eigen::MatrixXd a0;  // unpenalized normal matrix
  Eigen::VectorXd b;
  std::vector<Eigen::MatrixXd> penalties;  // per term, unit lambda
  double literal_ridge = 0.0;
  std::size_t kx = 0, ky = 0;
  Eigen::Index dim = 0;
};

void assemble(System& sys, const Bases& bases) {
  const Eigen::Index ky = static_cast<Eigen::Index>(sys.ky);
  const Eigen::Index kx = static_cast<Eigen::Index>(sys.kx);
  const Eigen::Index G = sys.w.size();
  const Eigen::MatrixXd& psi = bases.psi;
  const Eigen::MatrixXd m = psi.transpose() * sys.w.asDiagonal() * psi;
  const auto p = sys.terms.size();
  sys.a0 = Eigen::MatrixXd::Zero(sys.dim, sys.dim);
  sys.b = Eigen::VectorXd::Zero(sys.dim);

  // Blocks (j, j2) for j <= j2 are independent; fill them in parallel.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t j2 = j; j2 < p; ++j2) pairs.emplace_back(j, j2);
  const auto npairs = static_cast<long>(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (long q = 0; q < npairs; ++q) {
    const TermDesign& u = sys.terms[pairs[static_cast<std::size_t>(q)].first];
    const TermDesign& v = sys.terms[pairs[static_cast<std::size_t>(q)].second];
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(u.dim, v.dim);
    const bool us = u.spec.kind == TermKind::Surface, vs = v.spec.kind == TermKind::Surface;
    if (us && vs) {
      block = kron(u.z.transpose() * v.z, m);
    } else if (!us && !vs) {
      Eigen::VectorXd c(G);
      for (Eigen::Index g = 0; g < G; ++g) c[g] = sys.w[g] * u.x.col(g).dot(v.x.col(g));
      block = psi.transpose() * c.asDiagonal() * psi;
    } else {
      const TermDesign& s = us ? u : v;
      const TermDesign& cc = us ? v : u;
      Eigen::MatrixXd sc = Eigen::MatrixXd::Zero(kx * ky, ky);
      for (Eigen::Index g = 0; g < G; ++g) {
        const Eigen::VectorXd zx = s.z.transpose() * cc.x.col(g);
        const Eigen::MatrixXd outer = sys.w[g] * (psi.row(g).transpose() * psi.row(g));
        for (Eigen::Index l = 0; l < kx; ++l) sc.block(l * ky, 0, ky, ky) += zx[l] * outer;
      }
      block = us ? sc : Eigen::MatrixXd(sc.transpose());
    }
    sys.a0.block(u.offset, v.offset, u.dim, v.dim) = block;
    if (u.offset != v.offset) sys.a0.block(v.offset, u.offset, v.dim, u.dim) = block.transpose();
  }

  const Eigen::MatrixXd yw = sys.yc * sys.w.asDiagonal();
  for (const auto& t : sys.terms) {
    if (t.spec.kind == TermKind::Surface) {
      const Eigen::MatrixXd r = t.z.transpose() * yw * psi;  // kx x ky
      for (Eigen::Index l = 0; l < kx; ++l) sys.b.segment(t.offset + l * ky, ky) = r.row(l).transpose();
    } else {
      Eigen::VectorXd c(G);
      for (Eigen::Index g = 0; g < G; ++g) c[g] = sys.w[g] * t.x.col(g).dot(sys.yc.col(g));
      sys.b.segment(t.offset, ky) = psi.transpose() * c;
    }
  }
}

Eigen::MatrixXd penalized_matrix(const System& sys, const std::vector<double>& lambdas) {
  Eigen::MatrixXd s = sys.a0;
  for (std::size_t j = 0; j < sys.terms.size(); ++j) {
    const auto& t = sys.terms[j];
    s.block(t.offset, t.offset, t.dim, t.dim) += lambdas[j] * sys.penalties[j];
  }
  if (sys.literal_ridge > 0.0) s.diagonal().array() += sys.literal_ridge;
  return s;
}

Eigen::MatrixXd fitted_centered(const System& sys, const Bases& bases, const Eigen::VectorXd& theta) {
  const auto ky = static_cast<Eigen::Index>(sys.ky), kx = static_cast<Eigen::Index>(sys.kx);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(sys.yc.rows(), sys.yc.cols());
  for (const auto& t : sys.terms) {
    if (t.spec.kind == TermKind::Surface) {
      const Eigen::MatrixXd coef = Eigen::Map<const Eigen::MatrixXd>(theta.data() + t.offset, ky, kx).transpose();
      out += t.z * coef * bases.psi.transpose();
    } else {
      const Eigen::VectorXd beta = bases.psi * theta.segment(t.offset, ky);
      out += t.x * beta.asDiagonal();
    }
  }
  return out;
}

struct Candidate {
  std::vector<double> lambdas;
  double gcv = std::numeric_limits<double>::infinity();
  double df = 0.0;
  Eigen::VectorXd theta;
  bool ok = false;
};

Candidate evaluate(const System& sys, const Bases& bases, std::vector<double> lambdas) {
  Candidate c;
  c.lambdas = std::move(lambdas);
  const Eigen::MatrixXd s = penalized_matrix(sys, c.lambdas);
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15)) return c;
  c.theta = llt.solve(sys.b);
  const double trace = llt.solve(sys.a0).trace();
  const Eigen::MatrixXd resid = sys.yc - fitted_centered(sys, bases, c.theta);
  const double rss = (resid.cwiseAbs2() * sys.w).sum();
  const auto G = static_cast<double>(sys.w.size());
  const double n = static_cast<double>(sys.yc.rows()) * G;
  c.df = G + trace;
  const double room = n - c.df;
  if (!(room > 0.0) || !c.theta.allFinite()) return c;
  c.gcv = n * rss / (room * room);
  c.ok = true;
  return c;
}

// Lower GCV wins; equal scores go to the heavier total penalty.
bool better(const Candidate& a, const Candidate& b) {
  if (!a.ok) return false;
  if (!b.ok) return true;
  if (a.gcv != b.gcv) return a.gcv < b.gcv;
  double sa = 0.0, sb = 0.0;
  for (double l : a.lambdas) sa += l;
  for (double l : b.lambdas) sb += l;
  return sa > sb;
}

std::size_t best_of(const std::vector<Candidate>& cands) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.size(); ++i)
    if (better(cands[i], cands[best])) best = i;
  return best;
}

std::vector<Candidate> evaluate_all(const System& sys, const Bases& bases, const std::vector<std::vector<double>>& sets) {
  std::vector<Candidate> out(sets.size());
  const auto n = static_cast<long>(sets.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = evaluate(sys, bases, sets[static_cast<std::size_t>(i)]);
  return out;
}

[[noreturn]] void report_singular(const System& sys, const std::vector<double>& lambdas) {
  const Eigen::MatrixXd s = penalized_matrix(sys, lambdas);
  for (const auto& t : sys.terms) {
    Eigen::LLT<Eigen::MatrixXd> llt(s.block(t.offset, t.offset, t.dim, t.dim));
    if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-15))
      fail(ErrorCode::SingularNormalEquations, "term " + t.spec.label());
  }
  fail(ErrorCode::SingularNormalEquations, "joint system of all terms");
}

}  // namespace

RegressionFit fit_regression(const RegressionData& data, const RegressionSpec& spec) {
  if (spec.penalty_grid.empty()) fail(ErrorCode::NoPenaltyCandidates, "penalty grid is empty");
  for (double l : spec.penalty_grid)
    if (!(l >= 0.0) || !std::isfinite(l)) fail(ErrorCode::InvalidConfig, "penalty grid values must be finite and >= 0");
  const CurveSet& Y = data.response;
  if (Y.size() == 0) fail(ErrorCode::EmptyDataset, "no response curves");
  check_uniform_grid(Y.grid);
  {
    std::set<std::string> seen;
    for (const auto& t : spec.terms)
      if (!seen.insert(t.label()).second) fail(ErrorCode::InvalidConfig, "term " + t.label() + " appears twice");
  }

  RegressionFit fit;
  fit.spec = spec;
  fit.grid = Y.grid;
  fit.domain = Y.domain;
  fit.subjects = Y.subjects;
  fit.response = Y.values;

  const Bases bases = make_bases(spec, Y.grid);
  fit.x_projection = bases.x_projection;
  fit.psi = bases.psi;

  System sys;
  sys.kx = spec.kx;
  sys.ky = spec.ky;
  sys.w = trapezoid_weights(Y.grid);
  const Eigen::VectorXd ybar = Y.values.colwise().mean().transpose();
  sys.yc = Y.values.rowwise() - ybar.transpose();
  fit.alpha = {Y.grid, ybar};

  bool any_surface = false;
  for (const auto& term : spec.terms) {
    TermDesign d;
    d.spec = term;
    const Eigen::MatrixXd raw = term_raw(term, data.predictors, data.scalars, Y.subjects, Y.grid);
    d.center = raw.colwise().mean().transpose();
    d.x = raw.rowwise() - d.center.transpose();
    d.offset = sys.dim;
    if (term.kind == TermKind::Surface) {
      any_surface = true;
      d.z = d.x * bases.x_projection;
      d.dim = static_cast<Eigen::Index>(spec.kx * spec.ky);
      if (spec.penalty_mode == PenaltyMode::Both)
        sys.penalties.push_back(kron(bases.px, bases.jy) + kron(bases.jx, bases.py));
      else
        sys.penalties.push_back(kron(bases.px, bases.jy));
    } else {
      d.dim = static_cast<Eigen::Index>(spec.ky);
      sys.penalties.push_back(bases.py);
    }
    sys.dim += d.dim;
    sys.terms.push_back(std::move(d));
  }
  if (spec.penalty_mode == PenaltyMode::Literal && any_surface) sys.literal_ridge = 1e-8;
  if (any_surface && 2 * Y.size() < spec.kx * spec.ky)
    fit.warnings.push_back(std::to_string(Y.size()) + " subjects is below kx*ky/2 = " +
                           std::to_string(spec.kx * spec.ky / 2) + "; surface estimates rely heavily on the penalty");

  check_concurrent_collinearity(sys.terms, Y.grid, Y.domain, fit.warnings);
  check_surface_collinearity(sys.terms, sys.w, Y.grid, Y.domain);

  Candidate chosen;
  if (sys.terms.empty()) {
    chosen.ok = true;
    chosen.theta.resize(0);
    chosen.gcv = 0.0;
    chosen.df = static_cast<double>(Y.grid.size());
  } else {
    assemble(sys, bases);
    const std::size_t p = sys.terms.size();
    std::vector<std::vector<double>> shared;
    for (double l : spec.penalty_grid) shared.emplace_back(p, l);
    std::vector<Candidate> first = evaluate_all(sys, bases, shared);
    chosen = first[best_of(first)];
    if (!chosen.ok) report_singular(sys, shared.front());

    if (p > 1 && spec.penalty_grid.size() > 1) {
      for (std::size_t sweep = 0; sweep < spec.max_sweeps; ++sweep) {
        bool moved = false;
        for (std::size_t j = 0; j < p; ++j) {
          std::vector<std::vector<double>> sets;
          for (double l : spec.penalty_grid) {
            std::vector<double> lam = chosen.lambdas;
            lam[j] = l;
            sets.push_back(std::move(lam));
          }
          std::vector<Candidate> cands = evaluate_all(sys, bases, sets);
          const Candidate& best = cands[best_of(cands)];
          if (best.ok && best.gcv < chosen.gcv) {
            chosen = best;
            moved = true;
          }
        }
        if (!moved) break;
      }
    }
  }
  fit.gcv = chosen.gcv;
  fit.effective_df = chosen.df;

  const auto ky = static_cast<Eigen::Index>(spec.ky), kx = static_cast<Eigen::Index>(spec.kx);
  const Eigen::MatrixXd phi = BSplineBasis(spec.kx, spec.order).design_matrix(Y.grid);
  for (std::size_t j = 0; j < sys.terms.size(); ++j) {
    const auto& t = sys.terms[j];
    TermFit tf;
    tf.spec = t.spec;
    tf.lambda = chosen.lambdas[j];
    tf.center = t.center;
    if (t.spec.kind == TermKind::Surface) {
      tf.coefficients = Eigen::Map<const Eigen::MatrixXd>(chosen.theta.data() + t.offset, ky, kx).transpose();
      tf.surface = phi * tf.coefficients * bases.psi.transpose();
    } else {
      tf.coefficients = chosen.theta.segment(t.offset, ky);
      tf.beta_t = bases.psi * tf.coefficients;
    }
    fit.terms.push_back(std::move(tf));
  }
  const Eigen::MatrixXd centered_fit =
      sys.terms.empty() ? Eigen::MatrixXd::Zero(Y.values.rows(), Y.values.cols()) : fitted_centered(sys, bases, chosen.theta);
  fit.fitted = centered_fit.rowwise() + ybar.transpose();
  fit.residuals = Y.values - fit.fitted;
  return fit;
}

RegressionFit fit_mflm(const RegressionData& data, RegressionSpec spec) {
  for (auto& t : spec.terms) t.kind = TermKind::Surface;
  return fit_regression(data, spec);
}

RegressionFit fit_concurrent(const RegressionData& data, RegressionSpec spec) {
  for (auto& t : spec.terms) t.kind = TermKind::Concurrent;
  return fit_regression(data, spec);
}

Eigen::MatrixXd predict(const RegressionFit& fit, const std::map<std::string, CurveSet>& predictors,
                        const std::map<std::string, Eigen::VectorXd>& scalars) {
  std::vector<std::string> subjects;
  bool have = false;
  for (const auto& t : fit.terms) {
    auto it = predictors.find(t.spec.predictor);
    if (it == predictors.end()) fail(ErrorCode::UnknownVariable, "predictor " + t.spec.predictor + " has no curves");
    if (!have) {
      subjects = it->second.subjects;
      have = true;
    }
  }
  Eigen::Index n = static_cast<Eigen::Index>(subjects.size());
  if (!have) {
    n = predictors.empty() ? 1 : static_cast<Eigen::Index>(predictors.begin()->second.size());
  }
  Eigen::MatrixXd out = fit.alpha.values.transpose().replicate(n, 1);
  for (const auto& t : fit.terms) {
    const Eigen::MatrixXd raw = term_raw(t.spec, predictors, scalars, subjects, fit.grid);
    const Eigen::MatrixXd x = raw.rowwise() - t.center.transpose();
    if (t.spec.kind == TermKind::Surface)
      out += (x * fit.x_projection) * t.coefficients * fit.psi.transpose();
    else
      out += x * t.beta_t.asDiagonal();
  }
  return out;
}

GridCurve r2_functional(const RegressionFit& fit) {
  GridCurve out{fit.grid, Eigen::VectorXd(fit.grid.size())};
  for (Eigen::Index g = 0; g < fit.grid.size(); ++g) {
    const double mean = fit.response.col(g).mean();
    const double total = (fit.response.col(g).array() - mean).square().sum();
    const double resid = fit.residuals.col(g).squaredNorm();
    out.values[g] = total < 1e-12 ? std::numeric_limits<double>::quiet_NaN() : 1.0 - resid / total;
  }
  return out;
}

double surface_roughness(const RegressionFit& fit, const TermFit& term) {
  if (term.spec.kind != TermKind::Surface) fail(ErrorCode::InvalidArgument, "term " + term.spec.label() + " is not a surface");
  const BSplineBasis bx(fit.spec.kx, fit.spec.order), by(fit.spec.ky, fit.spec.order);
  const Eigen::MatrixXd& c = term.coefficients;
  // theta' (Px (x) Jy + Jx (x) Py) theta with theta laid out as C (kx x ky)
  return (bx.penalty_matrix(2) * c * by.gram_matrix()).cwiseProduct(c).sum() +
         (bx.gram_matrix() * c * by.penalty_matrix(2)).cwiseProduct(c).sum();
}

}  // namespace fpanel
