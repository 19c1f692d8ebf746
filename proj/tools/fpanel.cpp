// Command-line front end: one subcommand per stage plus the full pipeline.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"
#include "fpanel/parallel.hpp"
#include "fpanel/pipeline.hpp"
#include "fpanel/synth.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <numbers>

namespace fs = std::filesystem;
using namespace fpanel;

namespace {

// Flag values; unset ones leave the config file (or default) alone.
struct Flags {
  std::string config;
  std::string input;
  std::string output;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::vector<std::string> transforms;  // VAR=tag
  std::vector<std::string> variables;
  std::optional<std::size_t> grid_size;
  std::optional<std::string> kernel;
  std::optional<std::string> mean_bandwidth;
  std::optional<std::string> cov_bandwidth;
  std::optional<double> cov_bandwidth_t;
  std::optional<double> fve;
  std::string from_smooth;
  std::string from_fpca;
  // cluster
  std::optional<std::string> cluster_variable;
  std::optional<std::size_t> k;
  std::optional<std::uint64_t> cluster_seed;
  std::optional<std::size_t> restarts;
  std::optional<std::size_t> n_basis;
  // regress
  std::optional<std::string> mode;
  std::optional<std::string> penalty_mode;
  std::optional<std::size_t> kx;
  std::optional<std::size_t> ky;
  std::vector<std::string> regressions;
  // synth
  std::string kind = "study";
  std::size_t n = 0;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--input", f.input, "long-format panel CSV (country,year,variable,value)");
  app->add_option("--output", f.output, "output directory (relative paths go under FPANEL_OUTPUT_ROOT when set)");
  app->add_option("--seed", f.seed, "global seed");
  app->add_option("--threads", f.threads, "worker threads (0 = all cores)");
  app->add_option("--transform", f.transforms, "VAR=none|log|log-offset[(c)], repeatable");
}

void add_pace(CLI::App* app, Flags& f) {
  app->add_option("--variable", f.variables, "restrict to these variables");
  app->add_option("--grid-size", f.grid_size, "output grid points on [0, 1]");
  app->add_option("--kernel", f.kernel, "gaussian | epanechnikov");
  app->add_option("--mean-bandwidth", f.mean_bandwidth, "auto | default | value");
  app->add_option("--cov-bandwidth", f.cov_bandwidth, "auto | default | value");
  app->add_option("--cov-bandwidth-t", f.cov_bandwidth_t, "second-argument covariance bandwidth");
  app->add_option("--fve", f.fve, "fraction of variance explained threshold");
}

void add_cluster(CLI::App* app, Flags& f) {
  app->add_option("--cluster-variable", f.cluster_variable, "variable to cluster");
  app->add_option("--k", f.k, "number of clusters");
  app->add_option("--cluster-seed", f.cluster_seed, "k-means seed (default: derived from --seed)");
  app->add_option("--restarts", f.restarts, "k-means restarts");
  app->add_option("--n-basis", f.n_basis, "B-spline basis size for curve smoothing");
}

void add_regress(CLI::App* app, Flags& f) {
  app->add_option("--mode", f.mode, "surface | concurrent (applies to every term)");
  app->add_option("--penalty-mode", f.penalty_mode, "both | literal");
  app->add_option("--kx", f.kx, "predictor basis size");
  app->add_option("--ky", f.ky, "response basis size");
  app->add_option("--regression", f.regressions, "run only these named regressions");
}

json load_config_json(const Flags& f, fs::path& base) {
  if (f.config.empty()) return json::object();
  base = fs::absolute(f.config).lexically_normal().parent_path();
  try {
    return json::parse(io::read_file(f.config));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, "cannot parse " + f.config + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::InvalidConfig, e.detail());
  }
}

// Flags are written into the config document so one parser handles both.
RunConfig effective_config(const Flags& f) {
  fs::path base;
  json j = load_config_json(f, base);
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "config must be a JSON object");
  if (!f.input.empty()) j["input"] = fs::absolute(f.input).string();
  if (!f.output.empty()) j["output"] = f.output;
  if (f.seed) j["seed"] = *f.seed;
  for (const auto& t : f.transforms) {
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorCode::InvalidConfig, "--transform expects VAR=tag, got " + t);
    j["variables"][t.substr(0, eq)] = t.substr(eq + 1);
  }
  json& pace = j["pace"];
  if (pace.is_null()) pace = json::object();
  if (f.grid_size) pace["grid_size"] = *f.grid_size;
  if (f.kernel) pace["kernel"] = *f.kernel;
  if (f.mean_bandwidth) pace["mean_bandwidth"] = *f.mean_bandwidth;
  if (f.cov_bandwidth) pace["cov_bandwidth"] = *f.cov_bandwidth;
  if (f.cov_bandwidth_t) pace["cov_bandwidth_t"] = *f.cov_bandwidth_t;
  if (f.fve) pace["fve"] = *f.fve;

  if (f.cluster_variable || f.k || f.cluster_seed || f.restarts || f.n_basis) {
    json& c = j["cluster"];
    if (c.is_null()) c = json::object();
    if (f.cluster_variable) c["variable"] = *f.cluster_variable;
    if (f.k) c["k"] = *f.k;
    if (f.cluster_seed) c["seed"] = *f.cluster_seed;
    if (f.restarts) c["restarts"] = *f.restarts;
    if (f.n_basis) c["n_basis"] = *f.n_basis;
  }
  if (j.contains("regressions")) {
    json kept = json::array();
    for (json r : j["regressions"]) {
      const std::string name = r.value("name", r.value("response", std::string{}));
      if (!f.regressions.empty() && std::find(f.regressions.begin(), f.regressions.end(), name) == f.regressions.end())
        continue;
      if (f.mode) {
        r["mode"] = *f.mode;
        for (auto& t : r["terms"])
          if (t.is_object()) t.erase("kind");
      }
      if (f.penalty_mode) r["penalty_mode"] = *f.penalty_mode;
      if (f.kx) r["kx"] = *f.kx;
      if (f.ky) r["ky"] = *f.ky;
      kept.push_back(r);
    }
    if (!f.regressions.empty() && kept.size() != f.regressions.size())
      fail(ErrorCode::InvalidConfig, "--regression names a regression the config does not define");
    j["regressions"] = kept;
  }
  RunConfig c = RunConfig::from_json(j, base);
  if (c.input.empty()) fail(ErrorCode::InvalidConfig, "no input: pass --input or set \"input\" in the config");
  return c;
}

// Variables a single-stage command works on: --variable, else the config's functional variables.
std::vector<std::string> stage_variables(const Flags& f, const RunConfig& c, const PanelTable& table) {
  std::vector<std::string> vars = f.variables.empty() ? c.functional_variables() : f.variables;
  if (vars.empty()) vars = table.variables();
  for (const auto& v : vars)
    if (!table.variable_index(v)) fail(ErrorCode::UnknownVariable, "variable '" + v + "' is not in the input");
  return vars;
}

PanelTable load_checked(const RunConfig& c) {
  const PanelTable table = load_panel(c.input, {});
  c.check_schema(table);
  return table;
}

// Reconstructed curves per variable: read from a previous fpca run or fitted here.
std::map<std::string, CurveSet> curves_for(const Flags& f, const RunConfig& c, const PanelTable& table,
                                           const std::vector<std::string>& vars) {
  std::map<std::string, CurveSet> out;
  for (const auto& v : vars) {
    if (!f.from_fpca.empty()) {
      out[v] = read_fpca_curves(fs::path(f.from_fpca) / v);
      continue;
    }
    const SparseConversion conv = to_sparse_functional(table, v, c.transform_of(v));
    out[v] = fpca_curves(fit_pace(conv.dataset, c.pace));
  }
  return out;
}

int cmd_ingest(const Flags& f) {
  const RunConfig c = effective_config(f);
  const PanelTable table = load_checked(c);
  const auto report = missingness_report(table);
  std::cout << "variable,percent_missing\n";
  for (const auto& r : report) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", r.percent);
    std::cout << io::csv_field(r.variable) << "," << buf << "\n";
  }
  if (!c.output.empty()) {
    const fs::path out = resolve_output(c.output);
    fs::create_directories(out);
    write_missingness(out / "missingness.csv", report);
    log_stage("ingest", "wrote " + (out / "missingness.csv").string());
  }
  log_stage("ingest", std::to_string(table.subjects().size()) + " subjects, years " + std::to_string(table.year_min()) +
                          "-" + std::to_string(table.year_max()));
  return 0;
}

int cmd_smooth(const Flags& f) {
  const RunConfig c = effective_config(f);
  const PanelTable table = load_checked(c);
  const fs::path out = resolve_output(c.output);
  for (const auto& v : stage_variables(f, c, table)) {
    log_stage("smooth:" + v, "start");
    const SparseConversion conv = to_sparse_functional(table, v, c.transform_of(v));
    try {
      write_smoothing(out / "smooth" / v, smooth_stage(conv.dataset, c.pace), conv.dataset, c.pace.grid_size);
    } catch (const Error& e) {
      throw e.with_stage("smooth:" + v);
    }
  }
  return 0;
}

int cmd_fpca(const Flags& f) {
  const RunConfig c = effective_config(f);
  const PanelTable table = load_checked(c);
  const fs::path out = resolve_output(c.output);
  for (const auto& v : stage_variables(f, c, table)) {
    log_stage("fpca:" + v, f.from_smooth.empty() ? "start" : "start from " + (fs::path(f.from_smooth) / v).string());
    const SparseConversion conv = to_sparse_functional(table, v, c.transform_of(v));
    try {
      SmoothingResult smoothing = f.from_smooth.empty() ? smooth_stage(conv.dataset, c.pace)
                                                        : read_smoothing(fs::path(f.from_smooth) / v);
      const FpcaFit fit = fit_pace_from_smoothing(conv.dataset, std::move(smoothing), c.pace);
      write_fpca(out / "fpca" / v, fit, conv);
      log_stage("fpca:" + v, "K=" + std::to_string(fit.K) + " sigma2=" + io::format_double(fit.sigma2));
    } catch (const Error& e) {
      throw e.with_stage("fpca:" + v);
    }
  }
  return 0;
}

int cmd_cluster(const Flags& f) {
  const RunConfig c = effective_config(f);
  const ClusterConfig cc = c.cluster.value_or(ClusterConfig{});
  const PanelTable table = load_checked(c);
  if (!table.variable_index(cc.variable))
    fail(ErrorCode::UnknownVariable, "variable '" + cc.variable + "' is not in the input");
  const auto curves = curves_for(f, c, table, {cc.variable});
  const std::uint64_t seed = cc.seed.value_or(stage_seed(c.seed, "cluster"));
  log_stage("cluster", "k=" + std::to_string(cc.k) + " seed=" + std::to_string(seed));
  try {
    const ClusterRun run = run_cluster(curves.at(cc.variable), cc, seed);
    write_cluster(resolve_output(c.output) / "cluster", run, curves.at(cc.variable).domain);
  } catch (const Error& e) {
    throw e.with_stage("cluster");
  }
  return 0;
}

int cmd_regress(const Flags& f) {
  const RunConfig c = effective_config(f);
  if (c.regressions.empty()) fail(ErrorCode::InvalidConfig, "the config defines no regressions");
  const PanelTable table = load_checked(c);
  RunConfig only = c;
  only.cluster.reset();
  const auto curves = curves_for(f, c, table, only.functional_variables());
  const fs::path out = resolve_output(c.output);
  for (const auto& rc : c.regressions) {
    log_stage("regress:" + rc.name, "mode " + to_string(rc.mode));
    try {
      const RegressionFit fit = run_regression(rc, curves);
      write_regression(out / "regress" / rc.name, fit);
      for (const auto& w : fit.warnings) log_stage("regress:" + rc.name, "warning: " + w);
    } catch (const Error& e) {
      throw e.with_stage("regress:" + rc.name);
    }
  }
  if (c.static_fe) {
    log_stage("static_fe", "start");
    write_static(out / "static_fe.json", run_static(table, c), *c.static_fe);
  }
  return 0;
}

int cmd_pipeline(const Flags& f) {
  run_pipeline(effective_config(f));
  return 0;
}

// Datasets with known truth, written as panel CSV plus truth.json.
int cmd_synth(const Flags& f) {
  const fs::path out = resolve_output(f.output.empty() ? fs::path("synth") : fs::path(f.output));
  const std::uint64_t seed = f.seed.value_or(20170131);
  fs::create_directories(out);
  json truth;
  truth["kind"] = f.kind;
  truth["seed"] = seed;
  if (f.kind == "study") {
    StudyOptions o;
    o.seed = seed;
    if (f.n) o.countries = f.n;
    write_panel(generate_study(o), out / "panel.csv");
    truth["countries"] = o.countries;
    truth["years"] = {o.year_min, o.year_max};
    truth["model"] = "log POV = p0 - 0.8 t + smooth term + 6 (1 - 0.35 (AV log MCAP - 3.6)) (HHI - 0.17) + noise";
  } else if (f.kind == "kl") {
    KlTruth t = KlTruth::standard();
    t.seed = seed;
    const std::size_t n = f.n ? f.n : 300;
    const KlSample s = generate_kl(t, n, uniform_grid(51));
    write_panel(to_panel(s.data, "X"), out / "panel.csv");
    truth["n"] = n;
    truth["mean"] = "2 + sin(2 pi t)";
    truth["eigenfunctions"] = to_string(t.family);
    truth["eigenvalues"] = t.eigenvalues;
    truth["sigma"] = t.sigma;
    truth["points_per_subject"] = {t.n_min, t.n_max};
    truth["lattice"] = t.lattice;
    json scores = json::object();
    for (std::size_t i = 0; i < s.data.samples.size(); ++i) {
      std::vector<double> row(s.scores.cols());
      for (Eigen::Index k = 0; k < s.scores.cols(); ++k) row[k] = s.scores(static_cast<Eigen::Index>(i), k);
      scores[s.data.samples[i].subject] = row;
    }
    truth["scores"] = scores;
  } else if (f.kind == "panel") {
    PanelTruth t;
    t.seed = seed;
    t.beta3 = 0.1;
    t.gamma = {0.3, -0.2};
    t.missing_fraction = 0.1;
    if (f.n) t.countries = f.n;
    const PanelSample s = generate_panel(t);
    write_panel(s.table, out / "panel.csv");
    truth["beta"] = {{"HHI", t.beta1}, {"MCAP", t.beta2}, {"HHI_x_AVMCAP", t.beta3}};
    truth["gamma"] = t.gamma;
    truth["sigma"] = t.sigma;
    truth["country_effects"] = s.country_effects;
    json years = json::object();
    for (const auto& [y, v] : s.year_effects) years[std::to_string(y)] = v;
    truth["year_effects"] = years;
    truth["avmcap"] = s.avmcap;
  } else if (f.kind == "concurrent") {
    // Y = 2 X + noise with sigma = 0.1 of the range of X, observed on every year.
    KlTruth t = KlTruth::standard();
    t.seed = seed;
    t.sigma = 0.0;
    t.n_min = t.n_max = t.lattice;
    const std::size_t n = f.n ? f.n : 200;
    const Eigen::VectorXd grid = uniform_grid(t.lattice);
    const KlSample s = generate_kl(t, n, grid);
    const double sigma = 0.1 * (s.truth.maxCoeff() - s.truth.minCoeff());
    Rng rng(stage_seed(seed, "concurrent-noise"));
    std::vector<std::string> ids = s.data.subject_ids();
    PanelTable table(ids, t.year_min, t.year_min + static_cast<int>(t.lattice) - 1, {"X", "Y"});
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < t.lattice; ++j) {
        const double x = s.truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        table.set(i, t.year_min + static_cast<int>(j), 0, x);
        table.set(i, t.year_min + static_cast<int>(j), 1, 2.0 * x + sigma * rng.normal());
      }
    write_panel(table, out / "panel.csv");
    truth["n"] = n;
    truth["beta_t"] = 2.0;
    truth["sigma_y"] = sigma;
  } else {
    fail(ErrorCode::InvalidConfig, "unknown synth kind '" + f.kind + "' (study, kl, panel, concurrent)");
  }
  io::write_file(out / "truth.json", truth.dump(2) + "\n");
  log_stage("synth", "wrote " + (out / "panel.csv").string());
  return 0;
}

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::Configuration: return 2;
    case ErrorClass::Data: return 3;
    case ErrorClass::Numerical: return 4;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse functional panel analysis: PACE, curve clustering, functional regression"};
  app.require_subcommand(1);
  Flags f;

  auto* ingest = app.add_subcommand("ingest-report", "missingness per variable");
  add_common(ingest, f);
  auto* smooth = app.add_subcommand("smooth", "mean and covariance smoothing");
  add_common(smooth, f);
  add_pace(smooth, f);
  auto* fpca = app.add_subcommand("fpca", "eigenfunctions, scores and reconstructions");
  add_common(fpca, f);
  add_pace(fpca, f);
  fpca->add_option("--from-smooth", f.from_smooth, "reuse a smooth run's output directory");
  auto* cluster = app.add_subcommand("cluster", "functional k-means on reconstructed curves");
  add_common(cluster, f);
  add_pace(cluster, f);
  add_cluster(cluster, f);
  cluster->add_option("--from-fpca", f.from_fpca, "reuse an fpca run's output directory");
  auto* regress = app.add_subcommand("regress", "function-on-function and concurrent regression");
  add_common(regress, f);
  add_pace(regress, f);
  add_regress(regress, f);
  regress->add_option("--from-fpca", f.from_fpca, "reuse an fpca run's output directory");
  auto* synth = app.add_subcommand("synth", "write a synthetic panel with known truth");
  synth->add_option("--kind", f.kind, "study | kl | panel | concurrent");
  synth->add_option("--output", f.output, "output directory");
  synth->add_option("--seed", f.seed, "generator seed");
  synth->add_option("--n", f.n, "subjects (countries for study/panel)");
  auto* pipeline = app.add_subcommand("pipeline", "run every configured stage");
  add_common(pipeline, f);
  add_pace(pipeline, f);
  add_cluster(pipeline, f);
  add_regress(pipeline, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_num_threads(f.threads);
    if (ingest->parsed()) return cmd_ingest(f);
    if (smooth->parsed()) return cmd_smooth(f);
    if (fpca->parsed()) return cmd_fpca(f);
    if (cluster->parsed()) return cmd_cluster(f);
    if (regress->parsed()) return cmd_regress(f);
    if (synth->parsed()) return cmd_synth(f);
    if (pipeline->parsed()) return cmd_pipeline(f);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code(e.error_class());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 4;
  }
  return 2;
}
