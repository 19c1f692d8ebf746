#include "fpanel/pipeline.hpp"

#include "fpanel/error.hpp"
#include "fpanel/io.hpp"
#include "fpanel/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>

namespace fpanel {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { fail(ErrorCode::InvalidConfig, message); }

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      config_error("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

BandwidthSetting bandwidth_from(const json& v) {
  if (v.is_number()) {
    const double h = v.get<double>();
    if (!(h > 0.0)) config_error("bandwidth must be positive");
    return BandwidthSetting::fixed(h);
  }
  return BandwidthSetting::parse(v.get<std::string>());
}

json bandwidth_to(const BandwidthSetting& b) {
  if (b.mode == BandwidthSetting::Mode::Fixed) return b.value;
  return b.describe();
}

fs::path resolve_against(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

TermSpec term_from(const json& t, TermKind mode) {
  TermSpec spec;
  spec.kind = mode;
  if (t.is_string()) {
    spec.predictor = t.get<std::string>();
    return spec;
  }
  check_keys(t, "term", {"predictor", "scalar", "kind"});
  spec.predictor = t.at("predictor").get<std::string>();
  if (t.contains("scalar") && !t.at("scalar").is_null()) spec.scalar = "AV" + t.at("scalar").get<std::string>();
  if (t.contains("kind")) spec.kind = parse_term_kind(t.at("kind").get<std::string>());
  return spec;
}

json term_to(const TermSpec& t, TermKind mode) {
  if (!t.scalar && t.kind == mode) return t.predictor;
  json j;
  j["predictor"] = t.predictor;
  if (t.scalar) j["scalar"] = t.scalar->substr(2);
  if (t.kind != mode) j["kind"] = to_string(t.kind);
  return j;
}

// Scalar names carry the "AV" prefix; the source variable follows it.
std::string scalar_source(const std::string& scalar) { return scalar.substr(2); }

void push_unique(std::vector<std::string>& list, const std::string& name) {
  if (std::find(list.begin(), list.end(), name) == list.end()) list.push_back(name);
}

json double_list(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) {
    if (std::isfinite(v))
      out.push_back(v);
    else
      out.push_back(nullptr);
  }
  return out;
}

json selection_json(const std::optional<BandwidthChoice>& choice) {
  if (!choice) return nullptr;
  json j;
  j["bandwidth"] = choice->bandwidth;
  j["candidates"] = double_list(choice->candidates);
  j["scores"] = double_list(choice->scores);
  return j;
}

std::optional<BandwidthChoice> selection_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  BandwidthChoice c;
  c.bandwidth = j.at("bandwidth").get<double>();
  c.candidates = j.at("candidates").get<std::vector<double>>();
  for (const auto& s : j.at("scores"))
    c.scores.push_back(s.is_null() ? std::numeric_limits<double>::infinity() : s.get<double>());
  return c;
}

json domain_json(const DomainMap& d) { return {{"year_min", d.year_min}, {"year_max", d.year_max}}; }

std::string year_text(const DomainMap& d, double t) { return io::format_double(d.to_year(t)); }

json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, "cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

}  // namespace

// ---------------------------------------------------------------- config

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  try {
    check_keys(j, "config", {"input", "output", "seed", "variables", "pace", "cluster", "regressions", "static_fe"});
    RunConfig c;
    c.input = resolve_against(get_or<std::string>(j, "input", ""), base);
    c.output = get_or<std::string>(j, "output", "");
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    if (j.contains("variables")) {
      if (!j.at("variables").is_object()) config_error("variables must map names to transforms");
      for (const auto& [name, tag] : j.at("variables").items()) {
        const std::string t = tag.is_null() ? "none" : tag.get<std::string>();
        c.transforms[name] = Transform::parse(t);
      }
    }
    if (j.contains("pace")) {
      const json& p = j.at("pace");
      check_keys(p, "pace", {"grid_size", "kernel", "mean_bandwidth", "cov_bandwidth", "cov_bandwidth_t",
                             "bandwidth_candidates", "fve"});
      c.pace.grid_size = get_or<std::size_t>(p, "grid_size", c.pace.grid_size);
      if (p.contains("kernel")) c.pace.kernel = parse_kernel_kind(p.at("kernel").get<std::string>());
      if (p.contains("mean_bandwidth")) c.pace.mean_bandwidth = bandwidth_from(p.at("mean_bandwidth"));
      if (p.contains("cov_bandwidth")) c.pace.cov_bandwidth = bandwidth_from(p.at("cov_bandwidth"));
      if (p.contains("cov_bandwidth_t") && !p.at("cov_bandwidth_t").is_null())
        c.pace.cov_bandwidth_t = p.at("cov_bandwidth_t").get<double>();
      c.pace.bandwidth_candidates = get_or<std::vector<double>>(p, "bandwidth_candidates", {});
      c.pace.fve_threshold = get_or<double>(p, "fve", c.pace.fve_threshold);
    }
    if (j.contains("cluster") && !j.at("cluster").is_null()) {
      const json& k = j.at("cluster");
      check_keys(k, "cluster",
                 {"variable", "k", "seed", "restarts", "max_iterations", "n_basis", "order", "lambda_grid"});
      ClusterConfig cc;
      cc.variable = get_or<std::string>(k, "variable", cc.variable);
      cc.k = get_or<std::size_t>(k, "k", cc.k);
      if (k.contains("seed") && !k.at("seed").is_null()) cc.seed = k.at("seed").get<std::uint64_t>();
      cc.restarts = get_or<std::size_t>(k, "restarts", cc.restarts);
      cc.max_iterations = get_or<std::size_t>(k, "max_iterations", cc.max_iterations);
      cc.n_basis = get_or<std::size_t>(k, "n_basis", cc.n_basis);
      cc.order = get_or<std::size_t>(k, "order", cc.order);
      cc.lambda_grid = get_or<std::vector<double>>(k, "lambda_grid", cc.lambda_grid);
      c.cluster = cc;
    }
    if (j.contains("regressions")) {
      for (const json& r : j.at("regressions")) {
        check_keys(r, "regression", {"name", "response", "terms", "mode", "kx", "ky", "order", "penalty_grid",
                                     "penalty_mode", "max_sweeps"});
        RegressionConfig rc;
        rc.spec.response = r.at("response").get<std::string>();
        rc.name = get_or<std::string>(r, "name", rc.spec.response);
        if (r.contains("mode")) rc.mode = parse_term_kind(r.at("mode").get<std::string>());
        for (const json& t : r.at("terms")) rc.spec.terms.push_back(term_from(t, rc.mode));
        rc.spec.kx = get_or<std::size_t>(r, "kx", rc.spec.kx);
        rc.spec.ky = get_or<std::size_t>(r, "ky", rc.spec.ky);
        rc.spec.order = get_or<std::size_t>(r, "order", rc.spec.order);
        rc.spec.penalty_grid = get_or<std::vector<double>>(r, "penalty_grid", rc.spec.penalty_grid);
        if (r.contains("penalty_mode")) rc.spec.penalty_mode = parse_penalty_mode(r.at("penalty_mode").get<std::string>());
        rc.spec.max_sweeps = get_or<std::size_t>(r, "max_sweeps", rc.spec.max_sweeps);
        c.regressions.push_back(rc);
      }
    }
    if (j.contains("static_fe") && !j.at("static_fe").is_null()) {
      const json& s = j.at("static_fe");
      check_keys(s, "static_fe", {"response", "competition", "development", "interaction", "controls", "transformed"});
      StaticConfig sc;
      sc.spec.response = get_or<std::string>(s, "response", sc.spec.response);
      sc.spec.competition = get_or<std::string>(s, "competition", sc.spec.competition);
      sc.spec.development = get_or<std::string>(s, "development", sc.spec.development);
      sc.spec.interaction = get_or<bool>(s, "interaction", sc.spec.interaction);
      sc.spec.controls = get_or<std::vector<std::string>>(s, "controls", {});
      sc.transformed = get_or<bool>(s, "transformed", sc.transformed);
      c.static_fe = sc;
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    config_error("cannot parse " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    config_error(e.detail());
  }
  return from_json(j, fs::absolute(path).lexically_normal().parent_path());
}

json RunConfig::to_json() const {
  json j;
  j["input"] = input.string();
  j["output"] = output.string();
  j["seed"] = seed;
  json vars = json::object();
  for (const auto& [name, t] : transforms) vars[name] = t.tag();
  j["variables"] = vars;
  j["pace"] = {{"grid_size", pace.grid_size},
               {"kernel", to_string(pace.kernel)},
               {"mean_bandwidth", bandwidth_to(pace.mean_bandwidth)},
               {"cov_bandwidth", bandwidth_to(pace.cov_bandwidth)},
               {"cov_bandwidth_t", pace.cov_bandwidth_t ? json(*pace.cov_bandwidth_t) : json(nullptr)},
               {"bandwidth_candidates", pace.bandwidth_candidates},
               {"fve", pace.fve_threshold}};
  if (cluster) {
    j["cluster"] = {{"variable", cluster->variable},
                    {"k", cluster->k},
                    {"seed", cluster->seed ? json(*cluster->seed) : json(nullptr)},
                    {"restarts", cluster->restarts},
                    {"max_iterations", cluster->max_iterations},
                    {"n_basis", cluster->n_basis},
                    {"order", cluster->order},
                    {"lambda_grid", cluster->lambda_grid}};
  }
  json regs = json::array();
  for (const auto& r : regressions) {
    json terms = json::array();
    for (const auto& t : r.spec.terms) terms.push_back(term_to(t, r.mode));
    regs.push_back({{"name", r.name},
                    {"response", r.spec.response},
                    {"terms", terms},
                    {"mode", to_string(r.mode)},
                    {"kx", r.spec.kx},
                    {"ky", r.spec.ky},
                    {"order", r.spec.order},
                    {"penalty_grid", r.spec.penalty_grid},
                    {"penalty_mode", to_string(r.spec.penalty_mode)},
                    {"max_sweeps", r.spec.max_sweeps}});
  }
  j["regressions"] = regs;
  if (static_fe) {
    j["static_fe"] = {{"response", static_fe->spec.response},
                      {"competition", static_fe->spec.competition},
                      {"development", static_fe->spec.development},
                      {"interaction", static_fe->spec.interaction},
                      {"controls", static_fe->spec.controls},
                      {"transformed", static_fe->transformed}};
  }
  return j;
}

Transform RunConfig::transform_of(const std::string& variable) const {
  auto it = transforms.find(variable);
  return it == transforms.end() ? Transform::none() : it->second;
}

std::vector<std::string> RunConfig::functional_variables() const {
  std::vector<std::string> out;
  if (cluster) push_unique(out, cluster->variable);
  for (const auto& r : regressions) {
    push_unique(out, r.spec.response);
    for (const auto& t : r.spec.terms) {
      push_unique(out, t.predictor);
      if (t.scalar) push_unique(out, scalar_source(*t.scalar));
    }
  }
  return out;
}

std::vector<std::string> RunConfig::referenced_variables() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : transforms) push_unique(out, name);
  for (const auto& v : functional_variables()) push_unique(out, v);
  if (static_fe) {
    push_unique(out, static_fe->spec.response);
    push_unique(out, static_fe->spec.competition);
    push_unique(out, static_fe->spec.development);
    for (const auto& z : static_fe->spec.controls) push_unique(out, z);
  }
  return out;
}

void RunConfig::validate() const {
  if (pace.grid_size < 2) config_error("pace.grid_size must be at least 2");
  if (!(pace.fve_threshold > 0.0 && pace.fve_threshold <= 1.0)) config_error("pace.fve must lie in (0, 1]");
  if (pace.cov_bandwidth_t && !(*pace.cov_bandwidth_t > 0.0)) config_error("pace.cov_bandwidth_t must be positive");
  for (double h : pace.bandwidth_candidates)
    if (!(h > 0.0)) config_error("pace.bandwidth_candidates must be positive");
  if (cluster) {
    if (cluster->k < 1) config_error("cluster.k must be at least 1");
    if (cluster->restarts < 1) config_error("cluster.restarts must be at least 1");
    if (cluster->order < 2 || cluster->n_basis < cluster->order) config_error("cluster basis needs n_basis >= order >= 2");
    if (cluster->lambda_grid.empty()) config_error("cluster.lambda_grid is empty");
  }
  std::set<std::string> names;
  for (const auto& r : regressions) {
    if (r.name.empty() || r.name.find('/') != std::string::npos) config_error("regression names must be plain file names");
    if (!names.insert(r.name).second) config_error("duplicate regression name '" + r.name + "'");
    if (r.spec.response.empty()) config_error("regression '" + r.name + "' needs exactly one response");
    if (r.spec.penalty_grid.empty()) config_error("regression '" + r.name + "' has an empty penalty grid");
    std::set<std::string> labels;
    for (const auto& t : r.spec.terms) {
      if (t.predictor == r.spec.response) config_error("regression '" + r.name + "' uses its response as a predictor");
      if (!labels.insert(t.label()).second) config_error("regression '" + r.name + "' repeats term " + t.label());
    }
  }
}

void RunConfig::check_schema(const PanelTable& table) const {
  for (const auto& v : referenced_variables())
    if (!table.variable_index(v)) fail(ErrorCode::UnknownVariable, "variable '" + v + "' is not in the input");
}

std::uint64_t stage_seed(std::uint64_t global, const std::string& label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = global ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

fs::path resolve_output(const fs::path& requested) {
  fs::path p = requested.empty() ? fs::path("fpanel_output") : requested;
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("FPANEL_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

void log_stage(const std::string& stage, const std::string& message) {
  std::cerr << "[" << stage << "] " << message << std::endl;
}

// ---------------------------------------------------------------- exports

void write_missingness(const fs::path& path, const std::vector<MissingnessRow>& rows) {
  std::string out = "variable,percent_missing\n";
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.2f", r.percent);
    out += io::csv_field(r.variable) + "," + buf + "\n";
  }
  io::write_file(path, out);
}

void write_smoothing(const fs::path& dir, const SmoothingResult& result, const FunctionalDataset& data,
                     std::size_t grid_size) {
  fs::create_directories(dir);
  io::write_curve_csv(dir / "mean.csv", result.mean);
  io::write_surface_csv(dir / "covariance.csv", result.covariance);
  json common;
  common["variable"] = data.variable;
  common["transform"] = data.transform.tag();
  common["grid_size"] = grid_size;
  common["domain"] = domain_json(data.domain);
  json mean = common;
  mean["kernel"] = to_string(result.mean_kernel.kind);
  mean["bandwidth"] = result.mean_kernel.bandwidth;
  mean["selection"] = selection_json(result.mean_selection);
  write_json(dir / "mean.json", mean);
  json cov = common;
  cov["kernel"] = to_string(result.cov_kernel_s.kind);
  cov["bandwidth_s"] = result.cov_kernel_s.bandwidth;
  cov["bandwidth_t"] = result.cov_kernel_t.bandwidth;
  cov["selection"] = selection_json(result.cov_selection);
  write_json(dir / "covariance.json", cov);
}

SmoothingResult read_smoothing(const fs::path& dir) {
  SmoothingResult r;
  r.mean = io::read_curve_csv(dir / "mean.csv");
  r.covariance = io::read_surface_csv(dir / "covariance.csv");
  const json mean = read_json(dir / "mean.json");
  const json cov = read_json(dir / "covariance.json");
  try {
    r.mean_kernel = {parse_kernel_kind(mean.at("kernel").get<std::string>()), mean.at("bandwidth").get<double>()};
    r.mean_selection = selection_from(mean.at("selection"));
    const KernelKind kind = parse_kernel_kind(cov.at("kernel").get<std::string>());
    r.cov_kernel_s = {kind, cov.at("bandwidth_s").get<double>()};
    r.cov_kernel_t = {kind, cov.at("bandwidth_t").get<double>()};
    r.cov_selection = selection_from(cov.at("selection"));
  } catch (const json::exception& e) {
    fail(ErrorCode::Io, "bad smoothing sidecar in " + dir.string() + ": " + e.what());
  }
  if (!same_grid(r.mean.grid, r.covariance.grid))
    fail(ErrorCode::GridMismatch, "mean and covariance grids differ in " + dir.string());
  return r;
}

CurveSet fpca_curves(const FpcaFit& fit) {
  CurveSet c;
  c.subjects = fit.subjects;
  c.grid = fit.grid();
  c.values = reconstruct_all(fit);
  c.domain = fit.domain;
  return c;
}

void write_fpca(const fs::path& dir, const FpcaFit& fit, const SparseConversion& conversion) {
  fs::create_directories(dir);
  const Eigen::VectorXd& grid = fit.grid();
  io::write_curve_csv(dir / "mean.csv", fit.mean());

  std::string ef = "k,t,value\n";
  for (std::size_t k = 0; k < fit.K; ++k)
    for (Eigen::Index g = 0; g < grid.size(); ++g)
      ef += std::to_string(k + 1) + "," + io::format_double(grid[g]) + "," +
            io::format_double(fit.eigen.eigenfunctions(g, static_cast<Eigen::Index>(k))) + "\n";
  io::write_file(dir / "eigenfunctions.csv", ef);

  std::string ev = "k,lambda\n";
  for (Eigen::Index k = 0; k < fit.eigen.eigenvalues.size(); ++k)
    ev += std::to_string(k + 1) + "," + io::format_double(fit.eigen.eigenvalues[k]) + "\n";
  io::write_file(dir / "eigenvalues.csv", ev);

  std::string sc = "subject,k,score\n";
  for (std::size_t i = 0; i < fit.subjects.size(); ++i)
    for (std::size_t k = 0; k < fit.K; ++k)
      sc += io::csv_field(fit.subjects[i]) + "," + std::to_string(k + 1) + "," +
            io::format_double(fit.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))) + "\n";
  io::write_file(dir / "scores.csv", sc);

  const Eigen::MatrixXd curves = reconstruct_all(fit);
  std::string cv = "subject,t,t_year,value\n";
  for (std::size_t i = 0; i < fit.subjects.size(); ++i) {
    const std::string id = io::csv_field(fit.subjects[i]) + ",";
    for (Eigen::Index g = 0; g < grid.size(); ++g)
      cv += id + io::format_double(grid[g]) + "," + year_text(fit.domain, grid[g]) + "," +
            io::format_double(curves(static_cast<Eigen::Index>(i), g)) + "\n";
  }
  io::write_file(dir / "curves.csv", cv);

  json s;
  s["variable"] = fit.variable;
  s["transform"] = fit.transform.tag();
  s["domain"] = domain_json(fit.domain);
  s["grid_size"] = grid.size();
  s["subjects"] = fit.subjects.size();
  s["sigma2"] = fit.sigma2;
  s["K"] = fit.K;
  s["fve_threshold"] = fit.fve_threshold;
  s["fve"] = fit.fve;
  s["eigenvalues"] = std::vector<double>(fit.eigen.eigenvalues.data(),
                                         fit.eigen.eigenvalues.data() + fit.eigen.eigenvalues.size());
  s["bandwidths"] = {{"kernel", to_string(fit.smoothing.mean_kernel.kind)},
                     {"mean", fit.smoothing.mean_kernel.bandwidth},
                     {"cov_s", fit.smoothing.cov_kernel_s.bandwidth},
                     {"cov_t", fit.smoothing.cov_kernel_t.bandwidth}};
  s["excluded"] = conversion.excluded;
  s["single_observation"] = conversion.single_observation;
  write_json(dir / "fpca_summary.json", s);
}

CurveSet read_fpca_curves(const fs::path& dir) {
  const io::CsvTable csv = io::read_csv(dir / "curves.csv");
  const std::size_t sc = csv.column("subject"), tc = csv.column("t"), vc = csv.column("value");
  std::vector<std::string> subjects;
  std::vector<double> grid;
  std::vector<double> values;
  for (const auto& row : csv.rows) {
    if (row.size() <= std::max({sc, tc, vc})) fail(ErrorCode::Io, "short row in " + (dir / "curves.csv").string());
    auto t = io::parse_double(row[tc]);
    auto v = io::parse_double(row[vc]);
    if (!t || !v) fail(ErrorCode::Io, "bad number in " + (dir / "curves.csv").string());
    if (subjects.empty() || subjects.back() != row[sc]) subjects.push_back(row[sc]);
    if (subjects.size() == 1) grid.push_back(*t);
    values.push_back(*v);
  }
  if (subjects.empty() || values.size() != subjects.size() * grid.size())
    fail(ErrorCode::Io, "curves.csv is not a complete subject x grid table in " + dir.string());
  CurveSet c;
  c.subjects = subjects;
  c.grid = Eigen::Map<const Eigen::VectorXd>(grid.data(), static_cast<Eigen::Index>(grid.size()));
  c.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(subjects.size()), static_cast<Eigen::Index>(grid.size()));
  const json s = read_json(dir / "fpca_summary.json");
  c.domain = {s.at("domain").at("year_min").get<int>(), s.at("domain").at("year_max").get<int>()};
  return c;
}

ClusterRun run_cluster(const CurveSet& curves, const ClusterConfig& config, std::uint64_t seed) {
  ClusterRun run;
  run.subjects = curves.subjects;
  std::vector<GridCurve> raw;
  for (std::size_t i = 0; i < curves.size(); ++i) raw.push_back(curves.curve(i));
  const BSplineBasis basis(config.n_basis, config.order);
  run.smooths = smooth_curves(raw, basis, config.lambda_grid);
  for (const auto& s : run.smooths) run.curves.push_back(s.on_grid(curves.grid));
  run.model = fkmeans(run.curves, {config.k, seed, config.restarts, config.max_iterations});

  // Relabel so cluster 1 has the highest centroid level, cluster k the lowest.
  const std::size_t k = run.model.k;
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> level(k);
  for (std::size_t c = 0; c < k; ++c) level[c] = run.model.centroids[c].integral();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return level[a] > level[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  std::vector<GridCurve> centroids(k);
  for (std::size_t c = 0; c < k; ++c) centroids[rank[c]] = run.model.centroids[c];
  run.model.centroids = centroids;
  for (auto& a : run.model.assignments) a = rank[a];
  return run;
}

void write_cluster(const fs::path& dir, const ClusterRun& run, const DomainMap& domain) {
  fs::create_directories(dir);
  std::string cl = "subject,cluster\n";
  for (std::size_t i = 0; i < run.subjects.size(); ++i)
    cl += io::csv_field(run.subjects[i]) + "," + std::to_string(run.model.assignments[i] + 1) + "\n";
  io::write_file(dir / "clusters.csv", cl);

  std::string ce = "cluster,t,t_year,value\n";
  for (std::size_t c = 0; c < run.model.centroids.size(); ++c) {
    const GridCurve& g = run.model.centroids[c];
    for (Eigen::Index j = 0; j < g.grid.size(); ++j)
      ce += std::to_string(c + 1) + "," + io::format_double(g.grid[j]) + "," + year_text(domain, g.grid[j]) + "," +
            io::format_double(g.values[j]) + "\n";
  }
  io::write_file(dir / "centroids.csv", ce);

  std::string sm = "subject,lambda,t,value\n";
  for (std::size_t i = 0; i < run.subjects.size(); ++i) {
    const std::string head = io::csv_field(run.subjects[i]) + "," + io::format_double(run.smooths[i].lambda) + ",";
    for (Eigen::Index j = 0; j < run.curves[i].grid.size(); ++j)
      sm += head + io::format_double(run.curves[i].grid[j]) + "," + io::format_double(run.curves[i].values[j]) + "\n";
  }
  io::write_file(dir / "smoothed_curves.csv", sm);
  if (!run.smooths.empty() && !run.curves.empty()) export_basis(run.smooths.front().basis, run.curves.front().grid, dir / "basis");

  json s;
  s["k"] = run.model.k;
  s["objective"] = run.model.objective;
  s["restarts"] = run.model.restarts;
  s["seed"] = run.model.seed;
  s["best_restart"] = run.model.best_restart;
  s["sizes"] = run.model.sizes();
  s["curves"] = run.subjects.size();
  std::size_t violations = 0;
  for (const auto& t : run.model.traces) violations += monotonicity_violations(t);
  s["monotonicity_violations"] = violations;
  write_json(dir / "cluster_summary.json", s);
}

RegressionFit run_regression(const RegressionConfig& config, const std::map<std::string, CurveSet>& curves) {
  auto find = [&](const std::string& v) -> const CurveSet& {
    auto it = curves.find(v);
    if (it == curves.end()) fail(ErrorCode::UnknownVariable, "no reconstructed curves for '" + v + "'");
    return it->second;
  };
  std::vector<std::string> used{config.spec.response};
  for (const auto& t : config.spec.terms) {
    push_unique(used, t.predictor);
    if (t.scalar) push_unique(used, scalar_source(*t.scalar));
  }
  std::vector<const CurveSet*> sets;
  for (const auto& v : used) sets.push_back(&find(v));
  const std::vector<std::string> common = common_subjects(sets);

  RegressionData data;
  data.response = find(config.spec.response).subset(common);
  for (const auto& t : config.spec.terms) {
    if (!data.predictors.count(t.predictor)) data.predictors[t.predictor] = find(t.predictor).subset(common);
    if (t.scalar && !data.scalars.count(*t.scalar)) {
      const CurveSet src = find(scalar_source(*t.scalar)).subset(common);
      Eigen::VectorXd av(static_cast<Eigen::Index>(common.size()));
      for (std::size_t i = 0; i < common.size(); ++i) av[static_cast<Eigen::Index>(i)] = src.curve(i).integral();
      data.scalars[*t.scalar] = av;
    }
  }
  return fit_regression(data, config.spec);
}

void write_regression(const fs::path& dir, const RegressionFit& fit) {
  fs::create_directories(dir);
  const Eigen::VectorXd& grid = fit.grid;
  for (const auto& term : fit.terms) {
    const std::string label = term.spec.label();
    if (term.spec.kind == TermKind::Surface) {
      std::string out = "s,t,s_year,t_year,value\n";
      for (Eigen::Index a = 0; a < grid.size(); ++a) {
        const std::string s = io::format_double(grid[a]) + ",";
        const std::string sy = year_text(fit.domain, grid[a]) + ",";
        for (Eigen::Index b = 0; b < grid.size(); ++b)
          out += s + io::format_double(grid[b]) + "," + sy + year_text(fit.domain, grid[b]) + "," +
                 io::format_double(term.surface(a, b)) + "\n";
      }
      io::write_file(dir / ("beta_surface_" + label + ".csv"), out);
    } else {
      std::string out = "t,t_year,value\n";
      for (Eigen::Index g = 0; g < grid.size(); ++g)
        out += io::format_double(grid[g]) + "," + year_text(fit.domain, grid[g]) + "," +
               io::format_double(term.beta_t[g]) + "\n";
      io::write_file(dir / ("beta_t_" + label + ".csv"), out);
    }
  }
  std::string alpha = "t,t_year,value\n";
  for (Eigen::Index g = 0; g < grid.size(); ++g)
    alpha += io::format_double(grid[g]) + "," + year_text(fit.domain, grid[g]) + "," +
             io::format_double(fit.alpha.values[g]) + "\n";
  io::write_file(dir / "alpha.csv", alpha);

  const GridCurve r2 = r2_functional(fit);
  std::string r2s = "t,t_year,r2\n";
  double total = 0.0;
  std::size_t defined = 0;
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    r2s += io::format_double(grid[g]) + "," + year_text(fit.domain, grid[g]) + "," + io::format_double(r2.values[g]) + "\n";
    if (std::isfinite(r2.values[g])) {
      total += r2.values[g];
      ++defined;
    }
  }
  io::write_file(dir / "r2.csv", r2s);

  json s;
  s["response"] = fit.spec.response;
  s["subjects"] = fit.subjects.size();
  s["bases"] = {{"kx", fit.spec.kx}, {"ky", fit.spec.ky}, {"order", fit.spec.order}};
  s["penalty_mode"] = to_string(fit.spec.penalty_mode);
  s["penalty"] = fit.spec.penalty_mode == PenaltyMode::Both
                     ? "second-derivative penalties in s and t"
                     : "second-derivative penalty in s with a 1e-8 ridge in t";
  s["penalty_grid"] = fit.spec.penalty_grid;
  json terms = json::array();
  for (const auto& t : fit.terms)
    terms.push_back({{"label", t.spec.label()}, {"kind", to_string(t.spec.kind)}, {"lambda", t.lambda}});
  s["terms"] = terms;
  s["gcv"] = fit.gcv;
  s["effective_df"] = fit.effective_df;
  s["mean_r2"] = defined ? json(total / static_cast<double>(defined)) : json(nullptr);
  s["warnings"] = fit.warnings;
  write_json(dir / "fit_summary.json", s);
}

PanelTable transform_panel(const PanelTable& table, const RunConfig& config) {
  PanelTable out = table;
  for (std::size_t v = 0; v < table.variables().size(); ++v) {
    const std::string& name = table.variables()[v];
    const Transform requested = config.transform_of(name);
    if (requested.kind == Transform::Kind::None) continue;
    const Transform t = to_sparse_functional(table, name, requested).dataset.transform;
    for (std::size_t s = 0; s < table.subjects().size(); ++s)
      for (int y = table.year_min(); y <= table.year_max(); ++y)
        if (auto x = table.get(s, y, v)) out.set(s, y, v, t.apply(*x));
  }
  return out;
}

StaticPanelFit run_static(const PanelTable& table, const RunConfig& config) {
  const StaticConfig& sc = config.static_fe.value();
  return fit_static_panel_fe(sc.transformed ? transform_panel(table, config) : table, sc.spec);
}

void write_static(const fs::path& path, const StaticPanelFit& fit, const StaticConfig& config) {
  json s;
  json coef = json::object(), se = json::object();
  for (std::size_t k = 0; k < fit.names.size(); ++k) {
    coef[fit.names[k]] = fit.coefficients[static_cast<Eigen::Index>(k)];
    se[fit.names[k]] = fit.std_errors[static_cast<Eigen::Index>(k)];
  }
  s["coefficients"] = coef;
  s["std_errors"] = se;
  s["n"] = fit.observations;
  s["dropped"] = fit.dropped;
  s["countries"] = fit.countries;
  s["years"] = fit.years;
  s["demean_iterations"] = fit.demean_iterations;
  s["transformed"] = config.transformed;
  s["standard_errors"] = "clustered by country, factor G/(G-1) (N-1)/(N-K)";
  s["avmcap"] = fit.avmcap;
  write_json(path, s);
}

// ---------------------------------------------------------------- pipeline

namespace {

class StageRunner {
 public:
  StageRunner(fs::path output, json& timings) : output_(std::move(output)), timings_(timings) {}

  template <class F>
  auto run(const std::string& stage, F&& body) {
    log_stage(stage, "start");
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        finish(stage, start);
      } else {
        auto result = body();
        finish(stage, start);
        return result;
      }
    } catch (const Error& e) {
      const Error labelled = e.with_stage(stage);
      mark_failed(labelled.what());
      throw labelled;
    } catch (const std::exception& e) {
      mark_failed("[" + stage + "] " + e.what());
      throw;
    }
  }

 private:
  void finish(const std::string& stage, std::chrono::steady_clock::time_point start) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timings_[stage] = seconds;
    log_stage(stage, "done");
  }

  void mark_failed(const std::string& message) {
    std::error_code ec;
    fs::create_directories(output_, ec);
    io::write_file(output_ / "FAILED", message + "\n");
    log_stage("pipeline", "FAILED: " + message);
  }

  fs::path output_;
  json& timings_;
};

}  // namespace

RunReport run_pipeline(const RunConfig& config, PipelineStages stages) {
  config.validate();
  if (config.input.empty()) config_error("no input file given");
  const fs::path out = resolve_output(config.output);

  // Validation happens before anything touches the output directory.
  log_stage("ingest", "reading " + config.input.string());
  const PanelTable table = load_panel(config.input, {});
  config.check_schema(table);

  fs::create_directories(out);
  fs::remove(out / "FAILED");
  json summary;
  summary["version"] = kVersion;
  summary["config"] = config.to_json();
  summary["threads"] = num_threads();
  json timings = json::object();
  StageRunner runner(out, timings);
  const auto total_start = std::chrono::steady_clock::now();

  runner.run("ingest", [&] {
    const auto report = missingness_report(table);
    write_missingness(out / "missingness.csv", report);
    json miss = json::object();
    for (const auto& r : report) miss[r.variable] = r.percent;
    summary["missingness"] = miss;
    summary["panel"] = {{"subjects", table.subjects().size()},
                        {"year_min", table.year_min()},
                        {"year_max", table.year_max()},
                        {"variables", table.variables()}};
  });

  std::map<std::string, CurveSet> curves;
  json hyper = json::object(), exclusions = json::object();
  for (const auto& var : config.functional_variables()) {
    const SparseConversion conv =
        runner.run("transform:" + var, [&] { return to_sparse_functional(table, var, config.transform_of(var)); });
    if (!conv.single_observation.empty())
      log_stage("transform:" + var, std::to_string(conv.single_observation.size()) + " subject(s) with one observation");
    const SmoothingResult smoothing = runner.run("smooth:" + var, [&] {
      SmoothingResult r = smooth_stage(conv.dataset, config.pace);
      write_smoothing(out / "smooth" / var, r, conv.dataset, config.pace.grid_size);
      return r;
    });
    const FpcaFit fit = runner.run("fpca:" + var, [&] {
      FpcaFit f = fit_pace_from_smoothing(conv.dataset, smoothing, config.pace);
      write_fpca(out / "fpca" / var, f, conv);
      return f;
    });
    log_stage("fpca:" + var, "K=" + std::to_string(fit.K) + " sigma2=" + io::format_double(fit.sigma2));
    curves[var] = fpca_curves(fit);
    hyper[var] = {{"transform", conv.dataset.transform.tag()},
                  {"mean_bandwidth", smoothing.mean_kernel.bandwidth},
                  {"cov_bandwidth_s", smoothing.cov_kernel_s.bandwidth},
                  {"cov_bandwidth_t", smoothing.cov_kernel_t.bandwidth},
                  {"K", fit.K},
                  {"sigma2", fit.sigma2},
                  {"fve", fit.K ? json(fit.fve[fit.K - 1]) : json(nullptr)}};
    exclusions[var] = {{"no_observations", conv.excluded}, {"single_observation", conv.single_observation}};
  }

  if (stages.cluster && config.cluster) {
    const ClusterConfig& cc = *config.cluster;
    const std::uint64_t seed = cc.seed.value_or(stage_seed(config.seed, "cluster"));
    runner.run("cluster", [&] {
      const ClusterRun run = run_cluster(curves.at(cc.variable), cc, seed);
      write_cluster(out / "cluster", run, curves.at(cc.variable).domain);
      hyper["cluster"] = {{"variable", cc.variable}, {"seed", seed}, {"objective", run.model.objective},
                          {"sizes", run.model.sizes()}};
    });
  }

  if (stages.regress) {
    json regs = json::object();
    for (const auto& rc : config.regressions) {
      runner.run("regress:" + rc.name, [&] {
        const RegressionFit fit = run_regression(rc, curves);
        write_regression(out / "regress" / rc.name, fit);
        json lambdas = json::object();
        for (const auto& t : fit.terms) lambdas[t.spec.label()] = t.lambda;
        regs[rc.name] = {{"subjects", fit.subjects.size()}, {"lambda", lambdas}, {"warnings", fit.warnings}};
        std::vector<std::string> dropped;
        for (const auto& s : curves.at(rc.spec.response).subjects)
          if (std::find(fit.subjects.begin(), fit.subjects.end(), s) == fit.subjects.end()) dropped.push_back(s);
        exclusions["regress:" + rc.name] = dropped;
        for (const auto& w : fit.warnings) log_stage("regress:" + rc.name, "warning: " + w);
      });
    }
    if (!config.regressions.empty()) hyper["regressions"] = regs;
  }

  if (stages.static_fe && config.static_fe) {
    runner.run("static_fe", [&] {
      const StaticPanelFit fit = run_static(table, config);
      write_static(out / "static_fe.json", fit, *config.static_fe);
      exclusions["static_fe"] = {{"dropped_rows", fit.dropped}};
    });
  }

  timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - total_start).count();
  summary["hyperparameters"] = hyper;
  summary["exclusions"] = exclusions;
  summary["wall_seconds"] = timings;
  write_json(out / "run_summary.json", summary);
  log_stage("pipeline", "outputs in " + out.string());
  return {summary, out};
}

}  // namespace fpanel
