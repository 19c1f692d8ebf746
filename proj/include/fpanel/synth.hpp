#pragma once

#include "fpanel/grid.hpp"
#include "fpanel/panel.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fpanel {

/// mt19937_64 with portable uniform and normal draws (no reliance on the
/// standard library's distribution implementations).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();                  // [0, 1)
  double normal();                   // N(0, 1), Box-Muller
  std::size_t index(std::size_t n);  // uniform on {0, ..., n-1}
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class EigenFamily { Sine, Legendre };
std::string to_string(EigenFamily family);
EigenFamily parse_eigen_family(const std::string& text);

/// Known Karhunen-Loeve structure: X(t) = mu(t) + sum_k xi_k phi_k(t) + noise.
struct KlTruth {
  double mean_level = 2.0;      // mu(t) = level + amplitude sin(2 pi t)
  double mean_amplitude = 1.0;
  EigenFamily family = EigenFamily::Sine;
  std::vector<double> eigenvalues{4.0, 1.0};
  double sigma = 0.5;
  std::size_t n_min = 3;        // observations per subject, uniform on {n_min..n_max}
  std::size_t n_max = 6;
  std::size_t lattice = 27;     // observation times are drawn from lattice points j/(lattice-1)
  std::uint64_t seed = 20170131;
  int year_min = 1991;

  /// The frozen standard fixture (sine pair, eigenvalues 4 and 1, sigma 0.5, 3..6 points).
  static KlTruth standard();

  double mean(double t) const;
  /// k is 0-based; orthonormal on [0, 1].
  double eigenfunction(std::size_t k, double t) const;
  double curve(const std::vector<double>& scores, double t) const;
  DomainMap domain() const { return {year_min, year_min + static_cast<int>(lattice) - 1}; }
  void validate() const;
};

struct KlSample {
  FunctionalDataset data;
  Eigen::VectorXd grid;
  Eigen::MatrixXd truth;   // noiseless curves on grid, subjects x G
  Eigen::MatrixXd scores;  // subjects x M
};

KlSample generate_kl(const KlTruth& truth, std::size_t n, const Eigen::VectorXd& grid);

/// Writes a lattice-sampled dataset as a panel (one variable) with years from the truth's domain.
PanelTable to_panel(const FunctionalDataset& data, const std::string& variable);

struct FofTruth {
  std::function<double(double)> alpha = [](double) { return 0.0; };
  /// beta(s, t); empty means no surface effect.
  std::function<double(double, double)> surface;
  /// beta(t) multiplying X(t); empty means no concurrent effect.
  std::function<double(double)> concurrent;
  double sigma_y = 0.0;
};

struct FofSample {
  KlSample x;
  Eigen::MatrixXd y_truth;     // subjects x G
  Eigen::MatrixXd y_observed;  // y_truth plus N(0, sigma_y^2) on the grid
};

/// Y_i(t) = alpha(t) + int beta(s,t) X_i(s) ds + beta_c(t) X_i(t) + noise, the
/// integral by 401-point Simpson quadrature of the closed-form X_i.
FofSample generate_fof(const FofTruth& truth, const KlTruth& x_truth, std::size_t n, const Eigen::VectorXd& grid);

/// 401-point composite Simpson rule on [0, 1].
double simpson401(const std::function<double(double)>& f);

struct PanelTruth {
  std::size_t countries = 40;
  std::size_t years = 20;
  double beta1 = 0.5;   // HHI
  double beta2 = -1.0;  // MCAP
  double beta3 = 0.0;   // HHI x AVMCAP
  std::vector<double> gamma;  // controls Z1, Z2, ...
  double sigma = 1.0;
  double missing_fraction = 0.0;
  std::uint64_t seed = 20170131;
  int year_min = 1991;
};

struct PanelSample {
  PanelTable table;
  std::map<std::string, double> country_effects;
  std::map<int, double> year_effects;
  std::map<std::string, double> avmcap;
  std::size_t complete_rows = 0;  // rows with POV, HHI, MCAP and all controls present
  std::vector<std::string> controls;
};

/// Two-way panel with planted effects. Missing cells are drawn first so that
/// AVMCAP is the mean of the observed MCAP values, as the estimator computes it.
PanelSample generate_panel(const PanelTruth& truth);

/// Eigenpairs of the 1/n sample covariance of fully observed curves with
/// trapezoidal weights; eigenfunctions signed to have a positive integral.
struct DenseEigen {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;  // G x G
};
DenseEigen dense_fpca_oracle(const Eigen::MatrixXd& curves, const Eigen::VectorXd& grid);

/// Bundled demonstration panel: 48 countries, 1991-2017, poverty, concentration,
/// market capitalization and macro controls with heavy, uneven missingness.
struct StudyOptions {
  std::uint64_t seed = 20170131;
  std::size_t countries = 48;
  int year_min = 1991;
  int year_max = 2017;
};
PanelTable generate_study(const StudyOptions& options);

}  // namespace fpanel
