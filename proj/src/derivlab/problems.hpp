#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "derivlab/collocation.hpp"
#include "derivlab/jets.hpp"
#include "derivlab/network.hpp"

namespace derivlab {

// Anything that can produce jets for a batch of points.
using JetSource = std::function<JetBatch(const Eigen::MatrixXd& points, const DerivRequest& request)>;

enum class ProblemName { AllenCahn, AllenCahn1P, AllenCahn2P, Continuity, Kovasznay, Pendulum, KdV };
enum class ReferenceKind { Analytic, Solver };

std::string to_string(ProblemName name);
ProblemName problem_from_string(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

struct ProblemConstants {
  double ac_lambda = 0.01;
  double kovasznay_nu = 1.0 / 50.0;
  double kdv_nu = 0.0025;
  double g_over_l = 9.81;
  double b_over_m = 0.3;
  double pendulum_T = 10.0;
};

struct GaussianBump {
  double cx, cy, sigma, amplitude;
};

struct ProblemSpec {
  ProblemName name = ProblemName::AllenCahn;
  std::vector<std::string> coords;
  std::vector<Interval> domain;
  int time_axis = -1;
  std::vector<int> derivative_axes;
  std::vector<int> parameter_axes;
  int outputs = 1;
  std::vector<std::string> residual_names;
  int residual_order = 2;
  ReferenceKind reference = ReferenceKind::Analytic;
  ProblemConstants constants;
  std::vector<GaussianBump> continuity_ic;
  std::optional<PeriodicPairing> periodic;

  int dim() const noexcept { return static_cast<int>(coords.size()); }
  int residual_dim() const noexcept { return static_cast<int>(residual_names.size()); }
  bool time_dependent() const noexcept { return time_axis >= 0; }
  int axis(const std::string& coord) const;

  // Derivative channels the residual operator reads.
  DerivRequest residual_request() const;

  void validate() const;
  nlohmann::json manifest() const;
};

ProblemSpec make_problem(ProblemName name, const ProblemConstants& constants = {});

// Closed-form solution and its derivatives over `derivative_axes`.
struct AnalyticJet {
  Eigen::VectorXd value;                 // m
  Eigen::MatrixXd jacobian;              // m x k
  std::vector<Eigen::MatrixXd> hessian;  // m of k x k
};

Eigen::VectorXd analytic_solution(const ProblemSpec& problem, std::span<const double> point);
AnalyticJet analytic_jet(const ProblemSpec& problem, std::span<const double> point);

double kovasznay_lambda(double nu);

// Allen-Cahn family forcing, chosen so the analytic solution has zero residual.
double forcing(const ProblemSpec& problem, std::span<const double> point);

// g(x): value at the initial time (Continuity, Pendulum, KdV).
Eigen::VectorXd initial_value(const ProblemSpec& problem, std::span<const double> point);
// b(x): boundary value (Allen-Cahn family, Kovasznay, Continuity).
Eigen::VectorXd boundary_value(const ProblemSpec& problem, std::span<const double> point);

std::array<double, 2> pendulum_rhs(std::array<double, 2> state, double g_over_l, double b_over_m);

// G operator for one initial-condition coordinate a, from u, du/da,
// d2u/dt da and d3u/dt2 da.
double pendulum_g_operator(const ProblemSpec& problem, double u, double u_a, double u_ta, double u_tta);

// Both G residuals of the network at (t, u0, v0). Mixed third derivatives
// come from directional third-order jets by polarization.
Eigen::Vector2d pendulum_g_residual(const Network& net, const ProblemSpec& problem,
                                    std::span<const double> point);

// Batched form: n x 2 residuals.
Eigen::MatrixXd pendulum_g_residuals(const Network& net, const ProblemSpec& problem,
                                     const Eigen::MatrixXd& points);

double kovasznay_vorticity(const ProblemSpec& problem, std::span<const double> point);

// Mean squared error between the model vorticity dv/dx - du/dy and the
// closed form over the given n x 2 points.
double vorticity_error(const JetSource& model, const ProblemSpec& problem, const Eigen::MatrixXd& points);

// Closed-form jets (order <= 2, no third-order directions). Channels along
// non-derivative axes are NaN. Lets analytic solutions stand in for a network.
JetBatch analytic_jets(const ProblemSpec& problem, const Eigen::MatrixXd& points, const DerivRequest& request);

JetSource network_source(const Network& net);
JetSource analytic_source(const ProblemSpec& problem);

// F evaluated from precomputed jets: n x residual_dim.
Eigen::MatrixXd residuals_from_jets(const ProblemSpec& problem, const Eigen::MatrixXd& points,
                                    const JetBatch& jets);

// F[net] at a point, through input_derivatives.
Eigen::VectorXd pde_residual(const ProblemSpec& problem, const Network& net, std::span<const double> point);

// F for every row of `points`: n x residual_dim.
Eigen::MatrixXd pde_residuals(const ProblemSpec& problem, const JetSource& model, const Eigen::MatrixXd& points);

}  // namespace derivlab
