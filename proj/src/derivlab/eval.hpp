#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "derivlab/collocation.hpp"
#include "derivlab/grid_field.hpp"
#include "derivlab/network.hpp"
#include "derivlab/problems.hpp"

namespace derivlab {

// All norms are mean squared values over the test points.
struct MetricsReport {
  double l2_u = 0.0;
  std::optional<double> l2_du;
  std::vector<std::pair<std::string, double>> residual_norms;
  double residual = 0.0;  // sum of residual_norms
  std::optional<double> vorticity_err;
  std::optional<double> g_residual;
  std::optional<double> field_err_t0;
  nlohmann::json grid = nlohmann::json::object();
  double wall_ms = 0.0;  // not serialized into metrics files
};

// `test` must carry values; jacobians are optional (l2_du).
MetricsReport evaluate(const ProblemSpec& problem, const JetSource& model, const CollocationSet& test);

// Adds the network-only pendulum diagnostics (G residual, field at t = 0).
MetricsReport evaluate(const ProblemSpec& problem, const Network& net, const CollocationSet& test);

// Initial-condition grid used for the pendulum t = 0 field error: n x n
// nodes over the (u0, v0) box at t = 0.
Eigen::MatrixXd pendulum_ic_grid(const ProblemSpec& problem, int n);

// Mean over the grid of ||(u_t, u_tt) - (v0, rhs(u0, v0))||^2 at t = 0.
double pendulum_field_error_t0(const ProblemSpec& problem, const JetSource& model, const Eigen::MatrixXd& ic_points);

nlohmann::json to_json(const MetricsReport& report);

// Grid nodes as points, grid components as value targets.
CollocationSet grid_to_set(const GridField& reference, const ProblemSpec& problem);

// Per-node squared error of each output (components err_u<k>) followed by
// each squared residual (res_<name>). `reference` axes follow the problem
// coordinates and its components hold the reference solution.
GridField error_field(const ProblemSpec& problem, const JetSource& model, const GridField& reference);

// a - b; axes and components must match exactly.
GridField diff_fields(const GridField& a, const GridField& b);

}  // namespace derivlab
