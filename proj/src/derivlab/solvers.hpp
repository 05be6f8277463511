#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "derivlab/grid_field.hpp"
#include "derivlab/problems.hpp"

namespace derivlab {

using OdeRhs = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& state)>;

// Number of steps used to reach T: ceil(T / dt), with the step shrunk to
// T / steps so the last state lands exactly on T.
std::size_t step_count(double dt, double T);

// Classical RK4. Axis "t" with one component per state entry.
GridField rk4_trajectory(const OdeRhs& rhs, const Eigen::VectorXd& state0, double dt, double T);

struct FvOptions {
  double dt = 0.001;
  double T = 10.0;
  std::size_t store_every = 1;  // keep every k-th step
};

// Cell-centered initial density on a uniform (x, y) grid covering
// [lo, hi]^2 with spacing h.
GridField continuity_initial_grid(const ProblemSpec& problem, double h);

// First-order upwind finite volumes for rho_t + div((-y, x) rho) = 0 with
// closed walls. Result axes (t, x, y).
GridField continuity_fv_solve(const GridField& ic, const FvOptions& options);

// Largest dt satisfying dt * (max|vx| / dx + max|vy| / dy) <= 1.
double continuity_max_dt(const GridField& ic);

struct KdvOptions {
  double nu = 0.0025;
  std::size_t nx = 512;  // power of two
  double dt = 0.005;     // output spacing in time
  std::size_t substeps = 10;
  double T = 1.0;
};

// Fourier pseudo-spectral KdV u_t + u u_x + nu u_xxx = 0 on the periodic
// interval [-1, 1), integrating-factor RK4 with 2/3 dealiasing. Result axes
// (t, x) with x_j = -1 + 2 j / nx.
GridField kdv_spectral_solve(const std::function<double(double)>& ic, const KdvOptions& options);

enum class FdScheme { Forward, Central };

using ScalarField = std::function<double(std::span<const double>)>;

// Difference quotient along `axis`. Every stencil point must lie inside
// `bounds`, otherwise ErrorKind::Boundary.
double empirical_derivative(const ScalarField& u, std::span<const double> point, int axis, double h, FdScheme scheme,
                            std::span<const Interval> bounds);

// Same, sampling a grid through cubic interpolation.
double empirical_derivative(const GridField& field, std::span<const double> point, int axis, double h,
                            FdScheme scheme, int component = 0);

// Tensor-product 4-point Lagrange interpolation (one-sided stencils at the
// edges); exact on cubics. Out of hull -> ErrorKind::Domain.
double cubic_interpolate(const GridField& field, std::span<const double> point, int component = 0);

}  // namespace derivlab
