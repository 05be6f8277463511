#include "derivlab/solvers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <fftw3.h>

#include "derivlab/error.hpp"

namespace derivlab {

namespace {

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// RAII wrappers for FFTW buffers and plans.
struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {
    if (!ptr) fail(ErrorKind::Runtime, "fftw_malloc failed");
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

struct FftwPlan {
  explicit FftwPlan(fftw_plan p) : plan(p) {
    if (!plan) fail(ErrorKind::Runtime, "fftw plan creation failed");
  }
  ~FftwPlan() { fftw_destroy_plan(plan); }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
  fftw_plan plan;
};

}  // namespace

std::size_t step_count(double dt, double T) {
  if (!(dt > 0.0)) fail(ErrorKind::Configuration, "dt must be > 0");
  if (!(T >= dt)) fail(ErrorKind::Configuration, "T must be >= dt");
  return static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
}

GridField rk4_trajectory(const OdeRhs& rhs, const Eigen::VectorXd& state0, double dt, double T) {
  const std::size_t n = step_count(dt, T);
  const double h = T / static_cast<double>(n);
  std::vector<double> times(n + 1);
  for (std::size_t i = 0; i <= n; ++i) times[i] = static_cast<double>(i) * h;
  times[n] = T;
  const int m = static_cast<int>(state0.size());
  GridField out({"t"}, {times}, m);
  out.meta["dt"] = h;
  Eigen::VectorXd y = state0;
  if (!all_finite(y)) fail(ErrorKind::Divergence, "non-finite initial state", 0);
  for (int c = 0; c < m; ++c) out.data[c] = y[c];
  for (std::size_t i = 0; i < n; ++i) {
    const double t = times[i];
    const Eigen::VectorXd k1 = rhs(t, y);
    const Eigen::VectorXd k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
    const Eigen::VectorXd k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
    const Eigen::VectorXd k4 = rhs(t + h, y + h * k3);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!all_finite(y))
      fail(ErrorKind::Divergence, "RK4 state became non-finite at step " + std::to_string(i + 1),
           static_cast<std::int64_t>(i + 1));
    for (int c = 0; c < m; ++c) out.data[(i + 1) * m + c] = y[c];
  }
  return out;
}

GridField continuity_initial_grid(const ProblemSpec& problem, double h) {
  if (problem.name != ProblemName::Continuity) fail(ErrorKind::Capability, "not the continuity problem");
  if (!(h > 0.0)) fail(ErrorKind::Configuration, "grid spacing must be > 0");
  const Interval ix = problem.domain[1], iy = problem.domain[2];
  const auto nx = static_cast<std::size_t>(std::llround(ix.width() / h));
  const auto ny = static_cast<std::size_t>(std::llround(iy.width() / h));
  GridField g({"x", "y"}, {uniform_axis(ix.lo + 0.5 * h, h, nx), uniform_axis(iy.lo + 0.5 * h, h, ny)}, 1);
  g.meta["dx"] = h;
  g.meta["dy"] = h;
  g.meta["layout"] = "cell centers";
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) {
      const double pt[3] = {0.0, g.axes[0][i], g.axes[1][j]};
      g.data[i * ny + j] = initial_value(problem, pt)[0];
    }
  return g;
}

double continuity_max_dt(const GridField& ic) {
  const auto& xs = ic.axes[0];
  const auto& ys = ic.axes[1];
  const double dx = xs[1] - xs[0], dy = ys[1] - ys[0];
  // vx = -y on x-faces, vy = x on y-faces.
  const double vx = std::max(std::abs(ys.front()), std::abs(ys.back()));
  const double vy = std::max(std::abs(xs.front()), std::abs(xs.back()));
  return 1.0 / (vx / dx + vy / dy);
}

GridField continuity_fv_solve(const GridField& ic, const FvOptions& opt) {
  ic.validate();
  if (ic.rank() != 2 || ic.components != 1) fail(ErrorKind::Shape, "continuity IC must be a scalar (x, y) grid");
  if (ic.axes[0].size() < 2 || ic.axes[1].size() < 2) fail(ErrorKind::Shape, "continuity grid too small");
  if (opt.store_every == 0) fail(ErrorKind::Configuration, "store_every must be >= 1");
  const std::size_t n = step_count(opt.dt, opt.T);
  const double dt = opt.T / static_cast<double>(n);
  const double dt_max = continuity_max_dt(ic);
  if (dt > dt_max)
    fail(ErrorKind::Stability, "CFL violated: dt = " + fmt(dt) + " but stability requires dt <= " + fmt(dt_max));

  const auto& xs = ic.axes[0];
  const auto& ys = ic.axes[1];
  const std::size_t nx = xs.size(), ny = ys.size();
  const double dx = xs[1] - xs[0], dy = ys[1] - ys[0];

  std::vector<double> times;
  for (std::size_t s = 0; s <= n; ++s)
    if (s % opt.store_every == 0 || s == n) times.push_back(s == n ? opt.T : static_cast<double>(s) * dt);
  GridField out({"t", "x", "y"}, {times, xs, ys}, 1);
  out.meta["dt"] = dt;
  out.meta["dx"] = dx;
  out.meta["dy"] = dy;
  out.meta["scheme"] = "first-order upwind, closed walls";

  std::vector<double> rho = ic.data, next(rho.size());
  std::vector<double> fx((nx + 1) * ny), fy(nx * (ny + 1));
  std::size_t slot = 0;
  auto store = [&] {
    std::copy(rho.begin(), rho.end(), out.data.begin() + static_cast<std::ptrdiff_t>(slot * nx * ny));
    ++slot;
  };
  store();
  for (std::size_t s = 1; s <= n; ++s) {
    // x-faces: face i sits between cells i-1 and i; walls at 0 and nx.
    for (std::size_t j = 0; j < ny; ++j) {
      const double v = -ys[j];
      fx[j] = 0.0;
      fx[nx * ny + j] = 0.0;
      for (std::size_t i = 1; i < nx; ++i)
        fx[i * ny + j] = v * (v > 0.0 ? rho[(i - 1) * ny + j] : rho[i * ny + j]);
    }
    for (std::size_t i = 0; i < nx; ++i) {
      const double v = xs[i];
      double* f = &fy[i * (ny + 1)];
      const double* r = &rho[i * ny];
      f[0] = 0.0;
      f[ny] = 0.0;
      for (std::size_t j = 1; j < ny; ++j) f[j] = v * (v > 0.0 ? r[j - 1] : r[j]);
    }
    for (std::size_t i = 0; i < nx; ++i)
      for (std::size_t j = 0; j < ny; ++j) {
        const std::size_t c = i * ny + j;
        next[c] = rho[c] - dt / dx * (fx[(i + 1) * ny + j] - fx[i * ny + j]) -
                  dt / dy * (fy[i * (ny + 1) + j + 1] - fy[i * (ny + 1) + j]);
      }
    rho.swap(next);
    if (s % opt.store_every == 0 || s == n) {
      for (double r : rho)
        if (!std::isfinite(r)) fail(ErrorKind::Stability, "density became non-finite", static_cast<std::int64_t>(s));
      store();
    }
  }
  return out;
}

GridField kdv_spectral_solve(const std::function<double(double)>& ic, const KdvOptions& opt) {
  const std::size_t nx = opt.nx;
  if (nx < 8 || (nx & (nx - 1)) != 0) fail(ErrorKind::Configuration, "nx must be a power of two >= 8");
  if (opt.substeps == 0) fail(ErrorKind::Configuration, "substeps must be >= 1");
  const std::size_t n_out = step_count(opt.dt, opt.T);
  const double out_dt = opt.T / static_cast<double>(n_out);
  const double h = out_dt / static_cast<double>(opt.substeps);
  const std::size_t nk = nx / 2 + 1;
  constexpr double kPi = std::numbers::pi;
  using cd = std::complex<double>;

  std::vector<double> xs(nx);
  for (std::size_t j = 0; j < nx; ++j) xs[j] = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(nx);
  std::vector<double> times(n_out + 1);
  for (std::size_t i = 0; i <= n_out; ++i) times[i] = static_cast<double>(i) * out_dt;
  times[n_out] = opt.T;
  GridField out({"t", "x"}, {times, xs}, 1);
  out.meta["dt"] = out_dt;
  out.meta["dx"] = 2.0 / static_cast<double>(nx);
  out.meta["nu"] = opt.nu;
  out.meta["substeps"] = opt.substeps;
  out.meta["scheme"] = "Fourier pseudo-spectral, integrating-factor RK4, 2/3 dealiasing";

  FftwBuffer rbuf(sizeof(double) * nx), cbuf(sizeof(fftw_complex) * nk);
  auto* real = static_cast<double*>(rbuf.ptr);
  auto* spec = static_cast<fftw_complex*>(cbuf.ptr);
  FftwPlan fwd(fftw_plan_dft_r2c_1d(static_cast<int>(nx), real, spec, FFTW_ESTIMATE));
  FftwPlan bwd(fftw_plan_dft_c2r_1d(static_cast<int>(nx), spec, real, FFTW_ESTIMATE));

  // Wavenumbers for period 2: k_j = pi j. The Nyquist mode carries no
  // derivative.
  std::vector<double> k(nk);
  std::vector<double> keep(nk);
  for (std::size_t j = 0; j < nk; ++j) {
    k[j] = j == nx / 2 ? 0.0 : kPi * static_cast<double>(j);
    keep[j] = 3 * j < nx ? 1.0 : 0.0;
  }
  std::vector<cd> E(nk), E2(nk);
  for (std::size_t j = 0; j < nk; ++j) {
    const cd L(0.0, opt.nu * k[j] * k[j] * k[j]);
    E[j] = std::exp(L * (h / 2.0));
    E2[j] = E[j] * E[j];
  }
  const double inv_n = 1.0 / static_cast<double>(nx);

  auto to_real = [&](const std::vector<cd>& v, std::vector<double>& u) {
    for (std::size_t j = 0; j < nk; ++j) {
      spec[j][0] = v[j].real();
      spec[j][1] = v[j].imag();
    }
    fftw_execute(bwd.plan);
    for (std::size_t i = 0; i < nx; ++i) u[i] = real[i] * inv_n;
  };
  std::vector<double> ubuf(nx);
  // N(v) = -(i k / 2) FFT(u^2), dealiased.
  auto nonlinear = [&](const std::vector<cd>& v, std::vector<cd>& out_n) {
    to_real(v, ubuf);
    for (std::size_t i = 0; i < nx; ++i) real[i] = ubuf[i] * ubuf[i];
    fftw_execute(fwd.plan);
    for (std::size_t j = 0; j < nk; ++j)
      out_n[j] = keep[j] * cd(0.0, -0.5 * k[j]) * cd(spec[j][0], spec[j][1]);
  };

  for (std::size_t i = 0; i < nx; ++i) real[i] = ic(xs[i]);
  for (std::size_t i = 0; i < nx; ++i) out.data[i] = real[i];
  fftw_execute(fwd.plan);
  std::vector<cd> v(nk), a(nk), b(nk), c(nk), d(nk), tmp(nk);
  for (std::size_t j = 0; j < nk; ++j) v[j] = cd(spec[j][0], spec[j][1]);

  std::vector<double> u(nx);
  for (std::size_t s = 1; s <= n_out; ++s) {
    for (std::size_t sub = 0; sub < opt.substeps; ++sub) {
      nonlinear(v, a);
      for (std::size_t j = 0; j < nk; ++j) tmp[j] = E[j] * (v[j] + 0.5 * h * a[j]);
      nonlinear(tmp, b);
      for (std::size_t j = 0; j < nk; ++j) tmp[j] = E[j] * v[j] + 0.5 * h * b[j];
      nonlinear(tmp, c);
      for (std::size_t j = 0; j < nk; ++j) tmp[j] = E2[j] * v[j] + h * E[j] * c[j];
      nonlinear(tmp, d);
      for (std::size_t j = 0; j < nk; ++j)
        v[j] = E2[j] * v[j] + h / 6.0 * (E2[j] * a[j] + 2.0 * E[j] * (b[j] + c[j]) + d[j]);
    }
    to_real(v, u);
    for (std::size_t i = 0; i < nx; ++i) {
      if (!std::isfinite(u[i]))
        fail(ErrorKind::Stability,
             "KdV solution blew up at t = " + fmt(times[s]) + "; retry with a smaller dt or more substeps",
             static_cast<std::int64_t>(s));
      out.data[s * nx + i] = u[i];
    }
  }
  return out;
}

double empirical_derivative(const ScalarField& u, std::span<const double> point, int axis, double h, FdScheme scheme,
                            std::span<const Interval> bounds) {
  if (!(h > 0.0)) fail(ErrorKind::Configuration, "finite-difference step must be > 0");
  if (axis < 0 || static_cast<std::size_t>(axis) >= point.size()) fail(ErrorKind::Axis, "derivative axis out of range");
  if (bounds.size() != point.size()) fail(ErrorKind::Shape, "bounds must cover every coordinate");
  std::vector<double> plus(point.begin(), point.end()), minus(plus);
  plus[axis] += h;
  minus[axis] -= h;
  const Interval& b = bounds[axis];
  const bool inside = b.contains(plus[axis]) && (scheme == FdScheme::Forward || b.contains(minus[axis])) &&
                      b.contains(point[axis]);
  if (!inside) fail(ErrorKind::Boundary, "difference stencil leaves the sampled region along axis " + std::to_string(axis));
  if (scheme == FdScheme::Forward) return (u(plus) - u(point)) / h;
  return (u(plus) - u(minus)) / (2.0 * h);
}

double empirical_derivative(const GridField& field, std::span<const double> point, int axis, double h,
                            FdScheme scheme, int component) {
  std::vector<Interval> hull;
  for (const auto& a : field.axes) hull.push_back({a.front(), a.back()});
  const ScalarField u = [&](std::span<const double> x) { return cubic_interpolate(field, x, component); };
  return empirical_derivative(u, point, axis, h, scheme, hull);
}

double cubic_interpolate(const GridField& field, std::span<const double> point, int component) {
  const std::size_t r = field.rank();
  if (point.size() != r) fail(ErrorKind::Shape, "interpolation point has the wrong rank");
  if (component < 0 || component >= field.components) fail(ErrorKind::Shape, "component out of range");
  std::vector<std::size_t> start(r), len(r);
  std::vector<std::array<double, 4>> w(r);
  for (std::size_t a = 0; a < r; ++a) {
    const auto& ax = field.axes[a];
    const double x = point[a];
    const double tol = 1e-12 * std::max(1.0, std::abs(ax.back() - ax.front()));
    if (!(x >= ax.front() - tol && x <= ax.back() + tol))
      fail(ErrorKind::Domain, "point outside the grid hull along '" + field.axis_names[a] + "'");
    const std::size_t n = ax.size();
    len[a] = std::min<std::size_t>(4, n);
    const std::size_t cell = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(std::upper_bound(ax.begin(), ax.end(), x) - ax.begin() - 1, 0,
                                   static_cast<std::ptrdiff_t>(n) - 1));
    start[a] = len[a] < 4 ? 0 : std::min(cell > 0 ? cell - 1 : 0, n - 4);
    for (std::size_t i = 0; i < len[a]; ++i) {
      double l = 1.0;
      const double xi = ax[start[a] + i];
      for (std::size_t m = 0; m < len[a]; ++m)
        if (m != i) l *= (x - ax[start[a] + m]) / (xi - ax[start[a] + m]);
      w[a][i] = l;
    }
  }
  double sum = 0.0;
  std::vector<std::size_t> idx(r, 0), node(r);
  std::size_t total = 1;
  for (std::size_t a = 0; a < r; ++a) total *= len[a];
  for (std::size_t t = 0; t < total; ++t) {
    std::size_t q = t;
    double weight = 1.0;
    for (std::size_t a = r; a-- > 0;) {
      const std::size_t i = q % len[a];
      q /= len[a];
      node[a] = start[a] + i;
      weight *= w[a][i];
    }
    if (weight != 0.0) sum += weight * field.at(node, component);
  }
  return sum;
}

}  // namespace derivlab
