#include <cmath>
#include <random>

#include "derivlab/error.hpp"
#include "derivlab/grid_field.hpp"
#include "derivlab/problems.hpp"
#include "derivlab/solvers.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace derivlab;

namespace {

double mass_at(const GridField& g, std::size_t ti) {
  const auto sh = g.shape();
  const double dx = g.axes[1][1] - g.axes[1][0], dy = g.axes[2][1] - g.axes[2][0];
  double s = 0.0;
  for (std::size_t i = 0; i < sh[1]; ++i)
    for (std::size_t j = 0; j < sh[2]; ++j) {
      const std::size_t idx[3] = {ti, i, j};
      s += g.at(idx);
    }
  return s * dx * dy;
}

GridField kdv_run(std::size_t substeps, double T, std::size_t nx = 256) {
  KdvOptions o;
  o.nx = nx;
  o.dt = 0.005;
  o.substeps = substeps;
  o.T = T;
  return kdv_spectral_solve([](double x) { return std::cos(M_PI * x); }, o);
}

std::vector<double> last_row(const GridField& g) {
  const auto sh = g.shape();
  std::vector<double> out(sh[1]);
  for (std::size_t j = 0; j < sh[1]; ++j) {
    const std::size_t idx[2] = {sh[0] - 1, j};
    out[j] = g.at(idx);
  }
  return out;
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

TEST_SUITE("solvers") {
  TEST_CASE("RK4 on exponential decay") {
    const OdeRhs rhs = [](double, const Eigen::VectorXd& s) { return (-s).eval(); };
    const GridField tr = rk4_trajectory(rhs, Eigen::VectorXd::Constant(1, 1.0), 0.01, 1.0);
    CHECK(tr.axes[0].back() == 1.0);
    CHECK(std::abs(tr.data.back() - std::exp(-1.0)) <= 1e-8);
  }

  TEST_CASE("RK4 with zero right-hand side is constant") {
    const OdeRhs rhs = [](double, const Eigen::VectorXd& s) { return Eigen::VectorXd::Zero(s.size()).eval(); };
    const GridField tr = rk4_trajectory(rhs, Eigen::Vector2d(0.3, -1.0), 0.1, 2.0);
    for (std::size_t i = 0; i < tr.data.size(); i += 2) {
      CHECK(tr.data[i] == 0.3);
      CHECK(tr.data[i + 1] == -1.0);
    }
  }

  TEST_CASE("one RK4 step is the degree-4 Taylor polynomial") {
    const double lam = -2.0, dt = 0.05, z = lam * dt;
    const OdeRhs rhs = [lam](double, const Eigen::VectorXd& s) { return (lam * s).eval(); };
    const GridField tr = rk4_trajectory(rhs, Eigen::VectorXd::Constant(1, 1.0), dt, dt);
    CHECK(tr.data.back() == doctest::Approx(1 + z + z * z / 2 + z * z * z / 6 + z * z * z * z / 24).epsilon(1e-15));
  }

  TEST_CASE("conservative pendulum keeps its energy") {
    const OdeRhs rhs = [](double, const Eigen::VectorXd& s) {
      const auto r = pendulum_rhs({s[0], s[1]}, 9.81, 0.0);
      return Eigen::Vector2d(r[0], r[1]).eval();
    };
    const GridField tr = rk4_trajectory(rhs, Eigen::Vector2d(1.0, 0.5), 0.01, 10.0);
    const auto energy = [](double u, double v) { return 0.5 * v * v + 9.81 * (1 - std::cos(u)); };
    const double e0 = energy(tr.data[0], tr.data[1]);
    double drift = 0.0;
    for (std::size_t i = 0; i < tr.data.size(); i += 2) drift = std::max(drift, std::abs(energy(tr.data[i], tr.data[i + 1]) - e0));
    CHECK(drift / e0 <= 1e-6);
  }

  TEST_CASE("RK4 divergence carries the step") {
    const OdeRhs rhs = [](double, const Eigen::VectorXd& s) { return (s.array().square() * 1e3).matrix().eval(); };
    try {
      rk4_trajectory(rhs, Eigen::VectorXd::Constant(1, 1.0), 0.1, 10.0);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Divergence);
      CHECK(e.index().has_value());
    }
  }

  TEST_CASE("step count lands on T") {
    CHECK(step_count(0.01, 1.0) == 100);
    CHECK(step_count(0.3, 1.0) == 4);
  }

  TEST_CASE("finite volumes: zero initial data stays zero") {
    const ProblemSpec pb = make_problem(ProblemName::Continuity);
    GridField ic = continuity_initial_grid(pb, 0.1);
    std::fill(ic.data.begin(), ic.data.end(), 0.0);
    FvOptions o;
    o.dt = 0.02;
    o.T = 1.0;
    const GridField g = continuity_fv_solve(ic, o);
    for (double v : g.data) CHECK(v == 0.0);
  }

  TEST_CASE("finite volumes conserve mass and stay nonnegative") {
    const ProblemSpec pb = make_problem(ProblemName::Continuity);
    const GridField ic = continuity_initial_grid(pb, 0.03);
    FvOptions o;
    o.dt = 0.5 * continuity_max_dt(ic);
    o.T = 10.0;
    o.store_every = 100;
    const GridField g = continuity_fv_solve(ic, o);
    const double m0 = mass_at(g, 0), m1 = mass_at(g, g.axes[0].size() - 1);
    CHECK(g.axes[0].back() == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(m1 - m0) / m0 <= 1e-10);
    CHECK(*std::min_element(g.data.begin(), g.data.end()) >= -1e-12);
  }

  TEST_CASE("finite volumes rotate a Gaussian by a quarter turn") {
    const ProblemSpec pb = make_problem(ProblemName::Continuity);
    GridField ic = continuity_initial_grid(pb, 0.02);
    const auto sh = ic.shape();
    for (std::size_t i = 0; i < sh[0]; ++i)
      for (std::size_t j = 0; j < sh[1]; ++j) {
        const double x = ic.axes[0][i], y = ic.axes[1][j];
        ic.data[i * sh[1] + j] = std::exp(-((x - 0.6) * (x - 0.6) + y * y) / (2 * 0.2 * 0.2));
      }
    FvOptions o;
    o.T = M_PI / 2;
    o.dt = 0.5 * continuity_max_dt(ic);
    o.store_every = 1000000;
    const GridField g = continuity_fv_solve(ic, o);
    const std::size_t last = g.axes[0].size() - 1;
    double m = 0, cx = 0, cy = 0;
    for (std::size_t i = 0; i < sh[0]; ++i)
      for (std::size_t j = 0; j < sh[1]; ++j) {
        const std::size_t idx[3] = {last, i, j};
        const double r = g.at(idx);
        m += r;
        cx += r * g.axes[1][i];
        cy += r * g.axes[2][j];
      }
    // Counterclockwise rotation takes (0.6, 0) to (0, 0.6).
    CHECK(std::abs(cx / m - 0.0) <= 0.02);
    CHECK(std::abs(cy / m - 0.6) <= 0.02);
  }

  TEST_CASE("finite volumes reject CFL violations") {
    const ProblemSpec pb = make_problem(ProblemName::Continuity);
    const GridField ic = continuity_initial_grid(pb, 0.1);
    FvOptions o;
    o.dt = 2.0 * continuity_max_dt(ic);
    o.T = 1.0;
    try {
      continuity_fv_solve(ic, o);
      FAIL("expected a stability error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Stability);
      CHECK(std::string(e.what()).find("dt <=") != std::string::npos);
    }
  }

  TEST_CASE("KdV keeps a constant state") {
    KdvOptions o;
    o.nx = 64;
    o.T = 0.5;
    const GridField g = kdv_spectral_solve([](double) { return 0.7; }, o);
    for (double v : g.data) CHECK(std::abs(v - 0.7) <= 1e-13);
  }

  TEST_CASE("KdV conserves mass") {
    const GridField g = kdv_run(10, 1.0);
    const auto sh = g.shape();
    const auto mass = [&](std::size_t ti) {
      double s = 0.0;
      for (std::size_t j = 0; j < sh[1]; ++j) {
        const std::size_t idx[2] = {ti, j};
        s += g.at(idx);
      }
      return s * 2.0 / static_cast<double>(sh[1]);
    };
    // cos has zero mean; compare against the L1 scale instead of 0.
    double scale = 0.0;
    for (std::size_t j = 0; j < sh[1]; ++j) {
      const std::size_t idx[2] = {0, j};
      scale += std::abs(g.at(idx)) * 2.0 / static_cast<double>(sh[1]);
    }
    double worst = 0.0;
    for (std::size_t t = 0; t < sh[0]; ++t) worst = std::max(worst, std::abs(mass(t) - mass(0)));
    CHECK(worst / scale <= 1e-8);
  }

  TEST_CASE("KdV self-converges in the time step") {
    const auto a = last_row(kdv_run(1, 0.5)), b = last_row(kdv_run(2, 0.5)), c = last_row(kdv_run(4, 0.5));
    const double e1 = l2_diff(a, b), e2 = l2_diff(b, c);
    CHECK(std::log2(e1 / e2) >= 3.0);
    CHECK(l2_diff(last_row(kdv_run(10, 0.5)), last_row(kdv_run(20, 0.5))) <= 1e-6);
  }

  TEST_CASE("KdV rejects bad grids") {
    KdvOptions o;
    o.nx = 100;
    CHECK_THROWS_AS(kdv_spectral_solve([](double x) { return x; }, o), Error);
  }

  TEST_CASE("difference quotients on linear functions are exact") {
    const Interval b[1] = {{-10, 10}};
    const ScalarField u = [](std::span<const double> p) { return 3.0 * p[0] + 1.0; };
    for (double h : {1e-1, 1e-2, 1e-3}) {
      const double x[1] = {0.37};
      CHECK(empirical_derivative(u, x, 0, h, FdScheme::Forward, b) == doctest::Approx(3.0).epsilon(1e-10));
      CHECK(empirical_derivative(u, x, 0, h, FdScheme::Central, b) == doctest::Approx(3.0).epsilon(1e-10));
    }
  }

  TEST_CASE("difference quotient orders on sin") {
    const Interval b[1] = {{0, M_PI}};
    const ScalarField u = [](std::span<const double> p) { return std::sin(p[0]); };
    std::vector<double> hs{1e-1, 1e-2, 1e-3}, ef, ec;
    for (double h : hs) {
      double sf = 0, sc = 0;
      for (int i = 1; i < 50; ++i) {
        const double x[1] = {0.2 + 2.5 * i / 50.0};
        sf = std::max(sf, std::abs(empirical_derivative(u, x, 0, h, FdScheme::Forward, b) - std::cos(x[0])));
        sc = std::max(sc, std::abs(empirical_derivative(u, x, 0, h, FdScheme::Central, b) - std::cos(x[0])));
      }
      ef.push_back(sf);
      ec.push_back(sc);
    }
    CHECK(oracle::convergence_order(hs, ef) == doctest::Approx(1.0).epsilon(0.05));
    CHECK(oracle::convergence_order(hs, ec) == doctest::Approx(2.0).epsilon(0.05));
  }

  TEST_CASE("stencils leaving the domain are rejected") {
    const Interval b[1] = {{0, 1}};
    const ScalarField u = [](std::span<const double> p) { return p[0]; };
    const double x[1] = {0.9995};
    try {
      empirical_derivative(u, x, 0, 1e-3, FdScheme::Forward, b);
      FAIL("expected a boundary error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Boundary);
    }
  }

  TEST_CASE("forward quotients of bumps respect the L2 bound") {
    std::mt19937_64 rng(17);
    const Interval b[2] = {{-oracle::kBumpBox, oracle::kBumpBox}, {-oracle::kBumpBox, oracle::kBumpBox}};
    for (int trial = 0; trial < 10; ++trial) {
      const oracle::Bump bump = oracle::random_bump(rng);
      const ScalarField u = [&](std::span<const double> p) { return bump.value(p[0], p[1]); };
      for (double h : {0.05, 0.01, 0.001}) {
        double nq = 0, nd = 0, sup2 = 0;
        const int n = 120;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double x[2] = {-1.4 + 2.8 * (i + 0.5) / n, -1.4 + 2.8 * (j + 0.5) / n};
            const double q = empirical_derivative(u, x, 0, h, FdScheme::Forward, b);
            const double d = bump.dx(x[0], x[1]);
            nq += q * q;
            nd += d * d;
            const double e = 1e-4;
            sup2 = std::max(sup2, std::abs((bump.dx(x[0] + e, x[1]) - bump.dx(x[0] - e, x[1])) / (2 * e)));
          }
        nq = std::sqrt(nq / (n * n));
        nd = std::sqrt(nd / (n * n));
        CHECK(nq <= nd + 0.5 * h * sup2 * 1.01);
      }
    }
  }

  TEST_CASE("cubic interpolation") {
    GridField g({"x", "y"}, {uniform_axis(0.0, 0.1, 11), uniform_axis(-1.0, 0.2, 11)}, 1);
    for (std::size_t p = 0; p < g.point_count(); ++p) {
      const auto c = g.coords(p);
      g.data[p] = c[0] * c[0] * c[0] - 2.0 * c[1] * c[1] * c[0] + c[1];
    }
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ux(0, 1), uy(-1, 1);
    for (int i = 0; i < 100; ++i) {
      const double q[2] = {ux(rng), uy(rng)};
      CHECK(std::abs(cubic_interpolate(g, q) - (q[0] * q[0] * q[0] - 2.0 * q[1] * q[1] * q[0] + q[1])) <= 1e-10);
    }
    for (std::size_t p = 0; p < g.point_count(); p += 7) CHECK(cubic_interpolate(g, g.coords(p)) == g.data[p]);
    const double out[2] = {1.2, 0.0};
    CHECK_THROWS_AS(cubic_interpolate(g, out), Error);

    GridField s({"x", "y"}, {uniform_axis(-1.0, 0.01, 201), uniform_axis(-1.0, 0.01, 201)}, 1);
    for (std::size_t p = 0; p < s.point_count(); ++p) {
      const auto c = s.coords(p);
      s.data[p] = std::sin(M_PI * c[0]) * std::sin(M_PI * c[1]);
    }
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const double q[2] = {uy(rng), uy(rng)};
      worst = std::max(worst, std::abs(cubic_interpolate(s, q) - std::sin(M_PI * q[0]) * std::sin(M_PI * q[1])));
    }
    CHECK(worst <= 1e-6);
  }

  TEST_CASE("grid derivative by interpolation") {
    GridField g({"x"}, {uniform_axis(0.0, 0.01, 101)}, 1);
    for (std::size_t p = 0; p < g.point_count(); ++p) g.data[p] = std::sin(g.axes[0][p]);
    const double x[1] = {0.5};
    CHECK(empirical_derivative(g, x, 0, 1e-3, FdScheme::Central) == doctest::Approx(std::cos(0.5)).epsilon(1e-6));
  }

  TEST_CASE("grid files round trip and downsample") {
    GridField g({"t", "x"}, {uniform_axis(0.0, 0.001, 21), uniform_axis(-1.0, 0.01, 31)}, 2);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = std::sin(static_cast<double>(i));
    const auto dir = oracle::scratch("grid_io");
    save_grid(g, dir / "g.bin");
    const GridField back = load_grid(dir / "g.bin");
    CHECK(back.data == g.data);
    CHECK(back.axes == g.axes);
    CHECK(back.components == 2);

    const std::size_t both[2] = {0, 1};
    const GridField thin = g.downsample(both, 10);
    CHECK(thin.axes[0].size() == 3);
    CHECK(thin.axes[1].size() == 4);
    CHECK(thin.axes[0][1] - thin.axes[0][0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(thin.axes[1][1] - thin.axes[1][0] == doctest::Approx(0.1).epsilon(1e-12));
    const std::size_t idx[2] = {1, 2}, src[2] = {10, 20};
    CHECK(thin.at(idx, 1) == g.at(src, 1));

    GridField bad = g;
    bad.data.pop_back();
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}
