#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the jet machinery.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "derivlab/network.hpp"

namespace oracle {

inline std::filesystem::path scratch(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(DERIVLAB_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path source(const std::string& rel) {
  return std::filesystem::path(DERIVLAB_SOURCE_DIR) / rel;
}

// Plain loop forward pass.
inline std::vector<double> forward(const derivlab::Network& net, const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& W = layers[l].weight;
    std::vector<double> z(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      double s = layers[l].bias[i];
      for (Eigen::Index j = 0; j < W.cols(); ++j) s += W(i, j) * a[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(i)] = (l + 1 < layers.size()) ? std::tanh(s) : s;
    }
    a = std::move(z);
  }
  return a;
}

inline double forward0(const derivlab::Network& net, const std::vector<double>& x, int k = 0) {
  return forward(net, x)[static_cast<std::size_t>(k)];
}

// Central difference jacobian of output k, d entries.
inline Eigen::VectorXd fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                   double h) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    x[i] = xi;
    g[static_cast<Eigen::Index>(i)] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Second differences of f: diagonal by the 3-point rule, off-diagonal by
// the 4-point cross rule.
inline Eigen::MatrixXd fd_hessian(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                  double h) {
  const std::size_t d = x.size();
  Eigen::MatrixXd H(d, d);
  const double f0 = f(x);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      const double xi = x[i], xj = x[j];
      double v;
      if (i == j) {
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        v = (fp - 2.0 * f0 + fm) / (h * h);
      } else {
        double s = 0.0;
        for (int a : {1, -1})
          for (int b : {1, -1}) {
            x[i] = xi + a * h;
            x[j] = xj + b * h;
            s += a * b * f(x);
          }
        v = s / (4.0 * h * h);
      }
      x[i] = xi;
      x[j] = xj;
      H(i, j) = H(j, i) = v;
    }
  }
  return H;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

// Two-loop mean of squared row norms.
inline double naive_mse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    double row = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) row += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    total += row;
  }
  return total / static_cast<double>(a.rows());
}

inline Eigen::MatrixXd uniform_points(std::mt19937_64& rng, Eigen::Index n, const std::vector<std::pair<double, double>>& box) {
  Eigen::MatrixXd p(n, static_cast<Eigen::Index>(box.size()));
  for (Eigen::Index r = 0; r < n; ++r)
    for (std::size_t a = 0; a < box.size(); ++a)
      p(r, static_cast<Eigen::Index>(a)) = std::uniform_real_distribution<double>(box[a].first, box[a].second)(rng);
  return p;
}

// Smooth compactly supported bump A exp(-1 / (1 - s^2)), s = |x - c| / r.
struct Bump {
  double cx, cy, r, amp;

  double value(double x, double y) const {
    const double s2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
    return s2 < 1.0 ? amp * std::exp(-1.0 / (1.0 - s2)) : 0.0;
  }
  // d/dx
  double dx(double x, double y) const {
    const double s2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
    if (s2 >= 1.0) return 0.0;
    const double q = 1.0 - s2;
    return value(x, y) * (-2.0 * (x - cx) / (r * r)) / (q * q);
  }
};

// Support stays inside [-1.5, 1.5]^2. Radii are wide compared with the
// largest difference step (0.05); narrower bumps are still pre-asymptotic
// there and understate the convergence order.
inline constexpr double kBumpBox = 1.5;

inline Bump random_bump(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-0.25, 0.25), r(0.6, 1.0), a(0.5, 2.0);
  return {c(rng), c(rng), r(rng), a(rng)};
}

// Least-squares slope of log(err) against log(h).
inline double convergence_order(const std::vector<double>& h, const std::vector<double>& err) {
  double mx = 0, my = 0;
  const double n = static_cast<double>(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    mx += std::log(h[i]) / n;
    my += std::log(err[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    sxy += (std::log(h[i]) - mx) * (std::log(err[i]) - my);
    sxx += (std::log(h[i]) - mx) * (std::log(h[i]) - mx);
  }
  return sxy / sxx;
}

}  // namespace oracle
