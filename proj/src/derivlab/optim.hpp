#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace derivlab {

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(Eigen::Index n = 0) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// One bias-corrected Adam update of `params` in place. Non-finite gradient
// -> ErrorKind::Numerical (params and state untouched).
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);

// f(x), writing the gradient into `grad`.
using DiffFunction = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsOptions {
  int max_iters = 100;
  int memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  double grad_tol = 1e-9;
  int max_line_evals = 30;
};

enum class LbfgsStatus { Converged, MaxIterations, LineSearchFailed };

std::string to_string(LbfgsStatus status);

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;  // accepted steps
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
  std::vector<double> losses;  // f after each accepted step
};

// Called after each accepted step with (iteration, f, grad norm).
using LbfgsCallback = std::function<void(int iteration, double f, double grad_norm)>;

// Limited-memory BFGS with a strong-Wolfe line search. Accepted losses are
// nonincreasing. A failed line search ends the run at the last accepted
// point. Non-finite f at x0 -> ErrorKind::Numerical.
LbfgsResult lbfgs_minimize(const DiffFunction& fn, const Eigen::VectorXd& x0, const LbfgsOptions& options,
                           const LbfgsCallback& callback = {});

}  // namespace derivlab
