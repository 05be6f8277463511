#include "derivlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "derivlab/error.hpp"

namespace derivlab {

void adam_step(AdamState& s, Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  if (grad.size() != params.size() || s.m.size() != params.size())
    fail(ErrorKind::Shape, "Adam state, parameters and gradient differ in size");
  if (!grad.allFinite()) fail(ErrorKind::Numerical, "non-finite gradient in Adam step", s.t + 1);
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

std::string to_string(LbfgsStatus status) {
  switch (status) {
    case LbfgsStatus::Converged: return "converged";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

namespace {

struct Sample {
  double alpha = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
  Eigen::VectorXd g;
};

// Minimizer of the cubic through (a, fa, da), (b, fb, db), kept inside the
// central 80% of the bracket; falls back to bisection.
double cubic_step(const Sample& a, const Sample& b) {
  const double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  const double mid = 0.5 * (lo + hi);
  if (!std::isfinite(a.f) || !std::isfinite(b.f)) return mid;
  const double d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
  const double disc = d1 * d1 - a.d * b.d;
  if (disc < 0.0) return mid;
  const double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
  const double t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2);
  if (!std::isfinite(t)) return mid;
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

class LineSearch {
 public:
  LineSearch(const DiffFunction& fn, const Eigen::VectorXd& x, const Eigen::VectorXd& p, double f0, double d0,
             const LbfgsOptions& opt, int& evals)
      : fn_(fn), x_(x), p_(p), f0_(f0), d0_(d0), opt_(opt), evals_(evals) {}

  // Returns true with the accepted sample in `out`.
  bool run(double alpha0, Sample& out) {
    Sample prev{0.0, f0_, d0_, {}};
    double alpha = alpha0;
    for (int i = 0; i < opt_.max_line_evals; ++i) {
      Sample cur = eval(alpha);
      if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * alpha * d0_ || (i > 0 && cur.f >= prev.f))
        return zoom(prev, cur, out);
      if (std::abs(cur.d) <= -opt_.c2 * d0_) {
        out = std::move(cur);
        return true;
      }
      if (cur.d >= 0.0) return zoom(cur, prev, out);
      prev = std::move(cur);
      alpha *= 2.0;
    }
    return false;
  }

 private:
  Sample eval(double alpha) {
    Sample s;
    s.alpha = alpha;
    s.g.resize(x_.size());
    ++evals_;
    ++used_;
    s.f = fn_(x_ + alpha * p_, s.g);
    s.d = std::isfinite(s.f) ? s.g.dot(p_) : std::numeric_limits<double>::quiet_NaN();
    return s;
  }

  bool zoom(Sample lo, Sample hi, Sample& out) {
    while (used_ < opt_.max_line_evals) {
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) return false;
      Sample cur = eval(cubic_step(lo, hi));
      if (!std::isfinite(cur.f) || cur.f > f0_ + opt_.c1 * cur.alpha * d0_ || cur.f >= lo.f) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.d) <= -opt_.c2 * d0_) {
          out = std::move(cur);
          return true;
        }
        if (cur.d * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    return false;
  }

  const DiffFunction& fn_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& p_;
  double f0_, d0_;
  const LbfgsOptions& opt_;
  int& evals_;
  int used_ = 0;
};

}  // namespace

LbfgsResult lbfgs_minimize(const DiffFunction& fn, const Eigen::VectorXd& x0, const LbfgsOptions& opt,
                           const LbfgsCallback& callback) {
  if (opt.memory < 1) fail(ErrorKind::Configuration, "L-BFGS memory must be >= 1");
  if (!(opt.c1 > 0.0 && opt.c1 < opt.c2 && opt.c2 < 1.0))
    fail(ErrorKind::Configuration, "line search needs 0 < c1 < c2 < 1");
  LbfgsResult r;
  r.x = x0;
  Eigen::VectorXd g(x0.size());
  r.f = fn(r.x, g);
  r.evaluations = 1;
  if (!std::isfinite(r.f) || !g.allFinite()) fail(ErrorKind::Numerical, "non-finite loss at the starting point", 0);
  r.grad_norm = g.norm();

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  for (;;) {
    if (r.grad_norm <= opt.grad_tol) {
      r.status = LbfgsStatus::Converged;
      return r;
    }
    if (r.iterations >= opt.max_iters) {
      r.status = LbfgsStatus::MaxIterations;
      return r;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> a(S.size());
    for (std::size_t i = S.size(); i-- > 0;) {
      a[i] = rho[i] * S[i].dot(q);
      q -= a[i] * Y[i];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t i = 0; i < S.size(); ++i) {
      const double b = rho[i] * Y[i].dot(q);
      q += (a[i] - b) * S[i];
    }
    Eigen::VectorXd p = -q;
    double d0 = g.dot(p);
    if (!(d0 < 0.0)) {
      // Not a descent direction: restart from steepest descent.
      S.clear();
      Y.clear();
      rho.clear();
      p = -g;
      d0 = -g.squaredNorm();
    }
    const double alpha0 = S.empty() ? std::min(1.0, 1.0 / r.grad_norm) : 1.0;
    LineSearch ls(fn, r.x, p, r.f, d0, opt, r.evaluations);
    Sample acc;
    if (!ls.run(alpha0, acc)) {
      r.status = LbfgsStatus::LineSearchFailed;
      return r;
    }
    Eigen::VectorXd s = acc.alpha * p;
    Eigen::VectorXd y = acc.g - g;
    r.x += s;
    r.f = acc.f;
    g = std::move(acc.g);
    r.grad_norm = g.norm();
    ++r.iterations;
    r.losses.push_back(r.f);
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    if (callback) callback(r.iterations, r.f, r.grad_norm);
  }
}

}  // namespace derivlab
