#include "derivlab/losses.hpp"

#include <cmath>
#include <random>

#include "derivlab/error.hpp"
#include "derivlab/residuals.hpp"

namespace derivlab {

namespace {

struct MethodName {
  Method method;
  const char* text;
};

constexpr MethodName kMethods[] = {
    {Method::DERL, "DERL"}, {Method::OUTL, "OUTL"},         {Method::OUTL_PINN, "OUTL_PINN"},
    {Method::SOB, "SOB"},   {Method::HESL, "HESL"},         {Method::DER_HESL, "DER_HESL"},
    {Method::SOB_HES, "SOB_HES"}, {Method::PINN, "PINN"},
};

inline Eigen::Index row_at(std::span<const Eigen::Index> rows, Eigen::Index p) {
  return rows.empty() ? p : rows[p];
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows) {
  if (rows.empty()) return m;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= m.rows()) fail(ErrorKind::Shape, "batch row out of range");
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  }
  return out;
}

Eigen::Index batch_size(const LossTerm& term, std::span<const Eigen::Index> rows) {
  const Eigen::Index n = rows.empty() ? term.size() : static_cast<Eigen::Index>(rows.size());
  if (n == 0) fail(ErrorKind::EmptyBatch, "loss term '" + term.name() + "' has no points");
  return n;
}

class SupervisedTerm final : public LossTerm {
 public:
  SupervisedTerm(std::string name, Component c, double w, const CollocationSet& set, TargetOrders orders)
      : LossTerm(std::move(name), c, w), set_(set), orders_(orders) {}

  Eigen::Index size() const override { return set_.size(); }

 protected:
  DerivRequest request() const override { return DerivRequest::up_to(orders_.max_order()); }
  Eigen::MatrixXd batch_points(std::span<const Eigen::Index> rows) const override {
    return gather(set_.points, rows);
  }

  double on_jets(const JetBatch& jets, std::span<const Eigen::Index> rows, JetBatch* adj) const override {
    const Eigen::Index n = batch_size(*this, rows);
    const double scale = 1.0 / static_cast<double>(n);
    const int m = set_.outputs;
    const int k = set_.derivative_count();
    const auto& axes = set_.derivative_axes;
    double sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::Index r = row_at(rows, p);
      if (orders_.values) {
        for (int o = 0; o < m; ++o) {
          const double diff = jets.value(o, p) - (*set_.values)(r, o);
          sum += diff * diff;
          if (adj) adj->at(o, 0, p) += 2.0 * scale * diff;
        }
      }
      if (orders_.jacobians) {
        for (int o = 0; o < m; ++o)
          for (int a = 0; a < k; ++a) {
            const int ch = jets.layout.first(axes[a]);
            const double diff = jets.at(o, ch, p) - (*set_.jacobians)(r, o * k + a);
            sum += diff * diff;
            if (adj) adj->at(o, ch, p) += 2.0 * scale * diff;
          }
      }
      if (orders_.hessians) {
        for (int o = 0; o < m; ++o)
          for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b) {
              const int ch = jets.layout.pair(axes[a], axes[b]);
              const double diff = jets.at(o, ch, p) - (*set_.hessians)(r, (o * k + a) * k + b);
              sum += diff * diff;
              if (adj) adj->at(o, ch, p) += 2.0 * scale * diff;
            }
      }
    }
    return sum * scale;
  }

 private:
  const CollocationSet& set_;
  TargetOrders orders_;
};

class ProbeHessianTerm final : public LossTerm {
 public:
  ProbeHessianTerm(std::string name, Component c, double w, const CollocationSet& set, int probes, double eps,
                   std::uint64_t seed)
      : LossTerm(std::move(name), c, w), set_(set), eps_(eps) {
    require(probes >= 1, ErrorKind::Configuration, "probe count must be >= 1");
    require(eps > 0.0, ErrorKind::Configuration, "probe step must be > 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    dirs_.resize(probes, set.derivative_count());
    for (Eigen::Index q = 0; q < dirs_.rows(); ++q)
      for (Eigen::Index a = 0; a < dirs_.cols(); ++a) dirs_(q, a) = normal(rng);
  }

  Eigen::Index size() const override { return set_.size(); }

 protected:
  DerivRequest request() const override { return DerivRequest::up_to(1); }

  Eigen::MatrixXd batch_points(std::span<const Eigen::Index> rows) const override {
    const Eigen::MatrixXd base = gather(set_.points, rows);
    const Eigen::Index n = base.rows();
    Eigen::MatrixXd out((1 + dirs_.rows()) * n, base.cols());
    out.topRows(n) = base;
    for (Eigen::Index q = 0; q < dirs_.rows(); ++q) {
      Eigen::MatrixXd shifted = base;
      for (int a = 0; a < set_.derivative_count(); ++a)
        shifted.col(set_.derivative_axes[a]).array() += eps_ * dirs_(q, a);
      out.middleRows((1 + q) * n, n) = shifted;
    }
    return out;
  }

  double on_jets(const JetBatch& jets, std::span<const Eigen::Index> rows, JetBatch* adj) const override {
    const Eigen::Index n = batch_size(*this, rows);
    const Eigen::Index probes = dirs_.rows();
    const double scale = 1.0 / static_cast<double>(n * probes);
    const int m = set_.outputs;
    const int k = set_.derivative_count();
    const auto& axes = set_.derivative_axes;
    double sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::Index r = row_at(rows, p);
      for (Eigen::Index q = 0; q < probes; ++q) {
        const Eigen::Index ps = (1 + q) * n + p;
        for (int o = 0; o < m; ++o)
          for (int a = 0; a < k; ++a) {
            const int ch = jets.layout.first(axes[a]);
            double hv = 0.0;
            for (int b = 0; b < k; ++b) hv += (*set_.hessians)(r, (o * k + a) * k + b) * dirs_(q, b);
            const double diff = (jets.at(o, ch, ps) - jets.at(o, ch, p)) / eps_ - hv;
            sum += diff * diff;
            if (adj) {
              const double g = 2.0 * scale * diff / eps_;
              adj->at(o, ch, ps) += g;
              adj->at(o, ch, p) -= g;
            }
          }
      }
    }
    return sum * scale;
  }

 private:
  const CollocationSet& set_;
  double eps_;
  Eigen::MatrixXd dirs_;
};

class ResidualTerm final : public LossTerm {
 public:
  ResidualTerm(std::string name, Component c, double w, const ProblemSpec& problem, Eigen::MatrixXd points)
      : LossTerm(std::move(name), c, w), problem_(problem), points_(std::move(points)) {
    if (points_.cols() != problem_.dim()) fail(ErrorKind::Shape, "residual points have the wrong dimension");
  }

  Eigen::Index size() const override { return points_.rows(); }

 protected:
  DerivRequest request() const override { return problem_.residual_request(); }
  Eigen::MatrixXd batch_points(std::span<const Eigen::Index> rows) const override { return gather(points_, rows); }

  double on_jets(const JetBatch& jets, std::span<const Eigen::Index> rows, JetBatch* adj) const override {
    const Eigen::Index n = batch_size(*this, rows);
    const double scale = 1.0 / static_cast<double>(n);
    const int nr = problem_.residual_dim();
    const std::vector<int> third = residual::third_axis_table(jets.layout);
    std::vector<double> f(nr), w(nr), row(problem_.dim());
    double sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      const Eigen::Index r = row_at(rows, p);
      for (int i = 0; i < problem_.dim(); ++i) row[i] = points_(r, i);
      residual::BatchPoint access(jets, p, third.data());
      residual::evaluate(problem_, row.data(), access, f.data());
      for (int e = 0; e < nr; ++e) {
        sum += f[e] * f[e];
        w[e] = 2.0 * scale * f[e];
      }
      if (adj) {
        residual::BatchPointAdjoint sink(*adj, p, third.data());
        residual::vjp(problem_, row.data(), access, w.data(), sink);
      }
    }
    return sum * scale;
  }

 private:
  ProblemSpec problem_;
  Eigen::MatrixXd points_;
};

class PeriodicTerm final : public LossTerm {
 public:
  PeriodicTerm(std::string name, Component c, double w, const CollocationSet& set)
      : LossTerm(std::move(name), c, w), set_(set) {
    if (!set.periodic) fail(ErrorKind::Specification, "periodic term needs a boundary set with a pairing");
  }

  Eigen::Index size() const override { return set_.size(); }

 protected:
  DerivRequest request() const override { return DerivRequest::up_to(1); }

  Eigen::MatrixXd batch_points(std::span<const Eigen::Index> rows) const override {
    const Eigen::MatrixXd base = gather(set_.points, rows);
    Eigen::MatrixXd out(2 * base.rows(), base.cols());
    out.topRows(base.rows()) = base;
    out.bottomRows(base.rows()) = base;
    out.bottomRows(base.rows()).col(set_.periodic->axis).array() += set_.periodic->period;
    return out;
  }

  double on_jets(const JetBatch& jets, std::span<const Eigen::Index> rows, JetBatch* adj) const override {
    const Eigen::Index n = batch_size(*this, rows);
    const double scale = 1.0 / static_cast<double>(n);
    const int ch = jets.layout.first(set_.periodic->axis);
    double sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (int o = 0; o < jets.m; ++o) {
        for (int c : {0, ch}) {
          const double diff = jets.at(o, c, p) - jets.at(o, c, n + p);
          sum += diff * diff;
          if (adj) {
            adj->at(o, c, p) += 2.0 * scale * diff;
            adj->at(o, c, n + p) -= 2.0 * scale * diff;
          }
        }
      }
    }
    return sum * scale;
  }

 private:
  const CollocationSet& set_;
};

void add_component(LossBreakdown& b, Component c, double v) {
  switch (c) {
    case Component::Domain: b.domain += v; break;
    case Component::Pde: b.pde += v; break;
    case Component::Bc: b.bc += v; break;
    case Component::Ic: b.ic += v; break;
  }
  b.total += v;
  b.terms.push_back(v);
}

}  // namespace

std::string to_string(Method method) {
  for (const auto& e : kMethods)
    if (e.method == method) return e.text;
  return "unknown";
}

Method method_from_string(const std::string& name) {
  std::string upper;
  for (char ch : name) upper += ch == '+' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (const auto& e : kMethods)
    if (upper == e.text) return e.method;
  fail(ErrorKind::Configuration, "unknown method '" + name + "'");
}

std::string to_string(Component component) {
  switch (component) {
    case Component::Domain: return "domain";
    case Component::Pde: return "pde";
    case Component::Bc: return "bc";
    case Component::Ic: return "ic";
  }
  return "unknown";
}

TargetOrders method_targets(Method method) {
  switch (method) {
    case Method::DERL: return {false, true, false};
    case Method::OUTL:
    case Method::OUTL_PINN: return {true, false, false};
    case Method::SOB: return {true, true, false};
    case Method::HESL: return {false, false, true};
    case Method::DER_HESL: return {false, true, true};
    case Method::SOB_HES: return {true, true, true};
    case Method::PINN: return {};
  }
  return {};
}

void LossSpec::validate() const {
  const double ws[] = {lambda_D, lambda_P, lambda_B, lambda_I};
  const char* names[] = {"lambda_D", "lambda_P", "lambda_B", "lambda_I"};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(ws[i]) || ws[i] < 0.0)
      fail(ErrorKind::Configuration, std::string(names[i]) + " must be finite and nonnegative");
}

double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    fail(ErrorKind::Shape, "mse operands differ in shape");
  if (pred.rows() == 0) fail(ErrorKind::EmptyBatch, "mse over an empty batch");
  return (pred - target).rowwise().squaredNorm().sum() / static_cast<double>(pred.rows());
}

double LossTerm::value(const JetSource& model, std::span<const Eigen::Index> rows) const {
  batch_size(*this, rows);
  const JetBatch jets = model(batch_points(rows), request());
  return on_jets(jets, rows, nullptr);
}

double LossTerm::value_and_gradient(const Network& net, std::span<const Eigen::Index> rows,
                                    Eigen::VectorXd& grad) const {
  batch_size(*this, rows);
  const LossAndGradient lg = loss_gradient(net, batch_points(rows), request(),
                                           [&](const JetBatch& jets, JetBatch& adj) {
                                             return on_jets(jets, rows, &adj);
                                           });
  if (weight_ != 0.0) grad.noalias() += weight_ * lg.gradient;
  return lg.loss;
}

std::unique_ptr<LossTerm> supervised_term(std::string name, Component component, double weight,
                                          const CollocationSet& set, TargetOrders orders) {
  check_targets(set, orders, name);
  return std::make_unique<SupervisedTerm>(std::move(name), component, weight, set, orders);
}

std::unique_ptr<LossTerm> probe_hessian_term(std::string name, Component component, double weight,
                                             const CollocationSet& set, int probes, double eps,
                                             std::uint64_t seed) {
  check_targets(set, {false, false, true}, name);
  return std::make_unique<ProbeHessianTerm>(std::move(name), component, weight, set, probes, eps, seed);
}

std::unique_ptr<LossTerm> residual_term(std::string name, Component component, double weight,
                                        const ProblemSpec& problem, Eigen::MatrixXd points) {
  return std::make_unique<ResidualTerm>(std::move(name), component, weight, problem, std::move(points));
}

std::unique_ptr<LossTerm> periodic_term(std::string name, Component component, double weight,
                                        const CollocationSet& set) {
  return std::make_unique<PeriodicTerm>(std::move(name), component, weight, set);
}

void Objective::add(std::unique_ptr<LossTerm> term) { terms_.push_back(std::move(term)); }

LossBreakdown Objective::evaluate(const JetSource& model) const {
  LossBreakdown b;
  for (const auto& t : terms_) add_component(b, t->component(), t->weight() * t->value(model));
  return b;
}

LossBreakdown Objective::evaluate(const Network& net) const { return evaluate(network_source(net)); }

LossBreakdown Objective::value_and_gradient(const Network& net,
                                            const std::vector<std::span<const Eigen::Index>>& rows,
                                            Eigen::VectorXd& grad) const {
  if (rows.size() != terms_.size()) fail(ErrorKind::Shape, "one batch selection per term is required");
  grad = Eigen::VectorXd::Zero(net.parameter_count());
  LossBreakdown b;
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    const auto& t = *terms_[i];
    add_component(b, t.component(), t.weight() * t.value_and_gradient(net, rows[i], grad));
  }
  return b;
}

LossBreakdown Objective::value_and_gradient(const Network& net, Eigen::VectorXd& grad) const {
  return value_and_gradient(net, std::vector<std::span<const Eigen::Index>>(terms_.size()), grad);
}

void check_targets(const CollocationSet& set, TargetOrders orders, const std::string& set_name) {
  if (orders.values && !set.values) fail(ErrorKind::Specification, set_name + ".values is required but missing");
  if (orders.jacobians && !set.jacobians)
    fail(ErrorKind::Specification, set_name + ".jacobians is required but missing");
  if (orders.hessians && !set.hessians)
    fail(ErrorKind::Specification, set_name + ".hessians is required but missing");
}

Objective build_objective(const LossSpec& spec, const ProblemSpec& problem, const CollocationSet& interior,
                          const CollocationSet* boundary, const CollocationSet* initial) {
  spec.validate();
  if (interior.dim() != problem.dim()) fail(ErrorKind::Shape, "interior points do not match the problem dimension");
  Objective obj;
  const TargetOrders orders = method_targets(spec.method);
  if (spec.method == Method::PINN) {
    obj.add(residual_term("interior.residual", Component::Pde, spec.lambda_D, problem, interior.points));
  } else if (spec.method == Method::SOB_HES && spec.hessian == HessianEstimator::RandomProbe) {
    check_targets(interior, orders, "interior");
    obj.add(supervised_term("interior", Component::Domain, spec.lambda_D, interior, {true, true, false}));
    obj.add(probe_hessian_term("interior", Component::Domain, spec.lambda_D, interior, spec.probes,
                               spec.probe_eps, spec.probe_seed));
  } else {
    obj.add(supervised_term("interior", Component::Domain, spec.lambda_D, interior, orders));
  }
  if (spec.method == Method::OUTL_PINN)
    obj.add(residual_term("interior.residual", Component::Pde, spec.lambda_P, problem, interior.points));

  if (boundary && boundary->size() > 0) {
    if (boundary->periodic)
      obj.add(periodic_term("boundary.periodic", Component::Bc, spec.lambda_B, *boundary));
    else
      obj.add(supervised_term("boundary", Component::Bc, spec.lambda_B, *boundary, {true, false, false}));
  }
  if (problem.time_dependent()) {
    if (!initial || initial->size() == 0)
      fail(ErrorKind::Specification, "initial set is required for time-dependent problem " + to_string(problem.name));
    obj.add(supervised_term("initial", Component::Ic, spec.lambda_I, *initial,
                            {true, initial->jacobians.has_value(), false}));
  }
  return obj;
}

double composite_loss(const LossSpec& spec, const ProblemSpec& problem, const CollocationSet& interior,
                      const CollocationSet* boundary, const CollocationSet* initial, const Network& net) {
  return build_objective(spec, problem, interior, boundary, initial).evaluate(net).total;
}

}  // namespace derivlab
