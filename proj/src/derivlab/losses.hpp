#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "derivlab/collocation.hpp"
#include "derivlab/jets.hpp"
#include "derivlab/network.hpp"
#include "derivlab/problems.hpp"

namespace derivlab {

enum class Method { DERL, OUTL, OUTL_PINN, SOB, HESL, DER_HESL, SOB_HES, PINN };
enum class HessianEstimator { Exact, RandomProbe };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

// Which target arrays a supervised term reads.
struct TargetOrders {
  bool values = false;
  bool jacobians = false;
  bool hessians = false;

  bool any() const noexcept { return values || jacobians || hessians; }
  int max_order() const noexcept { return hessians ? 2 : jacobians ? 1 : 0; }
};

// Interior targets each method supervises (PINN: none).
TargetOrders method_targets(Method method);

struct LossSpec {
  Method method = Method::DERL;
  double lambda_D = 1.0;
  double lambda_P = 1.0;
  double lambda_B = 1.0;
  double lambda_I = 1.0;
  // SOB_HES only: replace the exact Hessian term by directional difference
  // quotients of the jacobian along random Gaussian probes.
  HessianEstimator hessian = HessianEstimator::Exact;
  int probes = 8;
  double probe_eps = 1e-3;
  std::uint64_t probe_seed = 0;

  void validate() const;
};

// Mean over rows of the squared Euclidean norm of row differences.
double mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

enum class Component { Domain, Pde, Bc, Ic };

std::string to_string(Component component);

// One MSE term over a fixed point set, which must outlive the term. Values
// are means over the selected rows so minibatch and full-batch losses share
// a scale.
class LossTerm {
 public:
  LossTerm(std::string name, Component component, double weight)
      : name_(std::move(name)), component_(component), weight_(weight) {}
  virtual ~LossTerm() = default;

  const std::string& name() const noexcept { return name_; }
  Component component() const noexcept { return component_; }
  double weight() const noexcept { return weight_; }
  void set_weight(double w) noexcept { weight_ = w; }

  virtual Eigen::Index size() const = 0;

  // Unweighted term value over `rows` (all rows when empty).
  double value(const JetSource& model, std::span<const Eigen::Index> rows = {}) const;

  // Unweighted value; adds weight * d(value)/d(params) into `grad`.
  double value_and_gradient(const Network& net, std::span<const Eigen::Index> rows,
                            Eigen::VectorXd& grad) const;

 protected:
  virtual DerivRequest request() const = 0;
  virtual Eigen::MatrixXd batch_points(std::span<const Eigen::Index> rows) const = 0;
  // Value over the batch; fills dL/d(jets) into `adjoint` when non-null.
  virtual double on_jets(const JetBatch& jets, std::span<const Eigen::Index> rows,
                         JetBatch* adjoint) const = 0;

 private:
  std::string name_;
  Component component_;
  double weight_;
};

// MSE between network values/derivatives and stored targets.
std::unique_ptr<LossTerm> supervised_term(std::string name, Component component, double weight,
                                          const CollocationSet& set, TargetOrders orders);

// Stochastic Hessian estimate: mean over probes v of
// ||(Du(x + eps v) - Du(x)) / eps - H v||^2, v ~ N(0, I) over derivative axes.
std::unique_ptr<LossTerm> probe_hessian_term(std::string name, Component component, double weight,
                                             const CollocationSet& set, int probes, double eps,
                                             std::uint64_t seed);

// Mean squared PDE residual over the points.
std::unique_ptr<LossTerm> residual_term(std::string name, Component component, double weight,
                                        const ProblemSpec& problem, Eigen::MatrixXd points);

// ||u(p) - u(p + period e_axis)||^2 + ||u_axis(p) - u_axis(p + period e_axis)||^2.
std::unique_ptr<LossTerm> periodic_term(std::string name, Component component, double weight,
                                        const CollocationSet& set);

struct LossBreakdown {
  double total = 0.0;
  double domain = 0.0;
  double pde = 0.0;
  double bc = 0.0;
  double ic = 0.0;
  // Weighted value of each term, in objective order.
  std::vector<double> terms;
};

// Weighted sum of terms.
class Objective {
 public:
  void add(std::unique_ptr<LossTerm> term);
  const std::vector<std::unique_ptr<LossTerm>>& terms() const noexcept { return terms_; }
  std::size_t count() const noexcept { return terms_.size(); }

  LossBreakdown evaluate(const JetSource& model) const;
  LossBreakdown evaluate(const Network& net) const;

  // `rows[i]` selects the batch for term i; an empty span means all rows.
  LossBreakdown value_and_gradient(const Network& net, const std::vector<std::span<const Eigen::Index>>& rows,
                                   Eigen::VectorXd& grad) const;
  LossBreakdown value_and_gradient(const Network& net, Eigen::VectorXd& grad) const;

 private:
  std::vector<std::unique_ptr<LossTerm>> terms_;
};

// Builds the composite objective: lambda_D * domain terms (+ lambda_P *
// residual for OUTL_PINN) + lambda_B * BC + lambda_I * IC. The IC term is
// dropped for time-independent problems; `boundary` may be null for
// problems without a boundary condition.
Objective build_objective(const LossSpec& spec, const ProblemSpec& problem, const CollocationSet& interior,
                          const CollocationSet* boundary, const CollocationSet* initial);

// Throws ErrorKind::Specification naming the first missing target array.
void check_targets(const CollocationSet& set, TargetOrders orders, const std::string& set_name);

double composite_loss(const LossSpec& spec, const ProblemSpec& problem, const CollocationSet& interior,
                      const CollocationSet* boundary, const CollocationSet* initial, const Network& net);

}  // namespace derivlab
