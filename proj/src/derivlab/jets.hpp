#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "derivlab/network.hpp"

namespace derivlab {

// Which input derivatives to propagate. Third-order terms are directional:
// each direction v yields D^3 u[v, v, v]; requesting any forces order 2.
struct DerivRequest {
  int order = 0;
  std::vector<Eigen::VectorXd> third_directions;

  static DerivRequest up_to(int order) { return {order, {}}; }
  static DerivRequest with_third_axis(int input_dim, int axis);
  DerivRequest& merge(const DerivRequest& other);
};

// Channel indexing for a jet batch: value, d/dx_i, d2/dx_i dx_j (i <= j),
// then one channel per third-order direction.
class ChannelLayout {
 public:
  ChannelLayout() = default;
  ChannelLayout(int input_dim, const DerivRequest& request);

  int input_dim() const noexcept { return d_; }
  int order() const noexcept { return order_; }
  int third_count() const noexcept { return static_cast<int>(dirs_.size()); }
  int count() const noexcept { return count_; }

  int value() const noexcept { return 0; }
  int first(int i) const noexcept { return 1 + i; }
  int pair(int i, int j) const noexcept {
    if (i > j) std::swap(i, j);
    return 1 + d_ + i * (2 * d_ - i - 1) / 2 + j;
  }
  int third(int q) const noexcept { return 1 + d_ + pairs_ + q; }
  const Eigen::VectorXd& direction(int q) const { return dirs_[q]; }

 private:
  int d_ = 0;
  int order_ = 0;
  int pairs_ = 0;
  int count_ = 1;
  std::vector<Eigen::VectorXd> dirs_;
};

// Network outputs and input derivatives for a batch of points.
// `data` is m x (channels * n); channel c of point p lives in column c*n + p.
struct JetBatch {
  ChannelLayout layout;
  Eigen::Index n = 0;
  int m = 0;
  Eigen::MatrixXd data;

  JetBatch() = default;
  JetBatch(ChannelLayout layout, Eigen::Index n, int m)
      : layout(std::move(layout)), n(n), m(m),
        data(Eigen::MatrixXd::Zero(m, this->layout.count() * n)) {}

  double& at(int k, int channel, Eigen::Index p) { return data(k, channel * n + p); }
  double at(int k, int channel, Eigen::Index p) const { return data(k, channel * n + p); }

  double value(int k, Eigen::Index p) const { return at(k, 0, p); }
  double d1(int k, int i, Eigen::Index p) const { return at(k, layout.first(i), p); }
  double d2(int k, int i, int j, Eigen::Index p) const { return at(k, layout.pair(i, j), p); }
  double d3(int k, int q, Eigen::Index p) const { return at(k, layout.third(q), p); }

  JetBatch zeros_like() const { return JetBatch(layout, n, m); }
};

// Intermediate state kept by forward_jets for the reverse pass.
struct JetTape {
  ChannelLayout layout;
  Eigen::Index n = 0;
  std::vector<Eigen::MatrixXd> inputs;    // input to each layer (all channels)
  std::vector<Eigen::MatrixXd> preacts;   // pre-activation of each hidden layer
};

// Forward-mode propagation of truncated Taylor coefficients through the
// network. `points` is n x d.
JetBatch forward_jets(const Network& net, const Eigen::MatrixXd& points,
                      const DerivRequest& request, JetTape* tape = nullptr);

// Reverse pass: given dL/d(jet channels), returns dL/d(parameters) in the
// network's flat parameter layout.
Eigen::VectorXd backward_jets(const Network& net, const JetTape& tape, const JetBatch& adjoint);

struct InputDerivatives {
  Eigen::VectorXd value;                 // m
  Eigen::MatrixXd jacobian;              // m x d
  std::vector<Eigen::MatrixXd> hessian;  // m matrices d x d, empty below order 2
  std::optional<Eigen::VectorXd> third;  // m, along third_axis
};

InputDerivatives input_derivatives(const Network& net, std::span<const double> x, int order,
                                   std::optional<int> third_axis = std::nullopt);

// Scalar loss over a jet batch. Must fill `adjoint` with dL/d(jets) and
// return L.
using JetLoss = std::function<double(const JetBatch& jets, JetBatch& adjoint)>;

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

// Throws ErrorKind::Numerical with the offending batch row when the loss is
// not finite.
LossAndGradient loss_gradient(const Network& net, const Eigen::MatrixXd& points,
                              const DerivRequest& request, const JetLoss& loss);

}  // namespace derivlab
