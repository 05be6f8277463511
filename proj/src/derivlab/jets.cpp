#include "derivlab/jets.hpp"

#include <cmath>
#include <string>

#include "derivlab/error.hpp"

namespace derivlab {

DerivRequest DerivRequest::with_third_axis(int input_dim, int axis) {
  if (axis < 0 || axis >= input_dim)
    fail(ErrorKind::Axis, "third_axis " + std::to_string(axis) + " out of range for input dim " +
                              std::to_string(input_dim));
  DerivRequest r{2, {}};
  r.third_directions.push_back(Eigen::VectorXd::Unit(input_dim, axis));
  return r;
}

DerivRequest& DerivRequest::merge(const DerivRequest& other) {
  order = std::max(order, other.order);
  for (const auto& v : other.third_directions) {
    bool seen = false;
    for (const auto& w : third_directions) seen = seen || (w.size() == v.size() && w == v);
    if (!seen) third_directions.push_back(v);
  }
  return *this;
}

ChannelLayout::ChannelLayout(int input_dim, const DerivRequest& request)
    : d_(input_dim), order_(request.order), dirs_(request.third_directions) {
  if (order_ < 0 || order_ > 2) fail(ErrorKind::Capability, "derivative order must be 0, 1 or 2");
  if (!dirs_.empty()) order_ = 2;
  for (const auto& v : dirs_) {
    if (v.size() != d_) fail(ErrorKind::Shape, "third-order direction has wrong dimension");
  }
  pairs_ = order_ >= 2 ? d_ * (d_ + 1) / 2 : 0;
  count_ = 1 + (order_ >= 1 ? d_ : 0) + pairs_ + static_cast<int>(dirs_.size());
}

namespace {

struct TanhDerivs {
  double s, s1, s2, s3, s4;
};

inline TanhDerivs tanh_derivs(double z) {
  const double s = std::tanh(z);
  const double s1 = 1.0 - s * s;
  const double s2 = -2.0 * s * s1;
  const double s3 = -2.0 * s1 * s1 + 4.0 * s * s * s1;
  const double s4 = -4.0 * s1 * s2 + 8.0 * s * s1 * s1 + 4.0 * s * s * s2;
  return {s, s1, s2, s3, s4};
}

// Directional first/second coefficients; `cs` is the channel stride.
inline void directional(const ChannelLayout& L, const Eigen::VectorXd& v, const double* z,
                        Eigen::Index cs, double& zv, double& zvv) {
  const int d = L.input_dim();
  zv = 0.0;
  zvv = 0.0;
  for (int i = 0; i < d; ++i) {
    zv += v[i] * z[L.first(i) * cs];
    zvv += v[i] * v[i] * z[L.pair(i, i) * cs];
    for (int j = i + 1; j < d; ++j) zvv += 2.0 * v[i] * v[j] * z[L.pair(i, j) * cs];
  }
}

// Applies tanh to every channel of a pre-activation matrix. Element (r, c*n+p).
void activate(const ChannelLayout& L, Eigen::Index n, const Eigen::MatrixXd& Z, Eigen::MatrixXd& A) {
  const int d = L.input_dim();
  const Eigen::Index rows = Z.rows();
  const Eigen::Index ld = Z.rows();  // column-major leading dimension
  A.resize(Z.rows(), Z.cols());
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      // z[c*n*ld] walks channel c for this (r, p)
      const double* z = Z.data() + p * ld + r;
      double* a = A.data() + p * ld + r;
      const Eigen::Index cs = n * ld;
      const TanhDerivs t = tanh_derivs(z[0]);
      a[0] = t.s;
      if (L.order() >= 1) {
        for (int i = 0; i < d; ++i) a[L.first(i) * cs] = t.s1 * z[L.first(i) * cs];
      }
      if (L.order() >= 2) {
        for (int i = 0; i < d; ++i) {
          const double zi = z[L.first(i) * cs];
          for (int j = i; j < d; ++j) {
            const int c = L.pair(i, j);
            a[c * cs] = t.s2 * zi * z[L.first(j) * cs] + t.s1 * z[c * cs];
          }
        }
      }
      for (int q = 0; q < L.third_count(); ++q) {
        double zv, zvv;
        directional(L, L.direction(q), z, cs, zv, zvv);
        const int c = L.third(q);
        a[c * cs] = t.s3 * zv * zv * zv + 3.0 * t.s2 * zv * zvv + t.s1 * z[c * cs];
      }
    }
  }
}

// Reverse of `activate`: Zbar from Abar, reading pre-activations Z.
void activate_backward(const ChannelLayout& L, Eigen::Index n, const Eigen::MatrixXd& Z,
                       const Eigen::MatrixXd& Abar, Eigen::MatrixXd& Zbar) {
  const int d = L.input_dim();
  const Eigen::Index rows = Z.rows();
  const Eigen::Index ld = Z.rows();
  const Eigen::Index cs = n * ld;
  Zbar.setZero(Z.rows(), Z.cols());
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double* z = Z.data() + p * ld + r;
      const double* ab = Abar.data() + p * ld + r;
      double* zb = Zbar.data() + p * ld + r;
      const TanhDerivs t = tanh_derivs(z[0]);
      double zb0 = ab[0] * t.s1;
      if (L.order() >= 1) {
        for (int i = 0; i < d; ++i) {
          const int c = L.first(i);
          zb[c * cs] += ab[c * cs] * t.s1;
          zb0 += ab[c * cs] * t.s2 * z[c * cs];
        }
      }
      if (L.order() >= 2) {
        for (int i = 0; i < d; ++i) {
          const double zi = z[L.first(i) * cs];
          for (int j = i; j < d; ++j) {
            const int c = L.pair(i, j);
            const double g = ab[c * cs];
            const double zj = z[L.first(j) * cs];
            zb[c * cs] += g * t.s1;
            zb[L.first(i) * cs] += g * t.s2 * zj;
            zb[L.first(j) * cs] += g * t.s2 * zi;
            zb0 += g * (t.s3 * zi * zj + t.s2 * z[c * cs]);
          }
        }
      }
      for (int q = 0; q < L.third_count(); ++q) {
        const Eigen::VectorXd& v = L.direction(q);
        double zv, zvv;
        directional(L, v, z, cs, zv, zvv);
        const int c = L.third(q);
        const double g = ab[c * cs];
        if (g == 0.0) continue;
        zb0 += g * (t.s4 * zv * zv * zv + 3.0 * t.s3 * zv * zvv + t.s2 * z[c * cs]);
        const double gv = g * (3.0 * t.s3 * zv * zv + 3.0 * t.s2 * zvv);
        const double gvv = g * 3.0 * t.s2 * zv;
        for (int i = 0; i < d; ++i) {
          zb[L.first(i) * cs] += v[i] * gv;
          zb[L.pair(i, i) * cs] += v[i] * v[i] * gvv;
          for (int j = i + 1; j < d; ++j) zb[L.pair(i, j) * cs] += 2.0 * v[i] * v[j] * gvv;
        }
        zb[c * cs] += g * t.s1;
      }
      zb[0] += zb0;
    }
  }
}

}  // namespace

JetBatch forward_jets(const Network& net, const Eigen::MatrixXd& points, const DerivRequest& request,
                      JetTape* tape) {
  const int d = net.input_dim();
  if (points.cols() != d)
    fail(ErrorKind::Shape, "points have " + std::to_string(points.cols()) +
                               " columns, network expects " + std::to_string(d));
  ChannelLayout layout(d, request);
  const Eigen::Index n = points.rows();
  const int C = layout.count();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, C * n);
  A.leftCols(n) = points.transpose();
  if (layout.order() >= 1) {
    for (int i = 0; i < d; ++i) A.block(i, layout.first(i) * n, 1, n).setOnes();
  }

  if (tape) {
    tape->layout = layout;
    tape->n = n;
    tape->inputs.clear();
    tape->preacts.clear();
  }

  const auto& layers = net.layers();
  Eigen::MatrixXd Z;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Z.noalias() = layers[l].weight * A;
    Z.leftCols(n).colwise() += layers[l].bias;
    if (tape) tape->inputs.push_back(A);
    if (l + 1 < layers.size()) {
      activate(layout, n, Z, A);
      if (tape) tape->preacts.push_back(Z);
    }
  }

  JetBatch out(layout, n, net.output_dim());
  out.data = std::move(Z);
  return out;
}

Eigen::VectorXd backward_jets(const Network& net, const JetTape& tape, const JetBatch& adjoint) {
  const auto& layers = net.layers();
  if (tape.inputs.size() != layers.size())
    fail(ErrorKind::Shape, "jet tape does not belong to this network");
  if (adjoint.data.rows() != net.output_dim() || adjoint.data.cols() != tape.layout.count() * tape.n)
    fail(ErrorKind::Shape, "adjoint shape does not match the jet batch");

  const Eigen::Index n = tape.n;
  std::vector<Eigen::MatrixXd> grad_w(layers.size());
  std::vector<Eigen::VectorXd> grad_b(layers.size());

  Eigen::MatrixXd Zbar = adjoint.data;
  Eigen::MatrixXd Abar;
  for (std::size_t li = layers.size(); li-- > 0;) {
    grad_w[li].noalias() = Zbar * tape.inputs[li].transpose();
    grad_b[li] = Zbar.leftCols(n).rowwise().sum();
    if (li == 0) break;
    Abar.noalias() = layers[li].weight.transpose() * Zbar;
    activate_backward(tape.layout, n, tape.preacts[li - 1], Abar, Zbar);
  }

  Eigen::VectorXd flat(net.parameter_count());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Eigen::Index r = 0; r < grad_w[l].rows(); ++r)
      for (Eigen::Index c = 0; c < grad_w[l].cols(); ++c) flat[k++] = grad_w[l](r, c);
    for (Eigen::Index r = 0; r < grad_b[l].size(); ++r) flat[k++] = grad_b[l][r];
  }
  return flat;
}

InputDerivatives input_derivatives(const Network& net, std::span<const double> x, int order,
                                   std::optional<int> third_axis) {
  const int d = net.input_dim();
  if (static_cast<int>(x.size()) != d)
    fail(ErrorKind::Shape, "input has " + std::to_string(x.size()) + " entries, network expects " +
                               std::to_string(d));
  if (order < 0 || order > 2) fail(ErrorKind::Capability, "input_derivatives supports order <= 2");
  DerivRequest request = DerivRequest::up_to(order);
  if (third_axis) request = DerivRequest::with_third_axis(d, *third_axis).merge(request);

  Eigen::MatrixXd point(1, d);
  for (int i = 0; i < d; ++i) point(0, i) = x[i];
  const JetBatch jets = forward_jets(net, point, request);
  const int m = net.output_dim();

  InputDerivatives out;
  out.value.resize(m);
  out.jacobian = Eigen::MatrixXd::Zero(m, d);
  for (int k = 0; k < m; ++k) out.value[k] = jets.value(k, 0);
  if (order >= 1 || third_axis) {
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < d; ++i) out.jacobian(k, i) = jets.d1(k, i, 0);
  }
  if (order >= 2 || third_axis) {
    out.hessian.assign(m, Eigen::MatrixXd::Zero(d, d));
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out.hessian[k](i, j) = jets.d2(k, i, j, 0);
  }
  if (third_axis) {
    Eigen::VectorXd t(m);
    for (int k = 0; k < m; ++k) t[k] = jets.d3(k, 0, 0);
    out.third = std::move(t);
  }
  return out;
}

LossAndGradient loss_gradient(const Network& net, const Eigen::MatrixXd& points,
                              const DerivRequest& request, const JetLoss& loss) {
  JetTape tape;
  const JetBatch jets = forward_jets(net, points, request, &tape);
  JetBatch adjoint = jets.zeros_like();
  const double value = loss(jets, adjoint);
  if (!std::isfinite(value)) {
    Eigen::Index bad = 0;
    bool found = false;
    for (Eigen::Index p = 0; p < jets.n && !found; ++p) {
      for (int c = 0; c < jets.layout.count() && !found; ++c) {
        for (int k = 0; k < jets.m && !found; ++k) {
          if (!std::isfinite(jets.at(k, c, p)) || !std::isfinite(adjoint.at(k, c, p))) {
            bad = p;
            found = true;
          }
        }
      }
    }
    fail(ErrorKind::Numerical, "non-finite loss at batch row " + std::to_string(bad), bad);
  }
  return {value, backward_jets(net, tape, adjoint)};
}

}  // namespace derivlab
