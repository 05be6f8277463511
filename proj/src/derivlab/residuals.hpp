#pragma once

// Residual operators written once against a jet accessor so that the same
// code serves closed-form checks, single-point evaluation and the batched
// training path (with its vector-Jacobian product).
//
// Jet accessor J:   value(k) d1(k,i) d2(k,i,j) d3axis(k,axis)
// Adjoint sink A:   add_value(k,x) add_d1(k,i,x) add_d2(k,i,j,x) add_d3axis(k,axis,x)

#include <cmath>

#include "derivlab/error.hpp"
#include "derivlab/problems.hpp"

namespace derivlab::residual {

template <class J>
void evaluate(const ProblemSpec& pb, const double* point, const J& jet, double* out) {
  const auto& c = pb.constants;
  switch (pb.name) {
    case ProblemName::AllenCahn:
    case ProblemName::AllenCahn1P:
    case ProblemName::AllenCahn2P: {
      const double u = jet.value(0);
      const double f = forcing(pb, std::span<const double>(point, pb.dim()));
      out[0] = c.ac_lambda * (jet.d2(0, 0, 0) + jet.d2(0, 1, 1)) + u * (u * u - 1.0) - f;
      return;
    }
    case ProblemName::Continuity: {
      // u_t + div(v u) with v = (-y, x), which is divergence free.
      const double x = point[1], y = point[2];
      out[0] = jet.d1(0, 0) - y * jet.d1(0, 1) + x * jet.d1(0, 2);
      return;
    }
    case ProblemName::Kovasznay: {
      const double nu = c.kovasznay_nu;
      const double u = jet.value(0), v = jet.value(1);
      out[0] = u * jet.d1(0, 0) + v * jet.d1(0, 1) + jet.d1(2, 0) -
               nu * (jet.d2(0, 0, 0) + jet.d2(0, 1, 1));
      out[1] = u * jet.d1(1, 0) + v * jet.d1(1, 1) + jet.d1(2, 1) -
               nu * (jet.d2(1, 0, 0) + jet.d2(1, 1, 1));
      out[2] = jet.d1(0, 0) + jet.d1(1, 1);
      return;
    }
    case ProblemName::Pendulum: {
      out[0] = jet.d2(0, 0, 0) + c.g_over_l * std::sin(jet.value(0)) + c.b_over_m * jet.d1(0, 0);
      return;
    }
    case ProblemName::KdV: {
      const double u = jet.value(0);
      out[0] = jet.d1(0, 0) + u * jet.d1(0, 1) + c.kdv_nu * jet.d3axis(0, 1);
      return;
    }
  }
}

// Accumulates w^T dF/d(jet) into the adjoint sink.
template <class J, class A>
void vjp(const ProblemSpec& pb, const double* point, const J& jet, const double* w, A& adj) {
  const auto& c = pb.constants;
  switch (pb.name) {
    case ProblemName::AllenCahn:
    case ProblemName::AllenCahn1P:
    case ProblemName::AllenCahn2P: {
      const double u = jet.value(0);
      adj.add_value(0, w[0] * (3.0 * u * u - 1.0));
      adj.add_d2(0, 0, 0, w[0] * c.ac_lambda);
      adj.add_d2(0, 1, 1, w[0] * c.ac_lambda);
      return;
    }
    case ProblemName::Continuity: {
      const double x = point[1], y = point[2];
      adj.add_d1(0, 0, w[0]);
      adj.add_d1(0, 1, -y * w[0]);
      adj.add_d1(0, 2, x * w[0]);
      return;
    }
    case ProblemName::Kovasznay: {
      const double nu = c.kovasznay_nu;
      const double u = jet.value(0), v = jet.value(1);
      // momentum x
      adj.add_value(0, w[0] * jet.d1(0, 0));
      adj.add_value(1, w[0] * jet.d1(0, 1));
      adj.add_d1(0, 0, w[0] * u);
      adj.add_d1(0, 1, w[0] * v);
      adj.add_d1(2, 0, w[0]);
      adj.add_d2(0, 0, 0, -nu * w[0]);
      adj.add_d2(0, 1, 1, -nu * w[0]);
      // momentum y
      adj.add_value(0, w[1] * jet.d1(1, 0));
      adj.add_value(1, w[1] * jet.d1(1, 1));
      adj.add_d1(1, 0, w[1] * u);
      adj.add_d1(1, 1, w[1] * v);
      adj.add_d1(2, 1, w[1]);
      adj.add_d2(1, 0, 0, -nu * w[1]);
      adj.add_d2(1, 1, 1, -nu * w[1]);
      // incompressibility
      adj.add_d1(0, 0, w[2]);
      adj.add_d1(1, 1, w[2]);
      return;
    }
    case ProblemName::Pendulum: {
      adj.add_d2(0, 0, 0, w[0]);
      adj.add_value(0, w[0] * c.g_over_l * std::cos(jet.value(0)));
      adj.add_d1(0, 0, w[0] * c.b_over_m);
      return;
    }
    case ProblemName::KdV: {
      const double u = jet.value(0);
      adj.add_d1(0, 0, w[0]);
      adj.add_value(0, w[0] * jet.d1(0, 1));
      adj.add_d1(0, 1, w[0] * u);
      adj.add_d3axis(0, 1, w[0] * c.kdv_nu);
      return;
    }
  }
}

// Read-only view of one point of a JetBatch.
class BatchPoint {
 public:
  BatchPoint(const JetBatch& jets, Eigen::Index p, const int* third_of_axis)
      : jets_(jets), p_(p), third_(third_of_axis) {}
  double value(int k) const { return jets_.value(k, p_); }
  double d1(int k, int i) const { return jets_.d1(k, i, p_); }
  double d2(int k, int i, int j) const { return jets_.d2(k, i, j, p_); }
  double d3axis(int k, int axis) const {
    if (!third_ || third_[axis] < 0) fail(ErrorKind::Capability, "third derivative along axis not propagated");
    return jets_.d3(k, third_[axis], p_);
  }

 private:
  const JetBatch& jets_;
  Eigen::Index p_;
  const int* third_;
};

class BatchPointAdjoint {
 public:
  BatchPointAdjoint(JetBatch& adj, Eigen::Index p, const int* third_of_axis)
      : adj_(adj), p_(p), third_(third_of_axis) {}
  void add_value(int k, double x) { adj_.at(k, 0, p_) += x; }
  void add_d1(int k, int i, double x) { adj_.at(k, adj_.layout.first(i), p_) += x; }
  void add_d2(int k, int i, int j, double x) { adj_.at(k, adj_.layout.pair(i, j), p_) += x; }
  void add_d3axis(int k, int axis, double x) { adj_.at(k, adj_.layout.third(third_[axis]), p_) += x; }

 private:
  JetBatch& adj_;
  Eigen::Index p_;
  const int* third_;
};

// Maps input axis -> third-direction index in `layout`, -1 where absent.
std::vector<int> third_axis_table(const ChannelLayout& layout);

}  // namespace derivlab::residual
