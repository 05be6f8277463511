#include "derivlab/eval.hpp"

#include <chrono>
#include <cmath>

#include "derivlab/error.hpp"

namespace derivlab {

namespace {

double mean_sq(const Eigen::MatrixXd& m) {
  return m.rowwise().squaredNorm().sum() / static_cast<double>(m.rows());
}

}  // namespace

MetricsReport evaluate(const ProblemSpec& pb, const JetSource& model, const CollocationSet& test) {
  const auto t0 = std::chrono::steady_clock::now();
  test.validate();
  if (test.size() == 0) fail(ErrorKind::EmptyBatch, "test set is empty");
  if (!test.values) fail(ErrorKind::Specification, "test.values is required for evaluation");
  if (test.dim() != pb.dim()) fail(ErrorKind::Shape, "test points do not match the problem dimension");
  for (Eigen::Index r = 0; r < test.size(); ++r)
    for (int a = 0; a < pb.dim(); ++a) {
      const double x = test.points(r, a);
      const Interval& iv = pb.domain[a];
      const double tol = 1e-9 * iv.width();
      if (x < iv.lo - tol || x > iv.hi + tol)
        fail(ErrorKind::Domain, "test point " + std::to_string(r) + " lies outside the problem domain", r);
    }

  MetricsReport rep;
  const int need = test.jacobians ? 1 : 0;
  DerivRequest req = pb.residual_request();
  req.merge(DerivRequest::up_to(need));
  const JetBatch jets = model(test.points, req);
  if (jets.m != pb.outputs) fail(ErrorKind::Shape, "model output count does not match the problem");

  const Eigen::Index n = test.size();
  Eigen::MatrixXd pred(n, pb.outputs);
  for (Eigen::Index p = 0; p < n; ++p)
    for (int k = 0; k < pb.outputs; ++k) pred(p, k) = jets.value(k, p);
  rep.l2_u = mean_sq(pred - *test.values);

  if (test.jacobians) {
    const int kd = test.derivative_count();
    Eigen::MatrixXd dpred(n, pb.outputs * kd);
    for (Eigen::Index p = 0; p < n; ++p)
      for (int k = 0; k < pb.outputs; ++k)
        for (int a = 0; a < kd; ++a) dpred(p, k * kd + a) = jets.d1(k, test.derivative_axes[a], p);
    rep.l2_du = mean_sq(dpred - *test.jacobians);
  }

  const Eigen::MatrixXd res = residuals_from_jets(pb, test.points, jets);
  for (int e = 0; e < pb.residual_dim(); ++e) {
    const double v = res.col(e).squaredNorm() / static_cast<double>(n);
    rep.residual_norms.emplace_back(pb.residual_names[e], v);
    rep.residual += v;
  }

  if (pb.name == ProblemName::Kovasznay) rep.vorticity_err = vorticity_error(model, pb, test.points);
  if (pb.name == ProblemName::Pendulum)
    rep.field_err_t0 = pendulum_field_error_t0(pb, model, pendulum_ic_grid(pb, 21));

  rep.grid = {{"points", n}, {"coords", pb.coords}};
  if (!test.meta.empty()) rep.grid["source"] = test.meta;
  rep.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

MetricsReport evaluate(const ProblemSpec& pb, const Network& net, const CollocationSet& test) {
  MetricsReport rep = evaluate(pb, network_source(net), test);
  if (pb.name == ProblemName::Pendulum) rep.g_residual = mean_sq(pendulum_g_residuals(net, pb, test.points));
  return rep;
}

Eigen::MatrixXd pendulum_ic_grid(const ProblemSpec& pb, int n) {
  if (pb.name != ProblemName::Pendulum) fail(ErrorKind::Capability, "not the pendulum problem");
  if (n < 2) fail(ErrorKind::Configuration, "IC grid needs at least 2 nodes per axis");
  Eigen::MatrixXd pts(n * n, 3);
  const Interval a = pb.domain[1], b = pb.domain[2];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      pts(i * n + j, 0) = 0.0;
      pts(i * n + j, 1) = a.lo + a.width() * i / (n - 1);
      pts(i * n + j, 2) = b.lo + b.width() * j / (n - 1);
    }
  return pts;
}

double pendulum_field_error_t0(const ProblemSpec& pb, const JetSource& model, const Eigen::MatrixXd& ic) {
  if (ic.rows() == 0) fail(ErrorKind::EmptyBatch, "IC grid is empty");
  const JetBatch jets = model(ic, DerivRequest::up_to(2));
  double sum = 0.0;
  for (Eigen::Index p = 0; p < ic.rows(); ++p) {
    const auto f = pendulum_rhs({ic(p, 1), ic(p, 2)}, pb.constants.g_over_l, pb.constants.b_over_m);
    const double e0 = jets.d1(0, 0, p) - f[0];
    const double e1 = jets.d2(0, 0, 0, p) - f[1];
    sum += e0 * e0 + e1 * e1;
  }
  return sum / static_cast<double>(ic.rows());
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["units"] = "mean squared over test points";
  j["l2_u"] = r.l2_u;
  if (r.l2_du) j["l2_du"] = *r.l2_du;
  j["residual"] = r.residual;
  nlohmann::json rn = nlohmann::json::object();
  for (const auto& [name, v] : r.residual_norms) rn[name] = v;
  j["residual_norms"] = rn;
  if (r.vorticity_err) j["vorticity_err"] = *r.vorticity_err;
  if (r.g_residual) j["g_residual"] = *r.g_residual;
  if (r.field_err_t0) j["field_err_t0"] = *r.field_err_t0;
  j["grid"] = r.grid;
  return j;
}

CollocationSet grid_to_set(const GridField& ref, const ProblemSpec& pb) {
  ref.validate();
  if (static_cast<int>(ref.rank()) != pb.dim() || ref.components != pb.outputs)
    fail(ErrorKind::Shape, "reference grid does not match the problem coordinates and outputs");
  CollocationSet s;
  s.region = Region::Interior;
  s.coord_names = pb.coords;
  s.outputs = pb.outputs;
  s.derivative_axes = pb.derivative_axes;
  const auto n = static_cast<Eigen::Index>(ref.point_count());
  s.points.resize(n, pb.dim());
  Eigen::MatrixXd vals(n, pb.outputs);
  for (Eigen::Index p = 0; p < n; ++p) {
    const auto c = ref.coords(static_cast<std::size_t>(p));
    for (int a = 0; a < pb.dim(); ++a) s.points(p, a) = c[a];
    for (int k = 0; k < pb.outputs; ++k) vals(p, k) = ref.data[p * pb.outputs + k];
  }
  s.values = std::move(vals);
  s.time_axis = pb.time_axis;
  return s;
}

GridField error_field(const ProblemSpec& pb, const JetSource& model, const GridField& ref) {
  const CollocationSet s = grid_to_set(ref, pb);
  const JetBatch jets = model(s.points, pb.residual_request());
  const Eigen::MatrixXd res = residuals_from_jets(pb, s.points, jets);
  const int comps = pb.outputs + pb.residual_dim();
  GridField out(ref.axis_names, ref.axes, comps);
  nlohmann::json names = nlohmann::json::array();
  for (int k = 0; k < pb.outputs; ++k) names.push_back("err_u" + std::to_string(k));
  for (const auto& r : pb.residual_names) names.push_back("res_" + r);
  out.meta = {{"components", names}, {"units", "squared error / squared residual"}};
  for (Eigen::Index p = 0; p < s.size(); ++p) {
    for (int k = 0; k < pb.outputs; ++k) {
      const double e = jets.value(k, p) - (*s.values)(p, k);
      out.data[p * comps + k] = e * e;
    }
    for (int e = 0; e < pb.residual_dim(); ++e) out.data[p * comps + pb.outputs + e] = res(p, e) * res(p, e);
  }
  return out;
}

GridField diff_fields(const GridField& a, const GridField& b) {
  a.validate();
  b.validate();
  if (a.axes != b.axes || a.components != b.components)
    fail(ErrorKind::Shape, "error fields differ in grid or components");
  GridField out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] - b.data[i];
  out.meta["difference"] = true;
  return out;
}

}  // namespace derivlab
