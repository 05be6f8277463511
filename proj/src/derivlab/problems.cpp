#include "derivlab/problems.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "derivlab/error.hpp"
#include "derivlab/residuals.hpp"

namespace derivlab {

namespace {

constexpr double kPi = std::numbers::pi;

struct NameEntry {
  ProblemName name;
  const char* text;
};

constexpr NameEntry kNames[] = {
    {ProblemName::AllenCahn, "allen_cahn"},     {ProblemName::AllenCahn1P, "allen_cahn_1p"},
    {ProblemName::AllenCahn2P, "allen_cahn_2p"}, {ProblemName::Continuity, "continuity"},
    {ProblemName::Kovasznay, "kovasznay"},      {ProblemName::Pendulum, "pendulum"},
    {ProblemName::KdV, "kdv"},
};

bool is_allen_cahn(ProblemName n) {
  return n == ProblemName::AllenCahn || n == ProblemName::AllenCahn1P || n == ProblemName::AllenCahn2P;
}

void check_point(const ProblemSpec& pb, std::span<const double> point) {
  if (static_cast<int>(point.size()) != pb.dim())
    fail(ErrorKind::Shape, to_string(pb.name) + " expects points with " + std::to_string(pb.dim()) +
                               " coordinates, got " + std::to_string(point.size()));
}

// Jet of a scalar field over (x, y): value, gradient, hessian.
struct Jet2 {
  double v = 0, x = 0, y = 0, xx = 0, xy = 0, yy = 0;
};

Jet2 ac_jet(const ProblemSpec& pb, std::span<const double> p) {
  const double x = p[0], y = p[1];
  Jet2 j;
  switch (pb.name) {
    case ProblemName::AllenCahn:
    case ProblemName::AllenCahn2P: {
      const int modes = pb.name == ProblemName::AllenCahn ? 1 : 2;
      for (int m = 1; m <= modes; ++m) {
        const double c = pb.name == ProblemName::AllenCahn ? 1.0 : p[1 + m] / (m * m);
        const double w = m * kPi;
        const double sx = std::sin(w * x), cx = std::cos(w * x);
        const double sy = std::sin(w * y), cy = std::cos(w * y);
        j.v += c * sx * sy;
        j.x += c * w * cx * sy;
        j.y += c * w * sx * cy;
        j.xx -= c * w * w * sx * sy;
        j.yy -= c * w * w * sx * sy;
        j.xy += c * w * w * cx * cy;
      }
      return j;
    }
    case ProblemName::AllenCahn1P: {
      const double xi = p[2];
      const double e = std::exp(-xi * (x + 0.7));
      const double sx = std::sin(kPi * x), cx = std::cos(kPi * x);
      const double sy = std::sin(kPi * y), cy = std::cos(kPi * y);
      const double s = sx * sy;
      j.v = e * s;
      j.x = e * (-xi * s + kPi * cx * sy);
      j.y = e * kPi * sx * cy;
      j.xx = e * (xi * xi * s - 2.0 * xi * kPi * cx * sy - kPi * kPi * s);
      j.yy = -kPi * kPi * j.v;
      j.xy = e * (-xi * kPi * sx * cy + kPi * kPi * cx * cy);
      return j;
    }
    default:
      fail(ErrorKind::Capability, "not an Allen-Cahn problem");
  }
}

AnalyticJet kovasznay_jet(const ProblemSpec& pb, std::span<const double> p) {
  const double nu = pb.constants.kovasznay_nu;
  const double lam = kovasznay_lambda(nu);
  const double x = p[0], y = p[1];
  const double e = std::exp(lam * x), e2 = std::exp(2.0 * lam * x);
  const double w = 2.0 * kPi;
  const double c = std::cos(w * y), s = std::sin(w * y);

  AnalyticJet out;
  out.value = Eigen::Vector3d(1.0 - e * c, lam / w * e * s, 0.5 * (1.0 - e2));
  out.jacobian.resize(3, 2);
  out.jacobian << -lam * e * c, w * e * s,
                  lam * lam / w * e * s, lam * e * c,
                  -lam * e2, 0.0;
  out.hessian.assign(3, Eigen::Matrix2d::Zero());
  out.hessian[0] << -lam * lam * e * c, w * lam * e * s,
                    w * lam * e * s, w * w * e * c;
  out.hessian[1] << lam * lam * lam / w * e * s, lam * lam * e * c,
                    lam * lam * e * c, -w * lam * e * s;
  out.hessian[2] << -2.0 * lam * lam * e2, 0.0,
                    0.0, 0.0;
  return out;
}

double gaussian_sum(const ProblemSpec& pb, double x, double y) {
  double rho = 0.0;
  for (const auto& g : pb.continuity_ic) {
    const double r2 = (x - g.cx) * (x - g.cx) + (y - g.cy) * (y - g.cy);
    rho += g.amplitude * std::exp(-r2 / (2.0 * g.sigma * g.sigma));
  }
  return rho;
}

struct PointAccess {
  const InputDerivatives& j;
  int third_axis;
  double value(int k) const { return j.value[k]; }
  double d1(int k, int i) const { return j.jacobian(k, i); }
  double d2(int k, int a, int b) const {
    if (j.hessian.empty()) fail(ErrorKind::Capability, "hessian not available");
    return j.hessian[k](a, b);
  }
  double d3axis(int k, int axis) const {
    if (!j.third || axis != third_axis) fail(ErrorKind::Capability, "third derivative along axis not available");
    return (*j.third)[k];
  }
};

}  // namespace

std::string to_string(ProblemName name) {
  for (const auto& e : kNames)
    if (e.name == name) return e.text;
  return "unknown";
}

ProblemName problem_from_string(const std::string& name) {
  for (const auto& e : kNames)
    if (name == e.text) return e.name;
  fail(ErrorKind::Configuration, "unknown problem '" + name + "'");
}

int ProblemSpec::axis(const std::string& coord) const {
  for (int i = 0; i < dim(); ++i)
    if (coords[i] == coord) return i;
  fail(ErrorKind::Axis, "problem " + to_string(name) + " has no coordinate '" + coord + "'");
}

DerivRequest ProblemSpec::residual_request() const {
  if (residual_order <= 2) return DerivRequest::up_to(residual_order);
  // Third order is only ever needed along the KdV spatial axis.
  return DerivRequest::with_third_axis(dim(), axis("x"));
}

void ProblemSpec::validate() const {
  require(!coords.empty() && coords.size() == domain.size(), ErrorKind::Configuration,
          "problem coordinates and domain disagree");
  for (std::size_t i = 0; i < domain.size(); ++i)
    require(domain[i].lo < domain[i].hi, ErrorKind::Configuration,
            "domain bounds for '" + coords[i] + "' must satisfy lower < upper");
  require(residual_order >= 1 && residual_order <= 3, ErrorKind::Configuration, "residual_order must be in 1..3");
  require(outputs >= 1, ErrorKind::Configuration, "problem must have at least one output");
}

nlohmann::json ProblemSpec::manifest() const {
  nlohmann::json j;
  j["name"] = to_string(name);
  j["coords"] = coords;
  nlohmann::json dom = nlohmann::json::array();
  for (const auto& iv : domain) dom.push_back({iv.lo, iv.hi});
  j["domain"] = dom;
  j["time_axis"] = time_axis;
  j["derivative_axes"] = derivative_axes;
  j["parameter_axes"] = parameter_axes;
  j["outputs"] = outputs;
  j["residuals"] = residual_names;
  j["residual_order"] = residual_order;
  j["reference"] = reference == ReferenceKind::Analytic ? "analytic" : "solver";
  nlohmann::json c;
  switch (name) {
    case ProblemName::AllenCahn:
    case ProblemName::AllenCahn1P:
    case ProblemName::AllenCahn2P: c["lambda"] = constants.ac_lambda; break;
    case ProblemName::Kovasznay:
      c["nu"] = constants.kovasznay_nu;
      c["lambda"] = kovasznay_lambda(constants.kovasznay_nu);
      break;
    case ProblemName::KdV: c["nu"] = constants.kdv_nu; break;
    case ProblemName::Pendulum:
      c["g_over_l"] = constants.g_over_l;
      c["b_over_m"] = constants.b_over_m;
      c["T"] = constants.pendulum_T;
      break;
    case ProblemName::Continuity: c["velocity"] = "(-y, x)"; break;
  }
  j["constants"] = c;
  if (!continuity_ic.empty()) {
    nlohmann::json ic = nlohmann::json::array();
    for (const auto& g : continuity_ic)
      ic.push_back({{"center", {g.cx, g.cy}}, {"sigma", g.sigma}, {"amplitude", g.amplitude}});
    j["initial_condition"] = {{"kind", "gaussian_sum"}, {"bumps", ic}};
  }
  if (periodic) j["periodic"] = {{"axis", periodic->axis}, {"period", periodic->period}};
  return j;
}

ProblemSpec make_problem(ProblemName name, const ProblemConstants& constants) {
  ProblemSpec pb;
  pb.name = name;
  pb.constants = constants;
  switch (name) {
    case ProblemName::AllenCahn:
      pb.coords = {"x", "y"};
      pb.domain = {{-1, 1}, {-1, 1}};
      pb.derivative_axes = {0, 1};
      pb.residual_names = {"allen_cahn"};
      break;
    case ProblemName::AllenCahn1P:
      pb.coords = {"x", "y", "xi"};
      pb.domain = {{-1, 1}, {-1, 1}, {0, kPi}};
      pb.derivative_axes = {0, 1};
      pb.parameter_axes = {2};
      pb.residual_names = {"allen_cahn"};
      break;
    case ProblemName::AllenCahn2P:
      pb.coords = {"x", "y", "xi1", "xi2"};
      pb.domain = {{-1, 1}, {-1, 1}, {0, 1}, {0, 1}};
      pb.derivative_axes = {0, 1};
      pb.parameter_axes = {2, 3};
      pb.residual_names = {"allen_cahn"};
      break;
    case ProblemName::Continuity:
      pb.coords = {"t", "x", "y"};
      pb.domain = {{0, 10}, {-1.5, 1.5}, {-1.5, 1.5}};
      pb.time_axis = 0;
      pb.derivative_axes = {0, 1, 2};
      pb.residual_names = {"continuity"};
      pb.residual_order = 1;
      pb.reference = ReferenceKind::Solver;
      for (double cx : {-0.6, 0.6})
        for (double cy : {-0.6, 0.6}) pb.continuity_ic.push_back({cx, cy, 0.2, 1.0});
      break;
    case ProblemName::Kovasznay:
      pb.coords = {"x", "y"};
      pb.domain = {{-1, 1}, {-0.5, 1.5}};
      pb.derivative_axes = {0, 1};
      pb.outputs = 3;
      pb.residual_names = {"momentum_x", "momentum_y", "divergence"};
      break;
    case ProblemName::Pendulum:
      pb.coords = {"t", "u0", "v0"};
      pb.domain = {{0, constants.pendulum_T}, {-kPi / 2, kPi / 2}, {-1.5, 1.5}};
      pb.time_axis = 0;
      pb.derivative_axes = {0};
      pb.parameter_axes = {1, 2};
      pb.residual_names = {"pendulum"};
      pb.reference = ReferenceKind::Solver;
      break;
    case ProblemName::KdV:
      pb.coords = {"t", "x"};
      pb.domain = {{0, 1}, {-1, 1}};
      pb.time_axis = 0;
      pb.derivative_axes = {0, 1};
      pb.residual_names = {"kdv"};
      pb.residual_order = 3;
      pb.reference = ReferenceKind::Solver;
      pb.periodic = PeriodicPairing{1, 2.0};
      break;
  }
  pb.validate();
  return pb;
}

double kovasznay_lambda(double nu) {
  return 1.0 / (2.0 * nu) - std::sqrt(1.0 / (4.0 * nu * nu) + 4.0 * kPi * kPi);
}

AnalyticJet analytic_jet(const ProblemSpec& pb, std::span<const double> point) {
  check_point(pb, point);
  if (pb.reference != ReferenceKind::Analytic)
    fail(ErrorKind::Capability, to_string(pb.name) + " has no closed-form solution");
  if (pb.name == ProblemName::Kovasznay) return kovasznay_jet(pb, point);
  const Jet2 j = ac_jet(pb, point);
  AnalyticJet out;
  out.value = Eigen::VectorXd::Constant(1, j.v);
  out.jacobian.resize(1, 2);
  out.jacobian << j.x, j.y;
  Eigen::Matrix2d h;
  h << j.xx, j.xy, j.xy, j.yy;
  out.hessian = {h};
  return out;
}

Eigen::VectorXd analytic_solution(const ProblemSpec& pb, std::span<const double> point) {
  return analytic_jet(pb, point).value;
}

double forcing(const ProblemSpec& pb, std::span<const double> point) {
  if (!is_allen_cahn(pb.name)) fail(ErrorKind::Capability, "forcing is defined for Allen-Cahn problems only");
  check_point(pb, point);
  const Jet2 j = ac_jet(pb, point);
  return pb.constants.ac_lambda * (j.xx + j.yy) + j.v * (j.v * j.v - 1.0);
}

Eigen::VectorXd initial_value(const ProblemSpec& pb, std::span<const double> point) {
  check_point(pb, point);
  switch (pb.name) {
    case ProblemName::Continuity: return Eigen::VectorXd::Constant(1, gaussian_sum(pb, point[1], point[2]));
    case ProblemName::Pendulum: return Eigen::VectorXd::Constant(1, point[1]);
    case ProblemName::KdV: return Eigen::VectorXd::Constant(1, std::cos(kPi * point[1]));
    default: fail(ErrorKind::Capability, to_string(pb.name) + " is time independent");
  }
}

Eigen::VectorXd boundary_value(const ProblemSpec& pb, std::span<const double> point) {
  check_point(pb, point);
  if (pb.name == ProblemName::Continuity) return Eigen::VectorXd::Zero(1);
  if (pb.reference == ReferenceKind::Analytic) {
    // sin(k pi) is not exactly zero in floating point; the AC boundary is.
    if (is_allen_cahn(pb.name)) {
      for (int a = 0; a < 2; ++a)
        if (std::abs(point[a]) == 1.0) return Eigen::VectorXd::Zero(1);
    }
    return analytic_solution(pb, point);
  }
  fail(ErrorKind::Capability, to_string(pb.name) + " has no fixed-value boundary condition");
}

std::array<double, 2> pendulum_rhs(std::array<double, 2> state, double g_over_l, double b_over_m) {
  return {state[1], -g_over_l * std::sin(state[0]) - b_over_m * state[1]};
}

double pendulum_g_operator(const ProblemSpec& pb, double u, double u_a, double u_ta, double u_tta) {
  return u_tta + pb.constants.g_over_l * std::cos(u) * u_a + pb.constants.b_over_m * u_ta;
}

Eigen::MatrixXd pendulum_g_residuals(const Network& net, const ProblemSpec& pb, const Eigen::MatrixXd& points) {
  if (pb.name != ProblemName::Pendulum) fail(ErrorKind::Capability, "G residual is defined for the pendulum only");
  if (net.input_dim() != 3 || net.output_dim() != 1)
    fail(ErrorKind::Shape, "pendulum network must map (t, u0, v0) to u");
  // Directions t+a, t-a, a for a in {u0, v0}.
  DerivRequest req = DerivRequest::up_to(2);
  const Eigen::Vector3d et = Eigen::Vector3d::Unit(0);
  for (int a = 1; a <= 2; ++a) {
    const Eigen::Vector3d ea = Eigen::Vector3d::Unit(a);
    req.third_directions.push_back(et + ea);
    req.third_directions.push_back(et - ea);
    req.third_directions.push_back(ea);
  }
  const JetBatch jets = forward_jets(net, points, req);
  Eigen::MatrixXd out(points.rows(), 2);
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    const double u = jets.value(0, p);
    for (int a = 1; a <= 2; ++a) {
      const int q = 3 * (a - 1);
      const double u_tta = (jets.d3(0, q, p) - jets.d3(0, q + 1, p) - 2.0 * jets.d3(0, q + 2, p)) / 6.0;
      out(p, a - 1) = pendulum_g_operator(pb, u, jets.d1(0, a, p), jets.d2(0, 0, a, p), u_tta);
    }
  }
  return out;
}

Eigen::Vector2d pendulum_g_residual(const Network& net, const ProblemSpec& pb, std::span<const double> point) {
  check_point(pb, point);
  Eigen::MatrixXd p(1, 3);
  p << point[0], point[1], point[2];
  return pendulum_g_residuals(net, pb, p).row(0).transpose();
}

double kovasznay_vorticity(const ProblemSpec& pb, std::span<const double> point) {
  check_point(pb, point);
  const double nu = pb.constants.kovasznay_nu;
  const double lam = kovasznay_lambda(nu);
  return lam / nu * std::exp(lam * point[0]) * std::sin(2.0 * kPi * point[1]) / (2.0 * kPi);
}

double vorticity_error(const JetSource& model, const ProblemSpec& pb, const Eigen::MatrixXd& points) {
  if (pb.name != ProblemName::Kovasznay) fail(ErrorKind::Capability, "vorticity is defined for Kovasznay only");
  if (points.rows() == 0) fail(ErrorKind::EmptyBatch, "vorticity grid is empty");
  if (points.cols() != 2) fail(ErrorKind::Shape, "vorticity grid must be n x 2");
  const JetBatch jets = model(points, DerivRequest::up_to(1));
  if (jets.m < 2) fail(ErrorKind::Shape, "vorticity needs velocity outputs (u, v)");
  double sum = 0.0;
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    const double row[2] = {points(p, 0), points(p, 1)};
    const double diff = jets.d1(1, 0, p) - jets.d1(0, 1, p) - kovasznay_vorticity(pb, row);
    sum += diff * diff;
  }
  return sum / static_cast<double>(points.rows());
}

JetBatch analytic_jets(const ProblemSpec& pb, const Eigen::MatrixXd& points, const DerivRequest& request) {
  if (!request.third_directions.empty())
    fail(ErrorKind::Capability, "closed-form jets stop at second order");
  const int d = pb.dim();
  if (points.cols() != d) fail(ErrorKind::Shape, "points have the wrong number of coordinates");
  ChannelLayout layout(d, request);
  JetBatch jets(layout, points.rows(), pb.outputs);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> slot(d, -1);
  for (std::size_t a = 0; a < pb.derivative_axes.size(); ++a) slot[pb.derivative_axes[a]] = static_cast<int>(a);
  std::vector<double> row(d);
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    for (int i = 0; i < d; ++i) row[i] = points(p, i);
    const AnalyticJet j = analytic_jet(pb, row);
    for (int k = 0; k < pb.outputs; ++k) {
      jets.at(k, 0, p) = j.value[k];
      if (layout.order() >= 1)
        for (int i = 0; i < d; ++i) jets.at(k, layout.first(i), p) = slot[i] < 0 ? nan : j.jacobian(k, slot[i]);
      if (layout.order() >= 2)
        for (int i = 0; i < d; ++i)
          for (int l = i; l < d; ++l)
            jets.at(k, layout.pair(i, l), p) =
                slot[i] < 0 || slot[l] < 0 ? nan : j.hessian[k](slot[i], slot[l]);
    }
  }
  return jets;
}

JetSource network_source(const Network& net) {
  return [&net](const Eigen::MatrixXd& points, const DerivRequest& request) {
    return forward_jets(net, points, request);
  };
}

JetSource analytic_source(const ProblemSpec& pb) {
  return [pb](const Eigen::MatrixXd& points, const DerivRequest& request) {
    return analytic_jets(pb, points, request);
  };
}

Eigen::MatrixXd residuals_from_jets(const ProblemSpec& pb, const Eigen::MatrixXd& points, const JetBatch& jets) {
  const std::vector<int> third = residual::third_axis_table(jets.layout);
  Eigen::MatrixXd out(points.rows(), pb.residual_dim());
  std::vector<double> row(pb.dim());
  std::vector<double> f(pb.residual_dim());
  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    for (int i = 0; i < pb.dim(); ++i) row[i] = points(p, i);
    residual::BatchPoint access(jets, p, third.data());
    residual::evaluate(pb, row.data(), access, f.data());
    for (int r = 0; r < pb.residual_dim(); ++r) out(p, r) = f[r];
  }
  return out;
}

Eigen::VectorXd pde_residual(const ProblemSpec& pb, const Network& net, std::span<const double> point) {
  check_point(pb, point);
  if (net.input_dim() != pb.dim() || net.output_dim() != pb.outputs)
    fail(ErrorKind::Shape, "network shape does not match problem " + to_string(pb.name));
  const int order = std::min(pb.residual_order, 2);
  std::optional<int> third;
  if (pb.residual_order >= 3) third = pb.axis("x");
  const InputDerivatives jd = input_derivatives(net, point, order, third);
  Eigen::VectorXd out(pb.residual_dim());
  residual::evaluate(pb, point.data(), PointAccess{jd, third.value_or(-1)}, out.data());
  return out;
}

Eigen::MatrixXd pde_residuals(const ProblemSpec& pb, const JetSource& model, const Eigen::MatrixXd& points) {
  if (points.cols() != pb.dim()) fail(ErrorKind::Shape, "points have the wrong number of coordinates");
  const JetBatch jets = model(points, pb.residual_request());
  if (jets.m != pb.outputs) fail(ErrorKind::Shape, "model output count does not match problem");
  return residuals_from_jets(pb, points, jets);
}

namespace residual {

std::vector<int> third_axis_table(const ChannelLayout& layout) {
  const int d = layout.input_dim();
  std::vector<int> table(d, -1);
  for (int q = 0; q < layout.third_count(); ++q) {
    const Eigen::VectorXd& v = layout.direction(q);
    for (int a = 0; a < d; ++a)
      if (table[a] < 0 && v == Eigen::VectorXd::Unit(d, a)) table[a] = q;
  }
  return table;
}

}  // namespace residual

}  // namespace derivlab
