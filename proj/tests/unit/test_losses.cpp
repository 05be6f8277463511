#include <cmath>
#include <random>

#include "derivlab/error.hpp"
#include "derivlab/losses.hpp"
#include "derivlab/problems.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace derivlab;

namespace {

std::vector<std::pair<double, double>> box_of(const ProblemSpec& pb) {
  std::vector<std::pair<double, double>> b;
  for (const auto& iv : pb.domain) b.emplace_back(iv.lo, iv.hi);
  return b;
}

// Interior set with closed-form targets for every order.
CollocationSet analytic_set(const ProblemSpec& pb, const Eigen::MatrixXd& pts, Region region = Region::Interior) {
  CollocationSet s;
  s.region = region;
  s.points = pts;
  s.coord_names = pb.coords;
  s.outputs = pb.outputs;
  s.derivative_axes = pb.derivative_axes;
  const int m = pb.outputs, k = static_cast<int>(pb.derivative_axes.size());
  Eigen::MatrixXd v(pts.rows(), m), j(pts.rows(), m * k), h(pts.rows(), m * k * k);
  for (Eigen::Index r = 0; r < pts.rows(); ++r) {
    const Eigen::VectorXd p = pts.row(r).transpose();
    const AnalyticJet a = analytic_jet(pb, {p.data(), static_cast<std::size_t>(p.size())});
    for (int o = 0; o < m; ++o) {
      v(r, o) = a.value[o];
      for (int x = 0; x < k; ++x) {
        j(r, o * k + x) = a.jacobian(o, x);
        for (int y = 0; y < k; ++y) h(r, (o * k + x) * k + y) = a.hessian[static_cast<std::size_t>(o)](x, y);
      }
    }
  }
  s.values = v;
  s.jacobians = j;
  s.hessians = h;
  return s;
}

CollocationSet ac_boundary(const ProblemSpec& pb, std::mt19937_64& rng, int n) {
  Eigen::MatrixXd pts(n, 2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int r = 0; r < n; ++r) {
    const double s = u(rng);
    const int face = r % 4;
    pts(r, 0) = face == 0 ? -1.0 : face == 1 ? 1.0 : s;
    pts(r, 1) = face == 2 ? -1.0 : face == 3 ? 1.0 : s;
  }
  CollocationSet b = analytic_set(pb, pts, Region::Boundary);
  b.jacobians.reset();
  b.hessians.reset();
  return b;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("mse examples") {
    Eigen::MatrixXd a(1, 2), b(1, 2);
    a << 1, 0;
    b << 0, 0;
    CHECK(mse(a, b) == 1.0);
    CHECK(mse(a, a) == 0.0);
    CHECK_THROWS_AS(mse(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 2)), Error);
    try {
      mse(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(0, 2));
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptyBatch);
    }
    CHECK_THROWS_AS(mse(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 3)), Error);
  }

  TEST_CASE("mse agrees with a two-loop sum") {
    for (int trial = 0; trial < 20; ++trial) {
      std::srand(static_cast<unsigned>(trial));
      const Eigen::MatrixXd a = Eigen::MatrixXd::Random(17, 3), b = Eigen::MatrixXd::Random(17, 3);
      CHECK(mse(a, b) == doctest::Approx(oracle::naive_mse(a, b)).epsilon(1e-14));
    }
  }

  TEST_CASE("analytic Allen-Cahn and Kovasznay satisfy their residuals") {
    std::mt19937_64 rng(3);
    for (ProblemName name : {ProblemName::AllenCahn, ProblemName::AllenCahn1P, ProblemName::AllenCahn2P,
                             ProblemName::Kovasznay}) {
      const ProblemSpec pb = make_problem(name);
      const Eigen::MatrixXd pts = oracle::uniform_points(rng, 100, box_of(pb));
      const Eigen::MatrixXd r = pde_residuals(pb, analytic_source(pb), pts);
      CHECK(r.cwiseAbs().maxCoeff() <= 1e-9);
    }
  }

  TEST_CASE("zero network has zero continuity residual") {
    const ProblemSpec pb = make_problem(ProblemName::Continuity);
    const Network net({3, 8, 1});
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd pts = oracle::uniform_points(rng, 50, box_of(pb));
    CHECK(pde_residuals(pb, network_source(net), pts).isZero(0.0));
  }

  TEST_CASE("every supervised method is zero on exact targets") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(4);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 64, box_of(pb)));
    const CollocationSet bc = ac_boundary(pb, rng, 32);
    for (Method m : {Method::DERL, Method::OUTL, Method::OUTL_PINN, Method::SOB, Method::HESL, Method::DER_HESL,
                     Method::SOB_HES, Method::PINN}) {
      LossSpec spec;
      spec.method = m;
      const Objective obj = build_objective(spec, pb, in, &bc, nullptr);
      CHECK(obj.evaluate(analytic_source(pb)).total <= 1e-18);
    }
  }

  TEST_CASE("OUTL never reads jacobians") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(5);
    CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 40, box_of(pb)));
    const Network net = init_network({2, 10, 1}, 1);
    LossSpec spec;
    spec.method = Method::OUTL;
    const double before = composite_loss(spec, pb, in, nullptr, nullptr, net);
    in.jacobians->setRandom();
    in.hessians->setRandom();
    CHECK(composite_loss(spec, pb, in, nullptr, nullptr, net) == before);
  }

  TEST_CASE("DERL ignores value shifts, OUTL does not") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(6);
    CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 40, box_of(pb)));
    const Network net = init_network({2, 10, 1}, 2);
    LossSpec derl, outl;
    outl.method = Method::OUTL;
    const double d0 = composite_loss(derl, pb, in, nullptr, nullptr, net);
    const double o0 = composite_loss(outl, pb, in, nullptr, nullptr, net);
    in.values->array() += 3.0;
    CHECK(composite_loss(derl, pb, in, nullptr, nullptr, net) == d0);
    CHECK(composite_loss(outl, pb, in, nullptr, nullptr, net) != o0);
  }

  TEST_CASE("SOB domain term is OUTL plus DERL") {
    const ProblemSpec pb = make_problem(ProblemName::Kovasznay);
    std::mt19937_64 rng(7);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 30, box_of(pb)));
    const Network net = init_network({2, 12, 3}, 3);
    const auto domain = [&](Method m) {
      LossSpec s;
      s.method = m;
      return build_objective(s, pb, in, nullptr, nullptr).evaluate(net).domain;
    };
    CHECK(domain(Method::SOB) == doctest::Approx(domain(Method::OUTL) + domain(Method::DERL)).epsilon(1e-13));
    CHECK(domain(Method::DER_HESL) == doctest::Approx(domain(Method::DERL) + domain(Method::HESL)).epsilon(1e-13));
    CHECK(domain(Method::SOB_HES) ==
          doctest::Approx(domain(Method::OUTL) + domain(Method::DERL) + domain(Method::HESL)).epsilon(1e-13));
  }

  TEST_CASE("DERL term equals mse of per-point jacobians") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(8);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 25, box_of(pb)));
    const Network net = init_network({2, 10, 10, 1}, 4);
    Eigen::MatrixXd pred(25, 2);
    for (Eigen::Index r = 0; r < 25; ++r) {
      const Eigen::VectorXd p = in.points.row(r).transpose();
      pred.row(r) = input_derivatives(net, {p.data(), 2}, 1).jacobian.row(0);
    }
    LossSpec s;
    CHECK(composite_loss(s, pb, in, nullptr, nullptr, net) ==
          doctest::Approx(oracle::naive_mse(pred, *in.jacobians)).epsilon(1e-12));
  }

  TEST_CASE("composite loss is nonnegative and scales with lambda_D") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(9);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 30, box_of(pb)));
    const CollocationSet bc = ac_boundary(pb, rng, 20);
    std::uniform_real_distribution<double> w(0.0, 3.0);
    for (int trial = 0; trial < 25; ++trial) {
      const Network net = init_network({2, 8, 8, 1}, 50 + static_cast<std::uint64_t>(trial));
      LossSpec s;
      s.method = static_cast<Method>(trial % 8);
      s.lambda_D = w(rng);
      s.lambda_P = w(rng);
      s.lambda_B = w(rng);
      const LossBreakdown a = build_objective(s, pb, in, &bc, nullptr).evaluate(net);
      CHECK(a.total >= 0.0);
      double sum = 0.0;
      for (double t : a.terms) {
        CHECK(t >= 0.0);
        sum += t;
      }
      CHECK(a.total == doctest::Approx(sum).epsilon(1e-14));

      const double c = 1.0 + w(rng);
      LossSpec scaled = s;
      scaled.lambda_D *= c;
      const LossBreakdown b = build_objective(scaled, pb, in, &bc, nullptr).evaluate(net);
      CHECK(b.domain + (s.method == Method::PINN ? b.pde : 0.0) ==
            doctest::Approx(c * (a.domain + (s.method == Method::PINN ? a.pde : 0.0))).epsilon(1e-13));
      CHECK(b.bc == a.bc);
    }
  }

  TEST_CASE("zero weights give a zero loss") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(10);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 30, box_of(pb)));
    const CollocationSet bc = ac_boundary(pb, rng, 20);
    LossSpec s;
    s.method = Method::SOB;
    s.lambda_D = s.lambda_B = 0.0;
    CHECK(build_objective(s, pb, in, &bc, nullptr).evaluate(init_network({2, 8, 1}, 0)).total == 0.0);
  }

  TEST_CASE("PINN loss of the analytic Kovasznay flow") {
    const ProblemSpec pb = make_problem(ProblemName::Kovasznay);
    std::mt19937_64 rng(11);
    CollocationSet in;
    in.points = oracle::uniform_points(rng, 1000, box_of(pb));
    in.coord_names = pb.coords;
    in.outputs = 3;
    in.derivative_axes = pb.derivative_axes;
    LossSpec s;
    s.method = Method::PINN;
    CHECK(build_objective(s, pb, in, nullptr, nullptr).evaluate(analytic_source(pb)).total <= 1e-8);
  }

  TEST_CASE("missing targets name the array") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(12);
    CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 10, box_of(pb)));
    in.jacobians.reset();
    LossSpec s;
    try {
      build_objective(s, pb, in, nullptr, nullptr);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Specification);
      CHECK(std::string(e.what()).find("jacobians") != std::string::npos);
    }
  }

  TEST_CASE("negative or non-finite weights are rejected") {
    LossSpec s;
    s.lambda_B = -1.0;
    CHECK_THROWS_AS(s.validate(), Error);
    s.lambda_B = std::nan("");
    CHECK_THROWS_AS(s.validate(), Error);
  }

  TEST_CASE("time-dependent problems need an initial set") {
    const ProblemSpec pb = make_problem(ProblemName::KdV);
    CollocationSet in;
    in.points = Eigen::MatrixXd::Zero(4, 2);
    in.coord_names = pb.coords;
    in.derivative_axes = pb.derivative_axes;
    LossSpec s;
    s.method = Method::PINN;
    CHECK_THROWS_AS(build_objective(s, pb, in, nullptr, nullptr), Error);
  }

  TEST_CASE("periodic term vanishes for periodic functions") {
    const ProblemSpec pb = make_problem(ProblemName::KdV);
    // u = sin(pi x) has period 2; a one-unit net with tiny weight stays close
    // to linear, so use the analytic identity on a stub instead.
    CollocationSet b;
    b.region = Region::Boundary;
    b.points.resize(3, 2);
    b.points << 0.1, -1.0, 0.5, -1.0, 0.9, -1.0;
    b.coord_names = pb.coords;
    b.derivative_axes = pb.derivative_axes;
    b.periodic = pb.periodic;
    const auto term = periodic_term("bc", Component::Bc, 1.0, b);
    const JetSource periodic = [](const Eigen::MatrixXd& pts, const DerivRequest& req) {
      JetBatch j(ChannelLayout(2, req), pts.rows(), 1);
      for (Eigen::Index p = 0; p < pts.rows(); ++p) {
        j.at(0, 0, p) = std::sin(M_PI * pts(p, 1)) * pts(p, 0);
        if (req.order >= 1) {
          j.at(0, j.layout.first(0), p) = std::sin(M_PI * pts(p, 1));
          j.at(0, j.layout.first(1), p) = M_PI * std::cos(M_PI * pts(p, 1)) * pts(p, 0);
        }
      }
      return j;
    };
    CHECK(term->value(periodic) <= 1e-28);
  }

  TEST_CASE("random-probe Hessian estimate is small on exact targets") {
    const ProblemSpec pb = make_problem(ProblemName::AllenCahn);
    std::mt19937_64 rng(13);
    const CollocationSet in = analytic_set(pb, oracle::uniform_points(rng, 50, box_of(pb)));
    const Network net = init_network({2, 10, 1}, 0);
    // Against the network's own Hessians only the O(eps) bias of the
    // difference quotient remains.
    CollocationSet own = in;
    for (Eigen::Index r = 0; r < in.size(); ++r) {
      const Eigen::VectorXd p = in.points.row(r).transpose();
      const auto d = input_derivatives(net, {p.data(), 2}, 2);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) (*own.hessians)(r, a * 2 + b) = d.hessian[0](a, b);
    }
    const auto probe = probe_hessian_term("probe", Component::Domain, 1.0, own, 8, 1e-4, 0);
    const double v = probe->value(network_source(net));
    CHECK(v >= 0.0);
    CHECK(v <= 1e-6);
  }
}
