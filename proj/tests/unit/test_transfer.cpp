#include <cmath>
#include <random>
#include <set>

#include "derivlab/config.hpp"
#include "derivlab/error.hpp"
#include "derivlab/experiment.hpp"
#include "derivlab/losses.hpp"
#include "derivlab/transfer.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace derivlab;

namespace {

const char* kPlan = R"(
spec_version: 1
name: tiny_transfer
seed: 4
output: unused
problem:
  name: allen_cahn
data:
  n_collocation: 60
  n_boundary: 40
  test_n: 16
model:
  layer_dims: [2, 12, 12, 1]
loss:
  method: PINN
train:
  optimizer: lbfgs
  lbfgs_iters: 8
transfer:
  distill_method: DERL
  stages:
    - id: left
      region: {x: [-1, 0]}
    - id: right
      region: {x: [0, 1]}
)";

LoadOptions no_env() {
  LoadOptions o;
  o.use_environment = false;
  return o;
}

struct Fixture {
  ExperimentConfig cfg;
  ReferenceData ref;
  TransferPlan plan;
  explicit Fixture(const std::string& text = kPlan)
      : cfg(parse_config(text, no_env())), ref(cfg), plan(make_transfer_plan(cfg, ref)) {}
  const ProblemSpec& pb() const { return ref.problem(); }
};

const std::vector<DistillMethod> kDistilling{DistillMethod::DERL, DistillMethod::OUTL,     DistillMethod::SOB,
                                             DistillMethod::HESL, DistillMethod::DER_HESL, DistillMethod::SOB_HES};

}  // namespace

TEST_SUITE("transfer") {
  TEST_CASE("method names") {
    for (DistillMethod m : kDistilling) CHECK(distill_from_string(to_string(m)) == m);
    CHECK(distill_from_string("der+hesl") == DistillMethod::DER_HESL);
    CHECK(distill_from_string("none") == DistillMethod::None);
    CHECK_THROWS_AS(distill_from_string("bogus"), Error);
    CHECK(student_mode_from_string("from_scratch") == StudentMode::FromScratch);
  }

  TEST_CASE("self-distillation is a fixed point for every method") {
    Fixture f;
    const Network teacher = init_network(f.plan.layer_dims, 11);
    TransferPlan plan = f.plan;
    plan.weights.lambda_D = plan.weights.lambda_B = plan.weights.lambda_I = 0.0;
    for (DistillMethod m : kDistilling) {
      plan.distill_method = m;
      const TeacherSnapshot snap =
          snapshot_teacher(teacher, f.pb(), plan.stages[0].interior, distill_targets(m), plan.stages[0].id);
      CHECK(student_loss(plan, 1, teacher, f.pb(), &snap, nullptr) <= 1e-12);

      const Objective obj = build_student_objective(plan, 1, f.pb(), &snap, nullptr);
      TrainConfig lb;
      lb.lbfgs_iters = 20;
      const TrainResult r = train(teacher, obj, lb);
      CHECK(obj.evaluate(r.net).total <= 1e-12);
      TrainConfig adam;
      adam.optimizer = Optimizer::Adam;
      adam.epochs = 1;
      CHECK(obj.evaluate(train(teacher, obj, adam).net).total <= 1e-10);
    }
  }

  TEST_CASE("snapshots are deep copies and match single-point derivatives") {
    Fixture f;
    Network teacher = init_network(f.plan.layer_dims, 12);
    const Eigen::MatrixXd& pts = f.plan.stages[0].interior;
    const TeacherSnapshot snap = snapshot_teacher(teacher, f.pb(), pts, {true, true, true}, "left");
    CHECK(snap.teacher_hash == teacher.hash());
    const Eigen::MatrixXd jac = *snap.set.jacobians, val = *snap.set.values;
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Eigen::VectorXd p = pts.row(r).transpose();
      const auto d = input_derivatives(teacher, {p.data(), 2}, 1);
      CHECK((*snap.set.values)(r, 0) == d.value[0]);
      CHECK((*snap.set.jacobians)(r, 0) == d.jacobian(0, 0));
      CHECK((*snap.set.jacobians)(r, 1) == d.jacobian(0, 1));
    }
    Eigen::VectorXd theta = teacher.parameters();
    theta.setConstant(0.3);
    teacher.set_parameters(theta);
    CHECK(*snap.set.jacobians == jac);
    CHECK(*snap.set.values == val);
    CHECK(snap.set.points == pts);
  }

  TEST_CASE("distillation term with zeroed new-region weights") {
    Fixture f;
    const Network teacher = init_network(f.plan.layer_dims, 13);
    TransferPlan plan = f.plan;
    plan.weights.lambda_D = plan.weights.lambda_B = plan.weights.lambda_I = 0.0;
    const TeacherSnapshot snap = snapshot_teacher(teacher, f.pb(), plan.stages[0].interior, {false, true, false}, "left");
    CHECK(student_loss(plan, 1, teacher, f.pb(), &snap, nullptr) <= 1e-20);
  }

  TEST_CASE("DERL distillation equals an independent jacobian mse") {
    Fixture f;
    const Network teacher = init_network(f.plan.layer_dims, 14), student = init_network(f.plan.layer_dims, 15);
    TransferPlan plan = f.plan;
    plan.weights.lambda_D = plan.weights.lambda_B = plan.weights.lambda_I = 0.0;
    const Eigen::MatrixXd& pts = plan.stages[0].interior;
    const TeacherSnapshot snap = snapshot_teacher(teacher, f.pb(), pts, {false, true, false}, "left");
    Eigen::MatrixXd pred(pts.rows(), 2);
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Eigen::VectorXd p = pts.row(r).transpose();
      pred.row(r) = input_derivatives(student, {p.data(), 2}, 1).jacobian.row(0);
    }
    CHECK(student_loss(plan, 1, student, f.pb(), &snap, nullptr) ==
          doctest::Approx(mse(pred, *snap.set.jacobians)).epsilon(1e-12));
  }

  TEST_CASE("method none ignores the snapshot") {
    Fixture f;
    TransferPlan plan = f.plan;
    plan.distill_method = DistillMethod::None;
    const Network student = init_network(plan.layer_dims, 16);
    TeacherSnapshot a = snapshot_teacher(init_network(plan.layer_dims, 1), f.pb(), plan.stages[0].interior,
                                         {true, true, false}, "left");
    TeacherSnapshot b = a;
    b.set.jacobians->setConstant(42.0);
    b.set.values->setConstant(-7.0);
    CHECK(student_loss(plan, 1, student, f.pb(), &a, nullptr) == student_loss(plan, 1, student, f.pb(), &b, nullptr));
    CHECK(student_loss(plan, 1, student, f.pb(), nullptr, nullptr) ==
          student_loss(plan, 1, student, f.pb(), &a, nullptr));
  }

  TEST_CASE("replay keeps ceil(fraction N) old rows") {
    std::mt19937_64 rng(3);
    for (Eigen::Index n : {1, 5, 10, 1001}) {
      const Eigen::MatrixXd old = oracle::uniform_points(rng, n, {{0, 1}, {0, 1}});
      const Eigen::MatrixXd a = replay_subset(old, 0.2, 9), b = replay_subset(old, 0.2, 9);
      CHECK(a.rows() == static_cast<Eigen::Index>(std::ceil(0.2 * static_cast<double>(n))));
      CHECK(a == b);
      std::set<std::pair<double, double>> pool;
      for (Eigen::Index r = 0; r < n; ++r) pool.insert({old(r, 0), old(r, 1)});
      std::set<std::pair<double, double>> picked;
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        CHECK(pool.count({a(r, 0), a(r, 1)}) == 1);
        picked.insert({a(r, 0), a(r, 1)});
      }
      CHECK(picked.size() == static_cast<std::size_t>(a.rows()));
    }
  }

  TEST_CASE("a single-stage plan is a plain PINN run") {
    Fixture f;
    TransferPlan plan = f.plan;
    plan.stages.resize(1);
    const TransferResult res = run_transfer_pipeline(plan, f.pb());
    REQUIRE(res.stages.size() == 1);

    const TransferStage& s = plan.stages[0];
    CollocationSet interior;
    interior.points = s.interior;
    interior.coord_names = f.pb().coords;
    interior.derivative_axes = f.pb().derivative_axes;
    LossSpec spec = plan.weights;
    spec.method = Method::PINN;
    const TrainResult direct =
        train(init_network(plan.layer_dims, plan.seed), spec, f.pb(), interior, &s.boundary, nullptr, s.train);
    CHECK(res.final_net().parameters() == direct.net.parameters());
  }

  TEST_CASE("stage metrics of earlier stages survive later training") {
    Fixture f;
    std::vector<std::string> hashes;
    const TransferResult res = run_transfer_pipeline(f.plan, f.pb(), [&](std::size_t, const StageResult& s) {
      hashes.push_back(s.net.hash());
    });
    REQUIRE(res.stages.size() == 2);
    CHECK(hashes[0] == res.stages[0].net.hash());
    const StageMetrics again = stage_metrics(f.plan, 0, f.pb(), res.stages[0].net);
    CHECK(again.region_l2_u == res.stages[0].metrics.region_l2_u);
    REQUIRE(res.stages[1].snapshot.has_value());
    CHECK(res.stages[1].snapshot->teacher_hash == res.stages[0].net.hash());
  }

  TEST_CASE("continual students start from the teacher") {
    Fixture f;
    TransferPlan plan = f.plan;
    for (auto& s : plan.stages) s.train.lbfgs_iters = 0;
    const TransferResult res = run_transfer_pipeline(plan, f.pb());
    CHECK(res.stages[1].net.hash() == res.stages[0].net.hash());
    plan.student_mode = StudentMode::FromScratch;
    const TransferResult scratch = run_transfer_pipeline(plan, f.pb());
    CHECK(scratch.stages[1].net.hash() != scratch.stages[0].net.hash());
  }

  TEST_CASE("overlapping regions are rejected") {
    Fixture f;
    TransferPlan plan = f.plan;
    plan.stages[1].region[0] = {-0.5, 1.0};
    CHECK_THROWS_AS(plan.validate(f.pb()), Error);
  }

  TEST_CASE("stage failures carry the stage index") {
    Fixture f;
    TransferPlan plan = f.plan;
    plan.stages[1].train.lr = -1.0;
    try {
      run_transfer_pipeline(plan, f.pb());
      FAIL("expected a stage error");
    } catch (const Error& e) {
      CHECK(e.index() == 1);
      CHECK(std::string(e.what()).find("right") != std::string::npos);
    }
  }

  TEST_CASE("missing snapshot arrays") {
    Fixture f;
    TransferPlan plan = f.plan;
    plan.distill_method = DistillMethod::HESL;
    const TeacherSnapshot snap = snapshot_teacher(init_network(plan.layer_dims, 1), f.pb(), plan.stages[0].interior,
                                                  {false, true, false}, "left");
    try {
      build_student_objective(plan, 1, f.pb(), &snap, nullptr);
      FAIL("expected a specification error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Specification);
    }
  }
}
