#include "derivlab/transfer.hpp"

#include <cctype>
#include <cmath>

#include "derivlab/error.hpp"

namespace derivlab {

namespace {

struct DistillName {
  DistillMethod method;
  const char* text;
};

constexpr DistillName kDistill[] = {
    {DistillMethod::DERL, "DERL"}, {DistillMethod::OUTL, "OUTL"},         {DistillMethod::SOB, "SOB"},
    {DistillMethod::HESL, "HESL"}, {DistillMethod::DER_HESL, "DER_HESL"}, {DistillMethod::SOB_HES, "SOB_HES"},
    {DistillMethod::None, "none"}, {DistillMethod::Replay, "replay"},
};

Eigen::MatrixXd stack_rows(const std::vector<const Eigen::MatrixXd*>& parts) {
  Eigen::Index rows = 0, cols = parts.empty() ? 0 : parts.front()->cols();
  for (const auto* p : parts) rows += p->rows();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.middleRows(at, p->rows()) = *p;
    at += p->rows();
  }
  return out;
}

Eigen::MatrixXd old_points(const TransferPlan& plan, std::size_t stage) {
  std::vector<const Eigen::MatrixXd*> parts;
  for (std::size_t j = 0; j < stage; ++j) parts.push_back(&plan.stages[j].interior);
  return stack_rows(parts);
}

double l2_u_of(const ProblemSpec& pb, const Network& net, const CollocationSet& test) {
  return evaluate(pb, network_source(net), test).l2_u;
}

}  // namespace

std::string to_string(DistillMethod m) {
  for (const auto& e : kDistill)
    if (e.method == m) return e.text;
  return "unknown";
}

DistillMethod distill_from_string(const std::string& name) {
  for (const auto& e : kDistill) {
    std::string a = e.text, b = name;
    for (auto& c : a) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (auto& c : b) c = c == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (a == b) return e.method;
  }
  fail(ErrorKind::Configuration, "unknown distillation method '" + name + "'");
}

std::string to_string(StudentMode mode) { return mode == StudentMode::Continual ? "continual" : "from_scratch"; }

StudentMode student_mode_from_string(const std::string& name) {
  if (name == "continual") return StudentMode::Continual;
  if (name == "from_scratch") return StudentMode::FromScratch;
  fail(ErrorKind::Configuration, "unknown student mode '" + name + "' (from_scratch | continual)");
}

TargetOrders distill_targets(DistillMethod m) {
  switch (m) {
    case DistillMethod::DERL: return {false, true, false};
    case DistillMethod::OUTL: return {true, false, false};
    case DistillMethod::SOB: return {true, true, false};
    case DistillMethod::HESL: return {false, false, true};
    case DistillMethod::DER_HESL: return {false, true, true};
    case DistillMethod::SOB_HES: return {true, true, true};
    case DistillMethod::None:
    case DistillMethod::Replay: return {};
  }
  return {};
}

TeacherSnapshot snapshot_teacher(const Network& teacher, const ProblemSpec& pb, const Eigen::MatrixXd& points,
                                 TargetOrders orders, std::string stage_id) {
  if (stage_id.empty()) fail(ErrorKind::Configuration, "snapshot needs a stage id");
  if (points.cols() != pb.dim() || teacher.input_dim() != pb.dim() || teacher.output_dim() != pb.outputs)
    fail(ErrorKind::Shape, "teacher, points and problem disagree in shape");
  TeacherSnapshot s;
  s.orders = orders;
  s.stage_id = std::move(stage_id);
  s.teacher_hash = teacher.hash();
  CollocationSet& c = s.set;
  c.region = Region::Interior;
  c.points = points;
  c.coord_names = pb.coords;
  c.outputs = pb.outputs;
  c.derivative_axes = pb.derivative_axes;
  c.time_axis = pb.time_axis;
  const Eigen::Index n = points.rows();
  const int m = pb.outputs, k = static_cast<int>(pb.derivative_axes.size());
  if (orders.values) c.values = Eigen::MatrixXd(n, m);
  if (orders.jacobians) c.jacobians = Eigen::MatrixXd(n, m * k);
  if (orders.hessians) c.hessians = Eigen::MatrixXd(n, m * k * k);
  std::vector<double> x(pb.dim());
  for (Eigen::Index p = 0; p < n; ++p) {
    for (int a = 0; a < pb.dim(); ++a) x[a] = points(p, a);
    const InputDerivatives d = input_derivatives(teacher, x, orders.max_order());
    for (int o = 0; o < m; ++o) {
      if (orders.values) (*c.values)(p, o) = d.value[o];
      for (int a = 0; a < k; ++a) {
        const int ia = pb.derivative_axes[a];
        if (orders.jacobians) (*c.jacobians)(p, o * k + a) = d.jacobian(o, ia);
        if (orders.hessians)
          for (int b = 0; b < k; ++b)
            (*c.hessians)(p, (o * k + a) * k + b) = d.hessian[o](ia, pb.derivative_axes[b]);
      }
    }
  }
  c.meta = {{"teacher_stage", s.stage_id}, {"teacher_hash", s.teacher_hash}};
  return s;
}

void TransferPlan::validate(const ProblemSpec& pb) const {
  require(!stages.empty(), ErrorKind::Configuration, "transfer plan has no stages");
  require(stages.size() <= 3, ErrorKind::Configuration, "transfer plans support at most 3 stages");
  require(replay_fraction > 0.0 && replay_fraction <= 1.0, ErrorKind::Configuration,
          "replay_fraction must be in (0, 1]");
  require(distill_weight >= 0.0 && std::isfinite(distill_weight), ErrorKind::Configuration,
          "distill_weight must be finite and nonnegative");
  weights.validate();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "transfer.stages[" + std::to_string(i) + "]";
    require(static_cast<int>(s.region.size()) == pb.dim(), ErrorKind::Configuration,
            where + ".region must give bounds for every coordinate");
    require(s.interior.rows() > 0 && s.interior.cols() == pb.dim(), ErrorKind::Configuration,
            where + " needs interior points");
    for (Eigen::Index r = 0; r < s.interior.rows(); ++r)
      for (int a = 0; a < pb.dim(); ++a)
        require(s.region[a].contains(s.interior(r, a)), ErrorKind::Configuration,
                where + " has an interior point outside its region");
    for (std::size_t j = 0; j < i; ++j) {
      bool disjoint = false;
      for (int a = 0; a < pb.dim(); ++a) {
        const double lo = std::max(s.region[a].lo, stages[j].region[a].lo);
        const double hi = std::min(s.region[a].hi, stages[j].region[a].hi);
        disjoint = disjoint || hi <= lo;
      }
      require(disjoint, ErrorKind::Configuration,
              where + ".region overlaps stage " + std::to_string(j) + " (regions must partition the domain)");
    }
  }
}

Eigen::MatrixXd replay_subset(const Eigen::MatrixXd& pts, double fraction, std::uint64_t seed) {
  if (pts.rows() == 0) fail(ErrorKind::EmptyBatch, "no old points to replay");
  const auto keep = static_cast<Eigen::Index>(std::ceil(fraction * static_cast<double>(pts.rows()) - 1e-12));
  const auto perm = epoch_permutation(pts.rows(), seed, 0x5245504c4159ULL, 0);
  Eigen::MatrixXd out(keep, pts.cols());
  for (Eigen::Index i = 0; i < keep; ++i) out.row(i) = pts.row(perm[i]);
  return out;
}

Objective build_student_objective(const TransferPlan& plan, std::size_t stage, const ProblemSpec& pb,
                                  const TeacherSnapshot* snapshot, const Eigen::MatrixXd* replay) {
  const TransferStage& s = plan.stages.at(stage);
  const LossSpec& w = plan.weights;
  Objective obj;
  obj.add(residual_term(s.id + ".residual", Component::Pde, w.lambda_D, pb, s.interior));
  if (s.boundary.size() > 0) {
    if (s.boundary.periodic)
      obj.add(periodic_term(s.id + ".boundary", Component::Bc, w.lambda_B, s.boundary));
    else
      obj.add(supervised_term(s.id + ".boundary", Component::Bc, w.lambda_B, s.boundary, {true, false, false}));
  }
  if (s.initial && s.initial->size() > 0)
    obj.add(supervised_term(s.id + ".initial", Component::Ic, w.lambda_I, *s.initial,
                            {true, s.initial->jacobians.has_value(), false}));
  if (stage == 0) return obj;

  const DistillMethod m = plan.distill_method;
  if (m == DistillMethod::Replay) {
    if (!replay) fail(ErrorKind::Specification, "replay stage needs replay points");
    obj.add(residual_term(s.id + ".replay", Component::Domain, w.lambda_D, pb, *replay));
  } else if (m != DistillMethod::None) {
    if (!snapshot) fail(ErrorKind::Specification, "distillation stage needs a teacher snapshot");
    const TargetOrders need = distill_targets(m);
    check_targets(snapshot->set, need, "snapshot");
    obj.add(supervised_term(s.id + ".distill", Component::Domain, plan.distill_weight, snapshot->set, need));
  }
  return obj;
}

double student_loss(const TransferPlan& plan, std::size_t stage, const Network& student, const ProblemSpec& pb,
                    const TeacherSnapshot* snapshot, const Eigen::MatrixXd* replay) {
  return build_student_objective(plan, stage, pb, snapshot, replay).evaluate(student).total;
}

StageMetrics stage_metrics(const TransferPlan& plan, std::size_t upto, const ProblemSpec& pb, const Network& net) {
  StageMetrics m;
  std::vector<const CollocationSet*> cum, all;
  double cum_sum = 0.0;
  Eigen::Index cum_n = 0;
  for (std::size_t j = 0; j < plan.stages.size(); ++j) {
    const CollocationSet& t = plan.stages[j].test;
    const double e = l2_u_of(pb, net, t);
    m.region_l2_u.push_back(e);
    all.push_back(&t);
    if (j <= upto) {
      cum.push_back(&t);
      cum_sum += e * static_cast<double>(t.size());
      cum_n += t.size();
    }
  }
  m.cumulative_l2_u = cum_sum / static_cast<double>(cum_n);
  m.full = evaluate(pb, net, concatenate(all));
  return m;
}

TransferResult run_transfer_pipeline(const TransferPlan& plan, const ProblemSpec& pb, const StageCallback& on_stage,
                                     const StageResult* first) {
  plan.validate(pb);
  TransferResult result;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const TransferStage& s = plan.stages[i];
    if (i == 0 && first) {
      if (first->id != s.id) fail(ErrorKind::Configuration, "reused first stage does not match the plan");
      result.stages.push_back(*first);
      if (on_stage) on_stage(0, result.stages.back());
      continue;
    }
    try {
      Network student = (i > 0 && plan.student_mode == StudentMode::Continual)
                            ? result.stages.back().net
                            : init_network(plan.layer_dims, plan.seed + i);
      if (student.input_dim() != pb.dim() || student.output_dim() != pb.outputs)
        fail(ErrorKind::Configuration, "layer_dims do not match the problem's inputs and outputs");
      StageResult sr{s.id, student, std::nullopt, {}, {}, {}};
      if (i > 0) {
        const Eigen::MatrixXd old = old_points(plan, i);
        const TargetOrders need = distill_targets(plan.distill_method);
        if (need.any())
          sr.snapshot = snapshot_teacher(result.stages.back().net, pb, old, need, result.stages.back().id);
        if (plan.distill_method == DistillMethod::Replay)
          sr.replay_points = replay_subset(old, plan.replay_fraction, plan.seed + i);
      }
      const Objective obj = build_student_objective(plan, i, pb, sr.snapshot ? &*sr.snapshot : nullptr,
                                                    sr.replay_points.rows() > 0 ? &sr.replay_points : nullptr);
      TrainResult tr = train(student, obj, s.train);
      sr.net = std::move(tr.net);
      sr.history = std::move(tr.history);
      sr.metrics = stage_metrics(plan, i, pb, sr.net);
      result.stages.push_back(std::move(sr));
      if (on_stage) on_stage(i, result.stages.back());
    } catch (const Error& e) {
      fail(e.kind(), "stage " + s.id + ": " + e.what(), static_cast<std::int64_t>(i));
    }
  }
  return result;
}

StageResult run_pinn_full(const TransferPlan& plan, const ProblemSpec& pb) {
  plan.validate(pb);
  std::vector<const Eigen::MatrixXd*> parts;
  TrainConfig cfg = plan.stages.front().train;
  cfg.steps = 0;
  cfg.epochs = 0;
  cfg.lbfgs_iters = 0;
  const CollocationSet* initial = nullptr;
  for (const auto& s : plan.stages) {
    parts.push_back(&s.interior);
    cfg.steps += s.train.steps;
    cfg.epochs += s.train.epochs;
    cfg.lbfgs_iters += s.train.lbfgs_iters;
    if (s.initial && s.initial->size() > 0) initial = &*s.initial;
  }
  TransferPlan full = plan;
  full.stages.resize(1);
  TransferStage& s = full.stages.front();
  s.id = "pinn_full";
  s.interior = stack_rows(parts);
  s.boundary = plan.stages.back().boundary;
  if (initial) s.initial = *initial;
  for (int a = 0; a < pb.dim(); ++a) s.region[a] = pb.domain[a];
  s.train = cfg;

  const Network net0 = init_network(plan.layer_dims, plan.seed);
  const Objective obj = build_student_objective(full, 0, pb, nullptr, nullptr);
  TrainResult tr = train(net0, obj, cfg);
  StageResult sr{"pinn_full", std::move(tr.net), std::nullopt, {}, std::move(tr.history), {}};
  sr.metrics = stage_metrics(plan, plan.stages.size() - 1, pb, sr.net);
  return sr;
}

}  // namespace derivlab
