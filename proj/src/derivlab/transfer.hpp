#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "derivlab/collocation.hpp"
#include "derivlab/eval.hpp"
#include "derivlab/losses.hpp"
#include "derivlab/network.hpp"
#include "derivlab/problems.hpp"
#include "derivlab/train.hpp"

namespace derivlab {

enum class DistillMethod { DERL, OUTL, SOB, HESL, DER_HESL, SOB_HES, None, Replay };
enum class StudentMode { FromScratch, Continual };

std::string to_string(DistillMethod method);
DistillMethod distill_from_string(const std::string& name);
std::string to_string(StudentMode mode);
StudentMode student_mode_from_string(const std::string& name);

// Snapshot arrays each method distills (None/Replay: nothing).
TargetOrders distill_targets(DistillMethod method);

// Frozen teacher evaluations on fixed points. Each row is computed through
// input_derivatives, so it matches a fresh single-point call bitwise.
struct TeacherSnapshot {
  CollocationSet set;
  TargetOrders orders;
  std::string stage_id;
  std::string teacher_hash;
};

TeacherSnapshot snapshot_teacher(const Network& teacher, const ProblemSpec& problem, const Eigen::MatrixXd& points,
                                 TargetOrders orders, std::string stage_id);

// Data and budget for one stage. `region` is the stage's box in problem
// coordinates; `interior` holds its PINN collocation points. `boundary`
// covers the cumulative region up to this stage.
struct TransferStage {
  std::string id;
  std::vector<Interval> region;
  Eigen::MatrixXd interior;
  CollocationSet boundary;
  std::optional<CollocationSet> initial;
  CollocationSet test;  // reference values inside `region`
  TrainConfig train;
};

struct TransferPlan {
  std::vector<TransferStage> stages;
  StudentMode student_mode = StudentMode::Continual;
  DistillMethod distill_method = DistillMethod::DERL;
  double replay_fraction = 0.2;
  double distill_weight = 1.0;
  LossSpec weights;  // lambda_D: PDE residual, lambda_B, lambda_I
  std::vector<int> layer_dims;
  std::uint64_t seed = 0;

  // Stage regions must not overlap (shared faces allowed) and every stage
  // needs interior points inside its region.
  void validate(const ProblemSpec& problem) const;
};

struct StageMetrics {
  std::vector<double> region_l2_u;  // per stage region seen so far and beyond
  double cumulative_l2_u = 0.0;
  MetricsReport full;
};

struct StageResult {
  std::string id;
  Network net;
  std::optional<TeacherSnapshot> snapshot;  // distillation source used by this stage
  Eigen::MatrixXd replay_points;
  std::vector<HistoryRow> history;
  StageMetrics metrics;
};

struct TransferResult {
  std::vector<StageResult> stages;
  const Network& final_net() const { return stages.back().net; }
};

// PINN residual on the new region + BC + IC + distillation (or replay).
Objective build_student_objective(const TransferPlan& plan, std::size_t stage, const ProblemSpec& problem,
                                  const TeacherSnapshot* snapshot, const Eigen::MatrixXd* replay_points);

double student_loss(const TransferPlan& plan, std::size_t stage, const Network& student, const ProblemSpec& problem,
                    const TeacherSnapshot* snapshot, const Eigen::MatrixXd* replay_points);

// ceil(fraction * N) rows of `old_points`, chosen by a seeded permutation.
Eigen::MatrixXd replay_subset(const Eigen::MatrixXd& old_points, double fraction, std::uint64_t seed);

// Stage metrics of `net`: l2_u on every stage test set, on the union of
// stages 0..upto, and the full report on the union of all stage tests.
StageMetrics stage_metrics(const TransferPlan& plan, std::size_t upto, const ProblemSpec& problem, const Network& net);

using StageCallback = std::function<void(std::size_t stage, const StageResult& result)>;

// Stage 0 trains a plain PINN; later stages distill the previous stage's
// network on the union of all earlier interior points. Errors carry the
// stage index; stages already finished were reported through `on_stage`.
// Stage 0 does not depend on the distillation method, so baselines may pass
// the main pipeline's first stage as `first` instead of retraining it.
TransferResult run_transfer_pipeline(const TransferPlan& plan, const ProblemSpec& problem,
                                     const StageCallback& on_stage = {}, const StageResult* first = nullptr);

// PINN on the union of all stages with the summed step budget.
StageResult run_pinn_full(const TransferPlan& plan, const ProblemSpec& problem);

}  // namespace derivlab
