#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "derivlab/collocation.hpp"
#include "derivlab/config.hpp"
#include "derivlab/eval.hpp"
#include "derivlab/grid_field.hpp"
#include "derivlab/problems.hpp"

namespace derivlab {

// Reference solution for one experiment: closed form, or a solver run
// sampled through cubic interpolation. Builds the solver output once.
class ReferenceData {
 public:
  explicit ReferenceData(const ExperimentConfig& cfg);

  const ProblemSpec& problem() const noexcept { return pb_; }
  // Box where targets exist: the domain, clipped to the solver grid hull.
  const std::vector<Interval>& box() const noexcept { return box_; }
  // Solver output (continuity, kdv; kdv carries a wrapped x = 1 column).
  const std::optional<GridField>& grid() const noexcept { return grid_; }

  Eigen::VectorXd value(std::span<const double> point) const;

  // Value targets, plus derivative targets from the configured source when
  // `derivatives` asks for them.
  void fill(CollocationSet& set, TargetOrders derivatives) const;
  // Same with a source override (test sets always use the most exact one).
  void fill(CollocationSet& set, TargetOrders derivatives, DerivativeSource source) const;

 private:
  const GridField& trajectory(double u0, double v0) const;
  double component(std::span<const double> point, int k) const;

  ProblemSpec pb_;
  DataConfig data_;
  std::vector<Interval> box_;
  std::optional<GridField> grid_;
  mutable std::map<std::pair<double, double>, GridField> trajectories_;
};

// Deterministic stream for one purpose of one run.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose);

// Non-time, non-parameter axes.
std::vector<int> spatial_axes(const ProblemSpec& problem);
// Axes sampled per collocation point (everything but the parameters).
std::vector<int> point_axes(const ProblemSpec& problem);

// k x (#parameters) couples drawn uniformly in `box`.
Eigen::MatrixXd sample_couples(const ProblemSpec& problem, const std::vector<Interval>& box, int k,
                               std::mt19937_64& rng);

// n points uniform in `box` over point_axes; with couples, every point is
// paired with every couple (couple-major row order).
Eigen::MatrixXd sample_interior(const ProblemSpec& problem, const std::vector<Interval>& box, int n,
                                const Eigen::MatrixXd& couples, std::mt19937_64& rng);

// Boundary points on the faces of `box` (periodic problems: the lower face
// of the periodic axis, paired by the period).
CollocationSet sample_boundary(const ReferenceData& ref, const std::vector<Interval>& box, int n,
                               const Eigen::MatrixXd& couples, std::mt19937_64& rng);

// Points at t0 with g(x) targets (pendulum also carries u_t = v0).
CollocationSet sample_initial(const ReferenceData& ref, const std::vector<Interval>& box, int n,
                              std::mt19937_64& rng);

struct TestData {
  CollocationSet set;
  std::optional<GridField> grid;  // tensor grid with reference values (non-parametric problems)
};

// Cell-centered grid with `cells` per point axis over `box`, times the
// couples for parametric problems.
TestData make_test(const ReferenceData& ref, const std::vector<Interval>& box, int cells,
                   const Eigen::MatrixXd& couples);

// Rows of `set` inside `region`; upper faces are exclusive unless they are
// on the domain boundary.
CollocationSet restrict_to(const CollocationSet& set, const std::vector<Interval>& region,
                           const std::vector<Interval>& domain);

struct Datasets {
  CollocationSet interior;
  std::optional<CollocationSet> boundary;
  std::optional<CollocationSet> initial;
  TestData test;
};

Datasets generate_datasets(const ExperimentConfig& cfg, const ReferenceData& ref);

// Builds the staged plan from the transfer block.
TransferPlan make_transfer_plan(const ExperimentConfig& cfg, const ReferenceData& ref);

struct RunOutcome {
  std::filesystem::path dir;
  nlohmann::json metrics;
};

RunOutcome run_generate(const ExperimentConfig& cfg);
RunOutcome run_train(const ExperimentConfig& cfg);
RunOutcome run_transfer(const ExperimentConfig& cfg);
RunOutcome run_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& network);

// Comparison table over run directories. Returns the number of rows
// flagged for missing metrics; mixed problems throw.
std::size_t run_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_csv);

// a - b over error fields (run directories or grid files); writes
// `<out>` (+ .json header) and `<out>.csv`.
void run_diff(const std::filesystem::path& a, const std::filesystem::path& b, const std::filesystem::path& out);

std::string file_digest(const std::filesystem::path& path);

}  // namespace derivlab
