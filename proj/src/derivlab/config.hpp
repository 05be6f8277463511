#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "derivlab/losses.hpp"
#include "derivlab/problems.hpp"
#include "derivlab/solvers.hpp"
#include "derivlab/train.hpp"
#include "derivlab/transfer.hpp"

namespace derivlab {

inline constexpr int kSpecVersion = 1;

// analytic: closed form. empirical: difference quotients of the reference
// with step fd_h. solver: derivatives supplied by the reference solver (ODE
// state for the pendulum, central differences at grid spacing otherwise).
// none: value targets only.
enum class DerivativeSource { Analytic, Empirical, Solver, None };
enum class Sampling { Random, Grid };

std::string to_string(DerivativeSource source);
std::string to_string(Sampling sampling);

struct SolverSettings {
  double dt = 0.0;  // 0: per-problem default
  double dx = 0.0;
  std::size_t nx = 256;
  std::size_t substeps = 10;
};

struct DataConfig {
  int n_collocation = 1000;
  int n_boundary = 200;
  int n_initial = 200;
  DerivativeSource derivative_source = DerivativeSource::Analytic;
  double fd_h = 1e-3;
  FdScheme fd_scheme = FdScheme::Forward;
  double noise_sigma = 0.0;
  Sampling sampling = Sampling::Random;
  int downsample = 10;     // grid sampling: keep every k-th solver node
  int test_n = 50;         // test cells per non-parameter axis
  int n_params_train = 8;  // parameter couples for parametric problems
  int n_params_test = 5;
  SolverSettings solver;
};

struct StageConfig {
  std::string id;
  std::map<std::string, Interval> bounds;  // coordinates not listed span the domain
  int n_collocation = 0;                   // 0: data.n_collocation
  int n_params = 0;                        // parametric stages: couples in this stage
  TrainConfig train;
};

enum class TransferBaseline { PinnFull, NoDistillation, Replay };

std::string to_string(TransferBaseline baseline);

struct TransferConfig {
  StudentMode student_mode = StudentMode::Continual;
  DistillMethod distill_method = DistillMethod::DERL;
  double replay_fraction = 0.2;
  double distill_weight = 1.0;
  std::vector<StageConfig> stages;
  std::vector<TransferBaseline> baselines;
};

struct ExperimentConfig {
  int spec_version = kSpecVersion;
  std::string name;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  ProblemSpec problem;
  DataConfig data;
  std::vector<int> layer_dims;
  LossSpec loss;
  TrainConfig train;
  std::optional<TransferConfig> transfer;
  nlohmann::json resolved;  // effective settings after overrides, for manifests
};

struct LoadOptions {
  bool full = false;  // merge the `full` block over the document
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output;
  bool use_environment = true;  // DERIVLAB_<KEY>__<SUBKEY>=value overrides
};

// All schema violations throw ErrorKind::Schema with the offending field
// path first in the message.
ExperimentConfig parse_config(const std::string& text, const LoadOptions& options = {});
ExperimentConfig load_config(const std::filesystem::path& path, const LoadOptions& options = {});

}  // namespace derivlab
