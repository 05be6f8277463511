#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "derivlab/collocation.hpp"
#include "derivlab/error.hpp"
#include "derivlab/losses.hpp"
#include "derivlab/network.hpp"
#include "derivlab/optim.hpp"

namespace derivlab {

enum class Optimizer { Adam, LBFGS, AdamThenLBFGS };

std::string to_string(Optimizer optimizer);
Optimizer optimizer_from_string(const std::string& name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::LBFGS;
  double lr = 1e-3;
  double lr_decay = 1.0;   // multiplied into lr every `decay_every` Adam steps
  int decay_every = 0;     // 0: once per epoch
  int epochs = 0;          // Adam epochs
  long long steps = 0;     // Adam steps; overrides epochs when > 0
  int batch_size = 0;      // 0: full batch
  int lbfgs_iters = 100;
  int lbfgs_memory = 10;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double fd_step_h = 1e-3;
  int log_every = 1;       // history cadence in epochs (or steps when `steps` is set)

  void validate() const;
};

struct HistoryRow {
  std::string phase;  // "adam" or "lbfgs"
  long long epoch = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Network net;
  std::vector<HistoryRow> history;
  std::optional<LbfgsStatus> lbfgs_status;
  int lbfgs_iterations = 0;
};

// Raised when a loss or gradient turns non-finite; carries the last
// parameters for which everything was finite.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& message, Network last_good, std::int64_t step)
      : Error(ErrorKind::Numerical, message, step), last_good_(std::move(last_good)) {}
  const Network& last_good() const noexcept { return last_good_; }

 private:
  Network last_good_;
};

// Row order for term `term` in epoch `epoch`: a Fisher-Yates permutation
// driven by a counter-based generator keyed on (seed, term, epoch).
std::vector<Eigen::Index> epoch_permutation(Eigen::Index n, std::uint64_t seed, std::uint64_t term,
                                            std::uint64_t epoch);

TrainResult train(const Network& net, const Objective& objective, const TrainConfig& cfg);

TrainResult train(const Network& net, const LossSpec& spec, const ProblemSpec& problem,
                  const CollocationSet& interior, const CollocationSet* boundary, const CollocationSet* initial,
                  const TrainConfig& cfg);

// Gaussian perturbation of value and jacobian targets.
CollocationSet add_noise(const CollocationSet& set, double sigma, std::uint64_t seed);

// epoch,total_loss,domain_term,pde_term,bc_term,ic_term,grad_norm,wall_ms
void write_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path);

}  // namespace derivlab
