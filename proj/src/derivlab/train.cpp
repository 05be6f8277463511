#include "derivlab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace derivlab {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t x) { return splitmix64(x); }

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.total += b.total;
  acc.domain += b.domain;
  acc.pde += b.pde;
  acc.bc += b.bc;
  acc.ic += b.ic;
  if (acc.terms.size() < b.terms.size()) acc.terms.resize(b.terms.size(), 0.0);
  for (std::size_t i = 0; i < b.terms.size(); ++i) acc.terms[i] += b.terms[i];
}

LossBreakdown scaled(LossBreakdown b, double s) {
  b.total *= s;
  b.domain *= s;
  b.pde *= s;
  b.bc *= s;
  b.ic *= s;
  for (double& t : b.terms) t *= s;
  return b;
}

}  // namespace

std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::Adam: return "adam";
    case Optimizer::LBFGS: return "lbfgs";
    case Optimizer::AdamThenLBFGS: return "adam_then_lbfgs";
  }
  return "unknown";
}

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "lbfgs") return Optimizer::LBFGS;
  if (name == "adam_then_lbfgs") return Optimizer::AdamThenLBFGS;
  fail(ErrorKind::Configuration, "unknown optimizer '" + name + "' (adam | lbfgs | adam_then_lbfgs)");
}

void TrainConfig::validate() const {
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::Configuration, "lr must be > 0");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Configuration, "lr_decay must be in (0, 1]");
  require(decay_every >= 0, ErrorKind::Configuration, "decay_every must be >= 0");
  require(epochs >= 0 && steps >= 0, ErrorKind::Configuration, "epochs and steps must be >= 0");
  require(batch_size >= 0, ErrorKind::Configuration, "batch_size must be >= 0 (0 = full batch)");
  require(lbfgs_iters >= 0, ErrorKind::Configuration, "lbfgs_iters must be >= 0");
  require(lbfgs_memory >= 1, ErrorKind::Configuration, "lbfgs_memory must be >= 1");
  require(noise_sigma >= 0.0, ErrorKind::Configuration, "noise_sigma must be >= 0");
  require(fd_step_h > 0.0, ErrorKind::Configuration, "fd_step_h must be > 0");
  require(log_every >= 1, ErrorKind::Configuration, "log_every must be >= 1");
}

std::vector<Eigen::Index> epoch_permutation(Eigen::Index n, std::uint64_t seed, std::uint64_t term,
                                            std::uint64_t epoch) {
  std::uint64_t state = mix(seed) ^ mix(term * 0x9E3779B97F4A7C15ULL + 1) ^ mix(epoch + 0x632BE59BD9B4E019ULL);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[i] = i;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto r = static_cast<unsigned __int128>(splitmix64(state)) * static_cast<std::uint64_t>(i + 1);
    std::swap(perm[i], perm[static_cast<Eigen::Index>(r >> 64)]);
  }
  return perm;
}

TrainResult train(const Network& net, const Objective& obj, const TrainConfig& cfg) {
  cfg.validate();
  if (obj.count() == 0) fail(ErrorKind::Specification, "objective has no terms");
  const auto t0 = Clock::now();
  TrainResult res{net, {}, std::nullopt, 0};
  res.history.push_back({"init", 0, obj.evaluate(net), 0.0, ms_since(t0)});

  const bool use_adam = cfg.optimizer != Optimizer::LBFGS && (cfg.steps > 0 || cfg.epochs > 0);
  const bool use_lbfgs = cfg.optimizer != Optimizer::Adam && cfg.lbfgs_iters > 0;
  long long units_done = 0;

  if (use_adam) {
    const std::size_t nt = obj.count();
    Eigen::Index largest = 0;
    for (const auto& t : obj.terms()) largest = std::max(largest, t->size());
    const bool full = cfg.batch_size == 0 || cfg.batch_size >= largest;
    const long long nb = full ? 1 : (largest + cfg.batch_size - 1) / cfg.batch_size;
    const long long total = cfg.steps > 0 ? cfg.steps : static_cast<long long>(cfg.epochs) * nb;
    const long long decay_every = cfg.decay_every > 0 ? cfg.decay_every : nb;
    const bool per_step_log = cfg.steps > 0;

    Eigen::VectorXd params = res.net.parameters();
    AdamState state(params.size());
    Eigen::VectorXd grad;
    std::vector<std::vector<Eigen::Index>> perms(nt), rows(nt);
    std::vector<std::span<const Eigen::Index>> spans(nt);
    LossBreakdown window;
    double gn_window = 0.0;
    long long window_steps = 0;

    auto flush = [&](long long unit) {
      const double s = 1.0 / static_cast<double>(window_steps);
      res.history.push_back({"adam", unit, scaled(window, s), gn_window * s, ms_since(t0)});
      window = LossBreakdown{};
      gn_window = 0.0;
      window_steps = 0;
    };

    for (long long step = 0; step < total; ++step) {
      const long long epoch = step / nb, b = step % nb;
      for (std::size_t i = 0; i < nt; ++i) {
        const Eigen::Index n = obj.terms()[i]->size();
        if (full) {
          spans[i] = {};
          continue;
        }
        if (b == 0) perms[i] = epoch_permutation(n, cfg.seed, i, static_cast<std::uint64_t>(epoch));
        const Eigen::Index bs = (n + nb - 1) / nb;
        rows[i].resize(static_cast<std::size_t>(bs));
        for (Eigen::Index j = 0; j < bs; ++j) rows[i][j] = perms[i][(b * bs + j) % n];
        spans[i] = rows[i];
      }
      LossBreakdown lb;
      try {
        lb = obj.value_and_gradient(res.net, spans, grad);
        if (!std::isfinite(lb.total) || !grad.allFinite())
          fail(ErrorKind::Numerical, "non-finite loss or gradient", step);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numerical) throw;
        throw TrainingAborted(std::string("Adam step ") + std::to_string(step + 1) + ": " + e.what(), res.net, step + 1);
      }
      const double lr = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(step / decay_every));
      adam_step(state, params, grad, lr);
      res.net.set_parameters(params);

      accumulate(window, lb);
      gn_window += grad.norm();
      ++window_steps;
      const long long unit = per_step_log ? step + 1 : (b == nb - 1 ? epoch + 1 : 0);
      if (unit > 0 && (unit % cfg.log_every == 0)) flush(unit);
    }
    units_done = per_step_log ? total : total / nb;
    if (window_steps > 0) flush(units_done);
  }

  if (use_lbfgs) {
    LbfgsOptions opt;
    opt.max_iters = cfg.lbfgs_iters;
    opt.memory = cfg.lbfgs_memory;
    Network work = res.net;
    LossBreakdown last;
    const DiffFunction fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
      work.set_parameters(x);
      try {
        last = obj.value_and_gradient(work, g);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::Numerical) throw;
        return std::numeric_limits<double>::quiet_NaN();
      }
      return g.allFinite() ? last.total : std::numeric_limits<double>::quiet_NaN();
    };
    const LbfgsCallback cb = [&](int it, double, double gn) {
      if (it % cfg.log_every == 0 || it == cfg.lbfgs_iters)
        res.history.push_back({"lbfgs", units_done + it, last, gn, ms_since(t0)});
    };
    LbfgsResult r;
    try {
      r = lbfgs_minimize(fn, res.net.parameters(), opt, cb);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      throw TrainingAborted(std::string("L-BFGS: ") + e.what(), res.net, units_done);
    }
    res.net.set_parameters(r.x);
    res.lbfgs_status = r.status;
    res.lbfgs_iterations = r.iterations;
    // Keep the final accepted iterate in the history even off-cadence.
    if (r.iterations > 0 && res.history.back().epoch != units_done + r.iterations) {
      HistoryRow row{"lbfgs", units_done + r.iterations, obj.evaluate(res.net), r.grad_norm, ms_since(t0)};
      res.history.push_back(std::move(row));
    }
  }
  return res;
}

TrainResult train(const Network& net, const LossSpec& spec, const ProblemSpec& problem,
                  const CollocationSet& interior, const CollocationSet* boundary, const CollocationSet* initial,
                  const TrainConfig& cfg) {
  const Objective obj = build_objective(spec, problem, interior, boundary, initial);
  return train(net, obj, cfg);
}

CollocationSet add_noise(const CollocationSet& set, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) fail(ErrorKind::Configuration, "noise sigma must be >= 0");
  CollocationSet out = set;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto* arr : {&out.values, &out.jacobians}) {
    if (!*arr) continue;
    Eigen::MatrixXd& m = **arr;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) += normal(rng);
  }
  out.meta["noise_sigma"] = sigma;
  out.meta["noise_seed"] = seed;
  return out;
}

void write_history(const std::vector<HistoryRow>& history, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  std::fprintf(f, "epoch,total_loss,domain_term,pde_term,bc_term,ic_term,grad_norm,wall_ms\n");
  for (const auto& h : history)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", h.epoch, h.loss.total, h.loss.domain,
                 h.loss.pde, h.loss.bc, h.loss.ic, h.grad_norm, h.wall_ms);
  std::fclose(f);
}

}  // namespace derivlab
