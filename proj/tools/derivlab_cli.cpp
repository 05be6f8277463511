#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "derivlab.h"

namespace {

struct Job {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

int finish(dl_status s, const std::string& what) {
  if (s == DL_OK) return 0;
  std::fprintf(stderr, "derivlab %s: %s\n", what.c_str(), dl_last_error());
  return dl_exit_code(s);
}

int run_job(const std::string& verb, const Job& job, bool full, const std::string& network) {
  dl_run_options o{};
  o.config_path = job.config.c_str();
  o.out_dir = job.out ? job.out->c_str() : nullptr;
  o.full = full ? 1 : 0;
  o.has_seed = job.seed ? 1 : 0;
  o.seed = job.seed.value_or(0);
  dl_status s = DL_OK;
  if (verb == "generate") s = dl_generate(&o);
  else if (verb == "train") s = dl_train(&o);
  else if (verb == "transfer") s = dl_transfer(&o);
  else s = dl_evaluate(&o, network.c_str());
  const int code = finish(s, verb);
  if (code == 0) std::printf("%s: %s done\n", verb.c_str(), job.config.c_str());
  return code;
}

// Runs jobs in up to `width` forked workers. Worst exit code wins, with
// config errors (2) ranked above runtime failures (1).
int fan_out(const std::string& verb, const std::vector<Job>& jobs, bool full, const std::string& network,
            int width) {
  if (jobs.size() == 1 || width <= 1) {
    int worst = 0;
    for (const auto& j : jobs) worst = std::max(worst, run_job(verb, j, full, network));
    return worst;
  }
  std::fflush(stdout);
  std::fflush(stderr);
  int worst = 0, running = 0;
  const auto reap = [&] {
    int status = 0;
    if (wait(&status) > 0) {
      --running;
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
      worst = std::max(worst, code);
    }
  };
  for (const auto& j : jobs) {
    while (running >= width) reap();
    const pid_t pid = fork();
    if (pid < 0) {
      std::perror("fork");
      worst = std::max(worst, 1);
      continue;
    }
    if (pid == 0) {
      const int code = run_job(verb, j, full, network);
      std::fflush(stdout);
      std::fflush(stderr);
      _exit(code);
    }
    ++running;
  }
  while (running > 0) reap();
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"derivlab: derivative-supervised PDE surrogates and distillation transfer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dl_version());

  std::vector<std::string> configs;
  std::vector<std::uint64_t> seeds;
  std::string out, network, report_out = "report.csv", diff_out = "diff.bin";
  std::vector<std::string> dirs;
  bool full = false;
  int jobs = 1;

  const auto run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", configs, "experiment config (repeat to queue several)")->required()->check(
        CLI::ExistingFile);
    sub->add_option("--seed", seeds, "seed override (repeat to fan out over seeds)");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--full", full, "merge the config's `full` block (large-scale settings)");
    sub->add_option("--jobs", jobs, "worker processes for independent runs")->check(CLI::PositiveNumber);
  };
  CLI::App* gen = app.add_subcommand("generate", "sample collocation sets and write datasets");
  CLI::App* trn = app.add_subcommand("train", "generate, train and evaluate");
  CLI::App* xfr = app.add_subcommand("transfer", "run the staged transfer pipeline and its baselines");
  CLI::App* evl = app.add_subcommand("evaluate", "evaluate a saved network on the config's test grid");
  for (CLI::App* s : {gen, trn, xfr, evl}) run_flags(s);
  evl->add_option("--network", network, "network JSON")->required()->check(CLI::ExistingFile);

  CLI::App* rep = app.add_subcommand("report", "comparison table over run directories");
  rep->add_option("runs", dirs, "run directories")->required();
  rep->add_option("--out", report_out, "CSV path");

  CLI::App* dif = app.add_subcommand("diff", "subtract two error fields");
  dif->add_option("runs", dirs, "two run directories or error-field files")->required()->expected(2);
  dif->add_option("--out", diff_out, "output grid path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (rep->parsed()) {
    std::vector<const char*> ptrs;
    for (const auto& d : dirs) ptrs.push_back(d.c_str());
    const int code = finish(dl_report(ptrs.data(), ptrs.size(), report_out.c_str()), "report");
    if (code == 0 || std::filesystem::exists(report_out)) std::printf("report: %s\n", report_out.c_str());
    return code;
  }
  if (dif->parsed()) {
    const int code = finish(dl_diff(dirs[0].c_str(), dirs[1].c_str(), diff_out.c_str()), "diff");
    if (code == 0) std::printf("diff: %s\n", diff_out.c_str());
    return code;
  }

  std::string verb;
  for (CLI::App* s : {gen, trn, xfr, evl})
    if (s->parsed()) verb = s->get_name();

  std::vector<Job> queue;
  const bool many = configs.size() * std::max<std::size_t>(1, seeds.size()) > 1;
  for (const auto& c : configs) {
    const std::string stem = std::filesystem::path(c).stem().string();
    if (seeds.empty()) {
      Job j{c, std::nullopt, std::nullopt};
      if (!out.empty()) j.out = many ? (std::filesystem::path(out) / stem).string() : out;
      queue.push_back(j);
      continue;
    }
    for (auto s : seeds) {
      Job j{c, s, std::nullopt};
      if (!out.empty() || many)
        j.out = many ? (std::filesystem::path(out.empty() ? "runs" : out) / (stem + "_seed" + std::to_string(s))).string()
                     : out;
      queue.push_back(j);
    }
  }
  return fan_out(verb, queue, full, network, jobs);
}
