#include "derivlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "derivlab/error.hpp"

extern char** environ;

namespace derivlab {

namespace {

[[noreturn]] void schema(const std::string& path, const std::string& message) {
  fail(ErrorKind::Schema, path + ": " + message);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed access to one YAML map that remembers which keys were read, so
// leftovers can be reported as unknown fields.
class Reader {
 public:
  Reader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) schema(path_.empty() ? "<root>" : path_, "expected a mapping");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(node_[key], join(path_, key));
  }

  template <class T>
  T need(const std::string& key) {
    used_.insert(key);
    if (!has(key)) schema(join(path_, key), "required field is missing");
    return convert<T>(node_[key], join(path_, key));
  }

  Reader child(const std::string& key) {
    used_.insert(key);
    return Reader(has(key) ? node_[key] : YAML::Node(), join(path_, key));
  }

  std::vector<YAML::Node> list(const std::string& key) {
    used_.insert(key);
    std::vector<YAML::Node> out;
    if (!has(key)) return out;
    const YAML::Node n = node_[key];
    if (!n.IsSequence()) schema(join(path_, key), "expected a list");
    for (const auto& item : n) out.push_back(item);
    return out;
  }

  void ignore(const std::string& key) { used_.insert(key); }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!used_.count(key)) schema(join(path_, key), "unknown field");
    }
  }

  template <class T>
  static T convert(const YAML::Node& n, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>> ||
                    std::is_same_v<T, std::vector<double>>) {
        if (!n.IsSequence()) schema(path, "expected a list");
      } else {
        if (!n.IsScalar()) schema(path, "expected a scalar");
      }
      return n.as<T>();
    } catch (const YAML::Exception&) {
      schema(path, "cannot convert '" + YAML::Dump(n) + "'");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

YAML::Node merge(const YAML::Node& base, const YAML::Node& over) {
  if (!base.IsMap() || !over.IsMap()) return YAML::Clone(over);
  YAML::Node out = YAML::Clone(base);
  for (const auto& kv : over) {
    const auto key = kv.first.as<std::string>();
    out[key] = out[key] ? merge(out[key], kv.second) : YAML::Clone(kv.second);
  }
  return out;
}

void apply_environment(YAML::Node& root) {
  static const std::string prefix = "DERIVLAB_";
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    std::vector<std::string> parts;
    for (std::size_t at = 0;;) {
      const auto next = key.find("__", at);
      parts.push_back(key.substr(at, next == std::string::npos ? std::string::npos : next - at));
      if (next == std::string::npos) break;
      at = next + 2;
    }
    if (std::any_of(parts.begin(), parts.end(), [](const std::string& p) { return p.empty(); }))
      schema(entry.substr(0, eq), "malformed override name");
    YAML::Node value;
    try {
      value = YAML::Load(entry.substr(eq + 1));
    } catch (const YAML::Exception& ex) {
      schema(entry.substr(0, eq), std::string("cannot parse override value: ") + ex.what());
    }
    // yaml-cpp nodes are handles; walk by reassignment.
    std::vector<YAML::Node> chain{root};
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      YAML::Node next = chain.back()[parts[i]];
      if (!next.IsMap()) {
        chain.back()[parts[i]] = YAML::Node(YAML::NodeType::Map);
        next = chain.back()[parts[i]];
      }
      chain.push_back(next);
    }
    chain.back()[parts.back()] = value;
  }
}

template <class Enum, class Fn>
Enum parse_enum(const std::string& text, const std::string& path, Fn from_string) {
  try {
    return from_string(text);
  } catch (const Error& e) {
    schema(path, e.what());
  }
}

DerivativeSource source_from_string(const std::string& s) {
  if (s == "analytic") return DerivativeSource::Analytic;
  if (s == "empirical") return DerivativeSource::Empirical;
  if (s == "solver") return DerivativeSource::Solver;
  if (s == "none") return DerivativeSource::None;
  fail(ErrorKind::Schema, "unknown derivative source '" + s + "' (analytic | empirical | solver | none)");
}

FdScheme scheme_from_string(const std::string& s) {
  if (s == "forward") return FdScheme::Forward;
  if (s == "central") return FdScheme::Central;
  fail(ErrorKind::Schema, "unknown difference scheme '" + s + "' (forward | central)");
}

Sampling sampling_from_string(const std::string& s) {
  if (s == "random") return Sampling::Random;
  if (s == "grid") return Sampling::Grid;
  fail(ErrorKind::Schema, "unknown sampling '" + s + "' (random | grid)");
}

TransferBaseline baseline_from_string(const std::string& s) {
  if (s == "pinn_full") return TransferBaseline::PinnFull;
  if (s == "no_distillation") return TransferBaseline::NoDistillation;
  if (s == "replay") return TransferBaseline::Replay;
  fail(ErrorKind::Schema, "unknown baseline '" + s + "' (pinn_full | no_distillation | replay)");
}

HessianEstimator estimator_from_string(const std::string& s) {
  if (s == "exact") return HessianEstimator::Exact;
  if (s == "random_probe") return HessianEstimator::RandomProbe;
  fail(ErrorKind::Schema, "unknown hessian estimator '" + s + "' (exact | random_probe)");
}

TrainConfig read_train(Reader r, TrainConfig cfg) {
  if (r.has("optimizer"))
    cfg.optimizer = parse_enum<Optimizer>(r.get<std::string>("optimizer", ""), join(r.path(), "optimizer"),
                                          optimizer_from_string);
  else
    r.ignore("optimizer");
  cfg.lr = r.get("lr", cfg.lr);
  cfg.lr_decay = r.get("lr_decay", cfg.lr_decay);
  cfg.decay_every = r.get("decay_every", cfg.decay_every);
  cfg.epochs = r.get("epochs", cfg.epochs);
  cfg.steps = r.get("steps", cfg.steps);
  cfg.batch_size = r.get("batch_size", cfg.batch_size);
  cfg.lbfgs_iters = r.get("lbfgs_iters", cfg.lbfgs_iters);
  cfg.lbfgs_memory = r.get("lbfgs_memory", cfg.lbfgs_memory);
  cfg.log_every = r.get("log_every", cfg.log_every);
  r.finish();
  try {
    cfg.validate();
  } catch (const Error& e) {
    schema(r.path(), e.what());
  }
  return cfg;
}

nlohmann::json train_json(const TrainConfig& t) {
  return {{"optimizer", to_string(t.optimizer)}, {"lr", t.lr},
          {"lr_decay", t.lr_decay},              {"decay_every", t.decay_every},
          {"epochs", t.epochs},                  {"steps", t.steps},
          {"batch_size", t.batch_size},          {"lbfgs_iters", t.lbfgs_iters},
          {"lbfgs_memory", t.lbfgs_memory},      {"log_every", t.log_every},
          {"seed", t.seed}};
}

nlohmann::json resolved_json(const ExperimentConfig& c) {
  const DataConfig& d = c.data;
  nlohmann::json j;
  j["spec_version"] = c.spec_version;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["problem"] = c.problem.manifest();
  j["data"] = {{"n_collocation", d.n_collocation},
               {"n_boundary", d.n_boundary},
               {"n_initial", d.n_initial},
               {"derivative_source", to_string(d.derivative_source)},
               {"fd_h", d.fd_h},
               {"fd_scheme", d.fd_scheme == FdScheme::Forward ? "forward" : "central"},
               {"noise_sigma", d.noise_sigma},
               {"sampling", to_string(d.sampling)},
               {"downsample", d.downsample},
               {"test_n", d.test_n},
               {"n_params_train", d.n_params_train},
               {"n_params_test", d.n_params_test},
               {"solver",
                {{"dt", d.solver.dt}, {"dx", d.solver.dx}, {"nx", d.solver.nx}, {"substeps", d.solver.substeps}}}};
  j["model"] = {{"layer_dims", c.layer_dims}, {"activation", "tanh"}};
  j["loss"] = {{"method", to_string(c.loss.method)},
               {"lambda_D", c.loss.lambda_D},
               {"lambda_P", c.loss.lambda_P},
               {"lambda_B", c.loss.lambda_B},
               {"lambda_I", c.loss.lambda_I},
               {"hessian_estimator", c.loss.hessian == HessianEstimator::Exact ? "exact" : "random_probe"},
               {"probes", c.loss.probes},
               {"probe_eps", c.loss.probe_eps}};
  j["train"] = train_json(c.train);
  if (c.transfer) {
    const TransferConfig& t = *c.transfer;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : t.stages) {
      nlohmann::json region = nlohmann::json::object();
      for (const auto& [k, v] : s.bounds) region[k] = {v.lo, v.hi};
      stages.push_back({{"id", s.id},
                        {"region", region},
                        {"n_collocation", s.n_collocation},
                        {"n_params", s.n_params},
                        {"train", train_json(s.train)}});
    }
    nlohmann::json baselines = nlohmann::json::array();
    for (auto b : t.baselines) baselines.push_back(to_string(b));
    j["transfer"] = {{"student_mode", to_string(t.student_mode)},
                     {"distill_method", to_string(t.distill_method)},
                     {"replay_fraction", t.replay_fraction},
                     {"distill_weight", t.distill_weight},
                     {"stages", stages},
                     {"baselines", baselines}};
  }
  return j;
}

void cross_check(const ExperimentConfig& c) {
  const ProblemSpec& pb = c.problem;
  const DataConfig& d = c.data;
  const TargetOrders need = method_targets(c.loss.method);
  const bool derivs = need.jacobians || need.hessians;
  if (derivs && d.derivative_source == DerivativeSource::None)
    schema("data.derivative_source", "method " + to_string(c.loss.method) + " needs " +
                                         (need.jacobians ? "jacobian" : "hessian") +
                                         " targets, but the source 'none' provides value targets only");
  if (d.derivative_source == DerivativeSource::Analytic && pb.reference != ReferenceKind::Analytic)
    schema("data.derivative_source", to_string(pb.name) + " has no closed-form solution; use empirical or solver");
  if (d.derivative_source == DerivativeSource::Solver && pb.reference != ReferenceKind::Solver)
    schema("data.derivative_source", to_string(pb.name) + " has no reference solver; use analytic or empirical");
  if (d.sampling == Sampling::Grid && pb.name != ProblemName::Continuity && pb.name != ProblemName::KdV)
    schema("data.sampling", "grid sampling needs a solver grid (continuity or kdv)");
  if (c.loss.hessian == HessianEstimator::RandomProbe && c.loss.method != Method::SOB_HES)
    schema("loss.hessian_estimator", "random_probe only applies to SOB_HES");
  if (c.layer_dims.size() < 2) schema("model.layer_dims", "needs at least input and output sizes");
  if (c.layer_dims.front() != pb.dim())
    schema("model.layer_dims", "input size must be " + std::to_string(pb.dim()) + " for " + to_string(pb.name));
  if (c.layer_dims.back() != pb.outputs)
    schema("model.layer_dims", "output size must be " + std::to_string(pb.outputs) + " for " + to_string(pb.name));
  for (int w : c.layer_dims)
    if (w < 1) schema("model.layer_dims", "sizes must be >= 1");
  if (c.transfer) {
    const TransferConfig& t = *c.transfer;
    if (c.loss.method != Method::PINN)
      schema("loss.method", "transfer stage 1 trains a PINN; set method: PINN");
    if (t.stages.empty() || t.stages.size() > 3) schema("transfer.stages", "needs 1 to 3 stages");
    for (std::size_t i = 0; i < t.stages.size(); ++i) {
      const std::string where = "transfer.stages[" + std::to_string(i) + "]";
      for (const auto& [name, iv] : t.stages[i].bounds) {
        int a = -1;
        try {
          a = pb.axis(name);
        } catch (const Error&) {
          schema(where + ".region." + name, "not a coordinate of " + to_string(pb.name));
        }
        const Interval& dom = pb.domain[a];
        if (!(iv.lo < iv.hi) || iv.lo < dom.lo || iv.hi > dom.hi)
          schema(where + ".region." + name, "must be an increasing interval inside the domain");
      }
      if (!pb.parameter_axes.empty() && t.stages[i].n_params < 1)
        schema(where + ".n_params", "parametric problems need parameter couples per stage");
    }
  }
}

}  // namespace

std::string to_string(DerivativeSource s) {
  switch (s) {
    case DerivativeSource::Analytic: return "analytic";
    case DerivativeSource::Empirical: return "empirical";
    case DerivativeSource::Solver: return "solver";
    case DerivativeSource::None: return "none";
  }
  return "unknown";
}

std::string to_string(Sampling s) { return s == Sampling::Grid ? "grid" : "random"; }

std::string to_string(TransferBaseline b) {
  switch (b) {
    case TransferBaseline::PinnFull: return "pinn_full";
    case TransferBaseline::NoDistillation: return "no_distillation";
    case TransferBaseline::Replay: return "replay";
  }
  return "unknown";
}

ExperimentConfig parse_config(const std::string& text, const LoadOptions& opt) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::Schema, std::string("<document>: ") + e.what());
  }
  if (!root.IsMap()) schema("<root>", "expected a mapping");
  if (opt.full && root["full"]) root = merge(root, root["full"]);
  if (opt.use_environment) apply_environment(root);

  Reader r(root, "");
  r.ignore("full");
  ExperimentConfig c;
  c.spec_version = r.need<int>("spec_version");
  if (c.spec_version != kSpecVersion)
    schema("spec_version", "unsupported version " + std::to_string(c.spec_version) + " (expected " +
                               std::to_string(kSpecVersion) + ")");
  c.name = r.get<std::string>("name", "run");
  c.seed = opt.seed ? *opt.seed : r.get<std::uint64_t>("seed", 0);
  if (opt.seed) r.ignore("seed");
  c.output = opt.output ? *opt.output : std::filesystem::path(r.get<std::string>("output", "runs/" + c.name));
  if (opt.output) r.ignore("output");

  {
    Reader p = r.child("problem");
    const auto name = parse_enum<ProblemName>(p.need<std::string>("name"), "problem.name", problem_from_string);
    ProblemConstants k;
    Reader kc = p.child("constants");
    k.ac_lambda = kc.get("ac_lambda", k.ac_lambda);
    k.kovasznay_nu = kc.get("kovasznay_nu", k.kovasznay_nu);
    k.kdv_nu = kc.get("kdv_nu", k.kdv_nu);
    k.g_over_l = kc.get("g_over_l", k.g_over_l);
    k.b_over_m = kc.get("b_over_m", k.b_over_m);
    k.pendulum_T = kc.get("pendulum_T", k.pendulum_T);
    kc.finish();
    p.finish();
    try {
      c.problem = make_problem(name, k);
    } catch (const Error& e) {
      schema("problem.constants", e.what());
    }
  }

  {
    Reader d = r.child("data");
    DataConfig& x = c.data;
    x.n_collocation = d.get("n_collocation", x.n_collocation);
    x.n_boundary = d.get("n_boundary", x.n_boundary);
    x.n_initial = d.get("n_initial", x.n_initial);
    x.derivative_source = parse_enum<DerivativeSource>(
        d.get<std::string>("derivative_source", c.problem.reference == ReferenceKind::Analytic ? "analytic" : "solver"),
        "data.derivative_source", source_from_string);
    x.fd_h = d.get("fd_h", x.fd_h);
    x.fd_scheme = parse_enum<FdScheme>(d.get<std::string>("fd_scheme", "forward"), "data.fd_scheme", scheme_from_string);
    x.noise_sigma = d.get("noise_sigma", x.noise_sigma);
    x.sampling = parse_enum<Sampling>(d.get<std::string>("sampling", "random"), "data.sampling", sampling_from_string);
    x.downsample = d.get("downsample", x.downsample);
    x.test_n = d.get("test_n", x.test_n);
    x.n_params_train = d.get("n_params_train", x.n_params_train);
    x.n_params_test = d.get("n_params_test", x.n_params_test);
    Reader s = d.child("solver");
    x.solver.dt = s.get("dt", x.solver.dt);
    x.solver.dx = s.get("dx", x.solver.dx);
    x.solver.nx = s.get("nx", x.solver.nx);
    x.solver.substeps = s.get("substeps", x.solver.substeps);
    s.finish();
    d.finish();
    if (x.n_collocation < 1) schema("data.n_collocation", "must be >= 1");
    if (x.n_boundary < 0 || x.n_initial < 0) schema("data.n_boundary", "counts must be >= 0");
    if (!(x.fd_h > 0.0)) schema("data.fd_h", "must be > 0");
    if (!(x.noise_sigma >= 0.0)) schema("data.noise_sigma", "must be >= 0");
    if (x.downsample < 1) schema("data.downsample", "must be >= 1");
    if (x.test_n < 1) schema("data.test_n", "must be >= 1");
    if (x.n_params_train < 1 || x.n_params_test < 1) schema("data.n_params_train", "counts must be >= 1");
    if (x.solver.dt < 0.0 || x.solver.dx < 0.0) schema("data.solver", "dt and dx must be >= 0");
  }

  {
    Reader m = r.child("model");
    std::vector<int> def{c.problem.dim(), 50, 50, 50, 50, c.problem.outputs};
    c.layer_dims = m.get("layer_dims", def);
    const auto act = m.get<std::string>("activation", "tanh");
    if (act != "tanh") schema("model.activation", "only tanh is supported");
    m.finish();
  }

  {
    Reader l = r.child("loss");
    LossSpec& s = c.loss;
    s.method = parse_enum<Method>(l.need<std::string>("method"), "loss.method", method_from_string);
    s.lambda_D = l.get("lambda_D", s.lambda_D);
    s.lambda_P = l.get("lambda_P", s.lambda_P);
    s.lambda_B = l.get("lambda_B", s.lambda_B);
    s.lambda_I = l.get("lambda_I", s.lambda_I);
    s.hessian = parse_enum<HessianEstimator>(l.get<std::string>("hessian_estimator", "exact"),
                                             "loss.hessian_estimator", estimator_from_string);
    s.probes = l.get("probes", s.probes);
    s.probe_eps = l.get("probe_eps", s.probe_eps);
    s.probe_seed = c.seed;
    l.finish();
    try {
      s.validate();
    } catch (const Error& e) {
      schema("loss", e.what());
    }
  }

  TrainConfig base;
  base.seed = c.seed;
  base.noise_sigma = c.data.noise_sigma;
  base.fd_step_h = c.data.fd_h;
  c.train = read_train(r.child("train"), base);

  if (r.has("transfer")) {
    Reader t = r.child("transfer");
    TransferConfig x;
    x.student_mode = parse_enum<StudentMode>(t.get<std::string>("student_mode", "continual"), "transfer.student_mode",
                                             student_mode_from_string);
    x.distill_method = parse_enum<DistillMethod>(t.get<std::string>("distill_method", "DERL"),
                                                 "transfer.distill_method", distill_from_string);
    x.replay_fraction = t.get("replay_fraction", x.replay_fraction);
    x.distill_weight = t.get("distill_weight", x.distill_weight);
    if (!(x.replay_fraction > 0.0 && x.replay_fraction <= 1.0))
      schema("transfer.replay_fraction", "must be in (0, 1]");
    if (!(x.distill_weight >= 0.0)) schema("transfer.distill_weight", "must be >= 0");
    for (const auto& b : t.get<std::vector<std::string>>("baselines", {}))
      x.baselines.push_back(parse_enum<TransferBaseline>(b, "transfer.baselines", baseline_from_string));
    const auto stages = t.list("stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const std::string where = "transfer.stages[" + std::to_string(i) + "]";
      Reader s(stages[i], where);
      StageConfig sc;
      sc.id = s.get<std::string>("id", "stage" + std::to_string(i + 1));
      Reader region = s.child("region");
      if (s.has("region")) {
        for (const auto& kv : stages[i]["region"]) {
          const auto key = kv.first.as<std::string>();
          const auto iv = Reader::convert<std::vector<double>>(kv.second, where + ".region." + key);
          if (iv.size() != 2) schema(where + ".region." + key, "expected [lo, hi]");
          sc.bounds[key] = {iv[0], iv[1]};
          region.ignore(key);
        }
      }
      region.finish();
      sc.n_collocation = s.get("n_collocation", 0);
      sc.n_params = s.get("n_params", 0);
      sc.train = read_train(s.child("train"), c.train);
      s.finish();
      x.stages.push_back(std::move(sc));
    }
    t.finish();
    c.transfer = std::move(x);
  }
  r.finish();
  cross_check(c);
  c.resolved = resolved_json(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), options);
}

}  // namespace derivlab
