#include "derivlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "derivlab/error.hpp"
#include "derivlab/solvers.hpp"
#include "derivlab/train.hpp"
#include "derivlab/transfer.hpp"

namespace derivlab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Purpose : std::uint64_t {
  kInterior = 1,
  kBoundary = 2,
  kInitial = 3,
  kTrainCouples = 4,
  kTestCouples = 5,
  kNoise = 6,
  kStageBase = 100,
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool has_fixed_bc(const ProblemSpec& pb) { return pb.name != ProblemName::Pendulum && !pb.periodic; }

CollocationSet empty_set(const ProblemSpec& pb, Region region) {
  CollocationSet s;
  s.region = region;
  s.points.resize(0, pb.dim());
  s.coord_names = pb.coords;
  s.outputs = pb.outputs;
  s.derivative_axes = pb.derivative_axes;
  s.time_axis = pb.time_axis;
  s.t0 = pb.time_dependent() ? pb.domain[pb.time_axis].lo : 0.0;
  return s;
}

// Periodic copy of the first node appended along `axis`, so interpolation
// covers the whole period.
GridField wrap_periodic(const GridField& g, std::size_t axis, double period) {
  GridField out = g;
  out.axes[axis].push_back(g.axes[axis].front() + period);
  const auto shape = out.shape();
  out.data.assign(out.point_count() * out.components, 0.0);
  std::vector<std::size_t> idx(shape.size(), 0), src(shape.size());
  for (std::size_t p = 0; p < out.point_count(); ++p) {
    std::size_t rem = p;
    for (std::size_t a = shape.size(); a-- > 0;) {
      idx[a] = rem % shape[a];
      rem /= shape[a];
    }
    src = idx;
    if (src[axis] == shape[axis] - 1) src[axis] = 0;
    for (int k = 0; k < out.components; ++k) out.at(idx, k) = g.at(src, k);
  }
  out.meta["periodic_wrap_axis"] = axis;
  return out;
}

// Difference quotient that turns one-sided (pointing inward) when the
// requested stencil would leave `bounds`.
double fd1(const ScalarField& u, std::vector<double> p, int axis, double h, FdScheme scheme,
           std::span<const Interval> bounds) {
  try {
    return empirical_derivative(u, p, axis, h, scheme, bounds);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Boundary) throw;
  }
  if (p[axis] + h > bounds[axis].hi) p[axis] -= h;
  return empirical_derivative(u, p, axis, h, FdScheme::Forward, bounds);
}

std::vector<Interval> intersect(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  std::vector<Interval> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = {std::max(a[i].lo, b[i].lo), std::min(a[i].hi, b[i].hi)};
  return out;
}

Eigen::MatrixXd stack(const std::vector<Eigen::MatrixXd>& parts, Eigen::Index cols) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

struct Artifacts {
  fs::path root;
  std::vector<fs::path> files;
  void add(const fs::path& p) { files.push_back(fs::relative(p, root)); }
};

void write_manifest(const Artifacts& art, const std::string& verb, const ExperimentConfig& cfg, double wall_ms,
                    nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& f : art.files) {
    const fs::path full = art.root / f;
    list.push_back({{"path", f.generic_string()}, {"bytes", fs::file_size(full)}, {"fnv1a64", file_digest(full)}});
  }
  nlohmann::json m = {{"tool", "derivlab"},    {"version", kVersion}, {"verb", verb},
                      {"config", cfg.resolved}, {"artifacts", list},  {"wall_ms", wall_ms}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_json(m, art.root / "manifest.json");
}

void write_set(const CollocationSet& s, const fs::path& path, Artifacts& art) {
  write_collocation(s, path);
  art.add(path);
  fs::path side = path;
  side.replace_extension(".json");
  if (fs::exists(side)) art.add(side);
}

nlohmann::json metrics_json(const ExperimentConfig& cfg, const MetricsReport& r) {
  nlohmann::json j = to_json(r);
  j["name"] = cfg.name;
  j["problem"] = to_string(cfg.problem.name);
  j["method"] = to_string(cfg.loss.method);
  j["seed"] = cfg.seed;
  j["noise_sigma"] = cfg.data.noise_sigma;
  return j;
}

nlohmann::json stage_json(const StageResult& s) {
  return {{"id", s.id},
          {"region_l2_u", s.metrics.region_l2_u},
          {"cumulative_l2_u", s.metrics.cumulative_l2_u},
          {"full", to_json(s.metrics.full)},
          {"network_hash", s.net.hash()}};
}

std::vector<HistoryRow> chained_history(const std::vector<StageResult>& stages) {
  std::vector<HistoryRow> out;
  long long offset = 0;
  for (const auto& s : stages) {
    long long last = 0;
    for (auto row : s.history) {
      last = std::max(last, row.epoch);
      row.epoch += offset;
      out.push_back(std::move(row));
    }
    offset += last;
  }
  return out;
}

void save_stage(const StageResult& s, const fs::path& dir, Artifacts& art) {
  fs::create_directories(dir);
  save_network(s.net, dir / "network.json");
  art.add(dir / "network.json");
  write_history(s.history, dir / "history.csv");
  art.add(dir / "history.csv");
  write_json(stage_json(s), dir / "metrics.json");
  art.add(dir / "metrics.json");
  if (s.snapshot) write_set(s.snapshot->set, dir / "snapshot.csv", art);
  if (s.replay_points.rows() > 0) {
    std::ofstream out(dir / "replay_points.csv");
    out.precision(17);
    for (Eigen::Index r = 0; r < s.replay_points.rows(); ++r)
      for (Eigen::Index c = 0; c < s.replay_points.cols(); ++c)
        out << s.replay_points(r, c) << (c + 1 < s.replay_points.cols() ? ',' : '\n');
    out.close();
    art.add(dir / "replay_points.csv");
  }
}

}  // namespace

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(purpose >> 32)};
  return std::mt19937_64(seq);
}

std::vector<int> spatial_axes(const ProblemSpec& pb) {
  std::vector<int> out;
  for (int a = 0; a < pb.dim(); ++a)
    if (a != pb.time_axis && std::find(pb.parameter_axes.begin(), pb.parameter_axes.end(), a) == pb.parameter_axes.end())
      out.push_back(a);
  return out;
}

std::vector<int> point_axes(const ProblemSpec& pb) {
  std::vector<int> out;
  for (int a = 0; a < pb.dim(); ++a)
    if (std::find(pb.parameter_axes.begin(), pb.parameter_axes.end(), a) == pb.parameter_axes.end()) out.push_back(a);
  return out;
}

// ---------------------------------------------------------------------------
// Reference data

ReferenceData::ReferenceData(const ExperimentConfig& cfg) : pb_(cfg.problem), data_(cfg.data), box_(pb_.domain) {
  const SolverSettings& s = data_.solver;
  if (pb_.name == ProblemName::Continuity) {
    const GridField ic = continuity_initial_grid(pb_, s.dx > 0.0 ? s.dx : 0.03);
    FvOptions opt;
    opt.dt = s.dt > 0.0 ? s.dt : 0.5 * continuity_max_dt(ic);
    opt.T = pb_.domain[pb_.time_axis].hi;
    opt.store_every = std::max<std::size_t>(1, s.substeps);
    grid_ = continuity_fv_solve(ic, opt);
  } else if (pb_.name == ProblemName::KdV) {
    KdvOptions opt;
    opt.nu = pb_.constants.kdv_nu;
    opt.nx = s.nx;
    opt.dt = s.dt > 0.0 ? s.dt : 0.005;
    opt.substeps = std::max<std::size_t>(1, s.substeps);
    opt.T = pb_.domain[pb_.time_axis].hi;
    const auto ic = [this](double x) {
      const double p[2] = {0.0, x};
      return initial_value(pb_, p)[0];
    };
    grid_ = wrap_periodic(kdv_spectral_solve(ic, opt), 1, pb_.periodic->period);
  }
  if (grid_) {
    for (int a = 0; a < pb_.dim(); ++a)
      box_[a] = {std::max(box_[a].lo, grid_->axes[a].front()), std::min(box_[a].hi, grid_->axes[a].back())};
  }
}

const GridField& ReferenceData::trajectory(double u0, double v0) const {
  const auto key = std::make_pair(u0, v0);
  auto it = trajectories_.find(key);
  if (it != trajectories_.end()) return it->second;
  const double gl = pb_.constants.g_over_l, bm = pb_.constants.b_over_m;
  const OdeRhs rhs = [gl, bm](double, const Eigen::VectorXd& y) {
    const auto d = pendulum_rhs({y[0], y[1]}, gl, bm);
    return Eigen::Vector2d(d[0], d[1]).eval();
  };
  const double dt = data_.solver.dt > 0.0 ? data_.solver.dt : 0.01;
  auto traj = rk4_trajectory(rhs, Eigen::Vector2d(u0, v0), dt, pb_.domain[pb_.time_axis].hi);
  return trajectories_.emplace(key, std::move(traj)).first->second;
}

double ReferenceData::component(std::span<const double> p, int k) const {
  switch (pb_.name) {
    case ProblemName::Pendulum: {
      const double t[1] = {p[0]};
      return cubic_interpolate(trajectory(p[1], p[2]), t, 0);
    }
    case ProblemName::Continuity:
    case ProblemName::KdV: return cubic_interpolate(*grid_, p, k);
    default: return analytic_solution(pb_, p)[k];
  }
}

Eigen::VectorXd ReferenceData::value(std::span<const double> p) const {
  if (pb_.reference == ReferenceKind::Analytic) return analytic_solution(pb_, p);
  Eigen::VectorXd v(pb_.outputs);
  for (int k = 0; k < pb_.outputs; ++k) v[k] = component(p, k);
  return v;
}

void ReferenceData::fill(CollocationSet& set, TargetOrders need) const { fill(set, need, data_.derivative_source); }

void ReferenceData::fill(CollocationSet& set, TargetOrders need, DerivativeSource source) const {
  const Eigen::Index n = set.size();
  const int m = pb_.outputs;
  const auto& axes = pb_.derivative_axes;
  const int k = static_cast<int>(axes.size());
  set.derivative_axes = axes;
  Eigen::MatrixXd vals(n, m);
  const bool jac = need.jacobians && source != DerivativeSource::None;
  const bool hes = need.hessians && source != DerivativeSource::None;
  std::optional<Eigen::MatrixXd> J, H;
  if (jac) J = Eigen::MatrixXd(n, m * k);
  if (hes) H = Eigen::MatrixXd(n, m * k * k);

  const bool grid_solver = source == DerivativeSource::Solver && grid_.has_value();
  const FdScheme scheme = grid_solver ? FdScheme::Central : data_.fd_scheme;
  std::vector<double> h(pb_.dim(), data_.fd_h);
  if (grid_solver)
    for (int a = 0; a < pb_.dim(); ++a) h[a] = grid_->axes[a][1] - grid_->axes[a][0];

  std::vector<double> x(pb_.dim());
  for (Eigen::Index p = 0; p < n; ++p) {
    for (int a = 0; a < pb_.dim(); ++a) x[a] = set.points(p, a);
    if (source == DerivativeSource::Analytic && pb_.reference == ReferenceKind::Analytic) {
      const AnalyticJet aj = analytic_jet(pb_, x);
      vals.row(p) = aj.value.transpose();
      for (int o = 0; o < m; ++o)
        for (int a = 0; a < k; ++a) {
          if (jac) (*J)(p, o * k + a) = aj.jacobian(o, a);
          if (hes)
            for (int b = 0; b < k; ++b) (*H)(p, (o * k + a) * k + b) = aj.hessian[o](a, b);
        }
      continue;
    }
    if (pb_.name == ProblemName::Pendulum && source == DerivativeSource::Solver) {
      const GridField& tr = trajectory(x[1], x[2]);
      const double t[1] = {x[0]};
      const double u = cubic_interpolate(tr, t, 0), v = cubic_interpolate(tr, t, 1);
      vals(p, 0) = u;
      if (jac) (*J)(p, 0) = v;
      if (hes) (*H)(p, 0) = pendulum_rhs({u, v}, pb_.constants.g_over_l, pb_.constants.b_over_m)[1];
      continue;
    }
    for (int o = 0; o < m; ++o) {
      vals(p, o) = component(x, o);
      if (!jac && !hes) continue;
      const ScalarField u = [this, o](std::span<const double> q) { return component(q, o); };
      for (int a = 0; a < k; ++a) {
        const int ia = axes[a];
        if (jac) (*J)(p, o * k + a) = fd1(u, x, ia, h[ia], scheme, box_);
        if (!hes) continue;
        const ScalarField ua = [&, ia](std::span<const double> q) {
          return fd1(u, std::vector<double>(q.begin(), q.end()), ia, h[ia], scheme, box_);
        };
        for (int b = a; b < k; ++b) {
          const int ib = axes[b];
          const double hab = fd1(ua, x, ib, h[ib], scheme, box_);
          (*H)(p, (o * k + a) * k + b) = hab;
          (*H)(p, (o * k + b) * k + a) = hab;
        }
      }
    }
  }
  set.values = std::move(vals);
  if (jac) set.jacobians = std::move(J);
  if (hes) set.hessians = std::move(H);
  set.meta["derivative_source"] = to_string(source);
  if (source == DerivativeSource::Empirical || grid_solver) {
    set.meta["fd_h"] = grid_solver ? nlohmann::json(h) : nlohmann::json(data_.fd_h);
    set.meta["fd_scheme"] = scheme == FdScheme::Forward ? "forward" : "central";
  }
}

// ---------------------------------------------------------------------------
// Sampling

Eigen::MatrixXd sample_couples(const ProblemSpec& pb, const std::vector<Interval>& box, int k, std::mt19937_64& rng) {
  const auto np = static_cast<Eigen::Index>(pb.parameter_axes.size());
  Eigen::MatrixXd c(np == 0 ? 0 : k, np);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < np; ++j) {
      const Interval& iv = box[pb.parameter_axes[j]];
      c(i, j) = std::uniform_real_distribution<double>(iv.lo, iv.hi)(rng);
    }
  return c;
}

Eigen::MatrixXd sample_interior(const ProblemSpec& pb, const std::vector<Interval>& box, int n,
                                const Eigen::MatrixXd& couples, std::mt19937_64& rng) {
  const auto pa = point_axes(pb);
  Eigen::MatrixXd base(n, pb.dim());
  base.setZero();
  for (int i = 0; i < n; ++i)
    for (int a : pa) base(i, a) = std::uniform_real_distribution<double>(box[a].lo, box[a].hi)(rng);
  if (couples.rows() == 0) return base;
  Eigen::MatrixXd out(n * couples.rows(), pb.dim());
  for (Eigen::Index c = 0; c < couples.rows(); ++c)
    for (int i = 0; i < n; ++i) {
      out.row(c * n + i) = base.row(i);
      for (std::size_t j = 0; j < pb.parameter_axes.size(); ++j) out(c * n + i, pb.parameter_axes[j]) = couples(c, j);
    }
  return out;
}

CollocationSet sample_boundary(const ReferenceData& ref, const std::vector<Interval>& box, int n,
                               const Eigen::MatrixXd& couples, std::mt19937_64& rng) {
  const ProblemSpec& pb = ref.problem();
  CollocationSet s = empty_set(pb, Region::Boundary);
  if (n <= 0 || (!pb.periodic && !has_fixed_bc(pb))) return s;
  const auto pa = point_axes(pb);
  const auto sa = spatial_axes(pb);
  s.points.resize(n, pb.dim());
  for (int i = 0; i < n; ++i) {
    for (int a : pa) s.points(i, a) = std::uniform_real_distribution<double>(box[a].lo, box[a].hi)(rng);
    if (pb.periodic) {
      s.points(i, pb.periodic->axis) = box[pb.periodic->axis].lo;
    } else {
      const int face = std::uniform_int_distribution<int>(0, 2 * static_cast<int>(sa.size()) - 1)(rng);
      const int a = sa[face / 2];
      s.points(i, a) = face % 2 == 0 ? box[a].lo : box[a].hi;
    }
    for (std::size_t j = 0; j < pb.parameter_axes.size(); ++j) {
      const int a = pb.parameter_axes[j];
      s.points(i, a) = couples.rows() > 0 ? couples(i % couples.rows(), j)
                                          : std::uniform_real_distribution<double>(box[a].lo, box[a].hi)(rng);
    }
  }
  if (pb.periodic) {
    s.periodic = pb.periodic;
    return s;
  }
  Eigen::MatrixXd vals(n, pb.outputs);
  std::vector<double> x(pb.dim());
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < pb.dim(); ++a) x[a] = s.points(i, a);
    vals.row(i) = boundary_value(pb, x).transpose();
  }
  s.values = std::move(vals);
  return s;
}

CollocationSet sample_initial(const ReferenceData& ref, const std::vector<Interval>& box, int n,
                              std::mt19937_64& rng) {
  const ProblemSpec& pb = ref.problem();
  CollocationSet s = empty_set(pb, Region::Initial);
  if (!pb.time_dependent() || n <= 0) return s;
  s.points.resize(n, pb.dim());
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < pb.dim(); ++a)
      s.points(i, a) = a == pb.time_axis ? pb.domain[a].lo
                                         : std::uniform_real_distribution<double>(box[a].lo, box[a].hi)(rng);
  Eigen::MatrixXd vals(n, pb.outputs);
  std::vector<double> x(pb.dim());
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < pb.dim(); ++a) x[a] = s.points(i, a);
    vals.row(i) = initial_value(pb, x).transpose();
  }
  s.values = std::move(vals);
  if (pb.name == ProblemName::Pendulum) s.jacobians = s.points.col(2);  // u_t(0) = v0
  return s;
}

TestData make_test(const ReferenceData& ref, const std::vector<Interval>& box, int cells,
                   const Eigen::MatrixXd& couples) {
  const ProblemSpec& pb = ref.problem();
  const auto pa = point_axes(pb);
  std::vector<std::string> names;
  std::vector<std::vector<double>> axes;
  for (int a : pa) {
    const double w = box[a].width() / cells;
    names.push_back(pb.coords[a]);
    axes.push_back(uniform_axis(box[a].lo + 0.5 * w, w, static_cast<std::size_t>(cells)));
  }
  GridField g(names, axes, pb.outputs);
  const auto per = static_cast<Eigen::Index>(g.point_count());
  const Eigen::Index nc = std::max<Eigen::Index>(1, couples.rows());
  TestData td;
  td.set = empty_set(pb, Region::Interior);
  td.set.points.resize(per * nc, pb.dim());
  for (Eigen::Index c = 0; c < nc; ++c)
    for (Eigen::Index p = 0; p < per; ++p) {
      const auto x = g.coords(static_cast<std::size_t>(p));
      for (std::size_t i = 0; i < pa.size(); ++i) td.set.points(c * per + p, pa[i]) = x[i];
      for (std::size_t j = 0; j < pb.parameter_axes.size(); ++j)
        td.set.points(c * per + p, pb.parameter_axes[j]) = couples(c, j);
    }
  if (pb.reference == ReferenceKind::Analytic)
    ref.fill(td.set, {false, true, false}, DerivativeSource::Analytic);
  else if (pb.name == ProblemName::Pendulum)
    ref.fill(td.set, {false, true, false}, DerivativeSource::Solver);
  else
    ref.fill(td.set, {}, DerivativeSource::None);
  td.set.meta["layout"] = "cell centers";
  td.set.meta["cells_per_axis"] = cells;
  if (pb.parameter_axes.empty()) {
    for (Eigen::Index p = 0; p < per; ++p)
      for (int k = 0; k < pb.outputs; ++k) g.data[p * pb.outputs + k] = (*td.set.values)(p, k);
    g.meta = {{"layout", "cell centers"}, {"problem", to_string(pb.name)}};
    td.grid = std::move(g);
  }
  return td;
}

CollocationSet restrict_to(const CollocationSet& set, const std::vector<Interval>& region,
                           const std::vector<Interval>& domain) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < set.size(); ++r) {
    bool in = true;
    for (int a = 0; a < set.dim() && in; ++a) {
      const double x = set.points(r, a);
      in = x >= region[a].lo && (x < region[a].hi || (region[a].hi >= domain[a].hi && x <= region[a].hi));
    }
    if (in) rows.push_back(r);
  }
  if (rows.empty()) fail(ErrorKind::Configuration, "a transfer stage region holds no test points; raise data.test_n");
  return set.subset(rows);
}

Datasets generate_datasets(const ExperimentConfig& cfg, const ReferenceData& ref) {
  const ProblemSpec& pb = ref.problem();
  const DataConfig& d = cfg.data;
  Datasets ds;
  const bool parametric = !pb.parameter_axes.empty();
  auto rc = stream(cfg.seed, kTrainCouples);
  const Eigen::MatrixXd couples = parametric ? sample_couples(pb, pb.domain, d.n_params_train, rc) : Eigen::MatrixXd();

  ds.interior = empty_set(pb, Region::Interior);
  if (d.sampling == Sampling::Grid) {
    const GridField& g = *ref.grid();
    std::vector<std::size_t> all(g.rank());
    for (std::size_t a = 0; a < all.size(); ++a) all[a] = a;
    const GridField thin = g.downsample(all, static_cast<std::size_t>(d.downsample));
    ds.interior.points.resize(static_cast<Eigen::Index>(thin.point_count()), pb.dim());
    for (std::size_t p = 0; p < thin.point_count(); ++p) {
      const auto x = thin.coords(p);
      for (int a = 0; a < pb.dim(); ++a) ds.interior.points(static_cast<Eigen::Index>(p), a) = x[a];
    }
    ds.interior.meta["sampling"] = "grid";
    ds.interior.meta["downsample"] = d.downsample;
  } else {
    auto ri = stream(cfg.seed, kInterior);
    ds.interior.points = sample_interior(pb, ref.box(), d.n_collocation, couples, ri);
    ds.interior.meta["sampling"] = "random";
  }
  ref.fill(ds.interior, method_targets(cfg.loss.method));
  if (d.noise_sigma > 0.0) ds.interior = add_noise(ds.interior, d.noise_sigma, cfg.seed * 1000003ULL + kNoise);

  if (d.n_boundary > 0 && (pb.periodic || has_fixed_bc(pb))) {
    auto rb = stream(cfg.seed, kBoundary);
    ds.boundary = sample_boundary(ref, pb.domain, d.n_boundary, couples, rb);
  }
  if (pb.time_dependent() && d.n_initial > 0) {
    auto r0 = stream(cfg.seed, kInitial);
    ds.initial = sample_initial(ref, pb.domain, d.n_initial, r0);
  }
  auto rt = stream(cfg.seed, kTestCouples);
  const Eigen::MatrixXd test_couples = parametric ? sample_couples(pb, pb.domain, d.n_params_test, rt) : Eigen::MatrixXd();
  ds.test = make_test(ref, ref.box(), d.test_n, test_couples);
  return ds;
}

TransferPlan make_transfer_plan(const ExperimentConfig& cfg, const ReferenceData& ref) {
  if (!cfg.transfer) fail(ErrorKind::Schema, "transfer: block is missing");
  const ProblemSpec& pb = ref.problem();
  const TransferConfig& tc = *cfg.transfer;
  const DataConfig& d = cfg.data;
  const bool parametric = !pb.parameter_axes.empty();
  TransferPlan plan;
  plan.student_mode = tc.student_mode;
  plan.distill_method = tc.distill_method;
  plan.replay_fraction = tc.replay_fraction;
  plan.distill_weight = tc.distill_weight;
  plan.weights = cfg.loss;
  plan.layer_dims = cfg.layer_dims;
  plan.seed = cfg.seed;

  std::optional<TestData> full_test;
  if (!parametric) full_test = make_test(ref, ref.box(), d.test_n, Eigen::MatrixXd());

  std::vector<Interval> cumulative;
  std::vector<Eigen::MatrixXd> couples_so_far;
  for (std::size_t i = 0; i < tc.stages.size(); ++i) {
    const StageConfig& sc = tc.stages[i];
    const std::uint64_t base = kStageBase + 16 * i;
    TransferStage st;
    st.id = sc.id;
    st.region = pb.domain;
    for (const auto& [name, iv] : sc.bounds) st.region[pb.axis(name)] = iv;
    const auto box = intersect(st.region, ref.box());
    if (i == 0) {
      cumulative = st.region;
    } else {
      for (int a = 0; a < pb.dim(); ++a)
        cumulative[a] = {std::min(cumulative[a].lo, st.region[a].lo), std::max(cumulative[a].hi, st.region[a].hi)};
    }

    auto rc = stream(cfg.seed, base + kTrainCouples);
    const Eigen::MatrixXd couples = parametric ? sample_couples(pb, st.region, sc.n_params, rc) : Eigen::MatrixXd();
    if (parametric) couples_so_far.push_back(couples);
    auto ri = stream(cfg.seed, base + kInterior);
    st.interior = sample_interior(pb, box, sc.n_collocation > 0 ? sc.n_collocation : d.n_collocation, couples, ri);

    auto rb = stream(cfg.seed, base + kBoundary);
    const Eigen::MatrixXd cum_couples =
        parametric ? stack(couples_so_far, static_cast<Eigen::Index>(pb.parameter_axes.size())) : Eigen::MatrixXd();
    st.boundary = sample_boundary(ref, cumulative, d.n_boundary, cum_couples, rb);
    if (pb.time_dependent() && d.n_initial > 0) {
      auto r0 = stream(cfg.seed, base + kInitial);
      st.initial = sample_initial(ref, pb.domain, d.n_initial, r0);
    }
    if (parametric) {
      auto rt = stream(cfg.seed, base + kTestCouples);
      st.test = make_test(ref, box, d.test_n, sample_couples(pb, st.region, d.n_params_test, rt)).set;
    } else {
      st.test = restrict_to(full_test->set, st.region, pb.domain);
    }
    st.train = sc.train;
    plan.stages.push_back(std::move(st));
  }
  plan.validate(pb);
  return plan;
}

// ---------------------------------------------------------------------------
// Runs

RunOutcome run_generate(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  Artifacts art{cfg.output, {}};
  fs::create_directories(cfg.output / "data");
  const ReferenceData ref(cfg);
  const Datasets ds = generate_datasets(cfg, ref);
  write_set(ds.interior, cfg.output / "data" / "interior.csv", art);
  if (ds.boundary) write_set(*ds.boundary, cfg.output / "data" / "boundary.csv", art);
  if (ds.initial) write_set(*ds.initial, cfg.output / "data" / "initial.csv", art);
  write_set(ds.test.set, cfg.output / "data" / "test.csv", art);
  if (ref.grid()) {
    save_grid(*ref.grid(), cfg.output / "data" / "reference.bin");
    art.add(cfg.output / "data" / "reference.bin");
    art.add(cfg.output / "data" / "reference.bin.json");
  }
  write_manifest(art, "generate", cfg, ms_since(t0));
  return {cfg.output, nlohmann::json::object()};
}

RunOutcome run_train(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  Artifacts art{cfg.output, {}};
  fs::create_directories(cfg.output / "data");
  const ReferenceData ref(cfg);
  const ProblemSpec& pb = ref.problem();
  const Datasets ds = generate_datasets(cfg, ref);
  write_set(ds.interior, cfg.output / "data" / "interior.csv", art);
  if (ds.boundary) write_set(*ds.boundary, cfg.output / "data" / "boundary.csv", art);
  if (ds.initial) write_set(*ds.initial, cfg.output / "data" / "initial.csv", art);
  write_set(ds.test.set, cfg.output / "data" / "test.csv", art);

  const Network net0 = init_network(cfg.layer_dims, cfg.seed);
  TrainResult tr = [&] {
    try {
      return train(net0, cfg.loss, pb, ds.interior, ds.boundary ? &*ds.boundary : nullptr,
                   ds.initial ? &*ds.initial : nullptr, cfg.train);
    } catch (const TrainingAborted& e) {
      save_network(e.last_good(), cfg.output / "network_last_good.json");
      throw;
    }
  }();
  save_network(tr.net, cfg.output / "network.json");
  art.add(cfg.output / "network.json");
  write_history(tr.history, cfg.output / "history.csv");
  art.add(cfg.output / "history.csv");

  const auto te = Clock::now();
  MetricsReport report = evaluate(pb, tr.net, ds.test.set);
  report.wall_ms = ms_since(te);
  const nlohmann::json metrics = metrics_json(cfg, report);
  write_json(metrics, cfg.output / "metrics.json");
  art.add(cfg.output / "metrics.json");
  if (ds.test.grid) {
    const GridField ef = error_field(pb, network_source(tr.net), *ds.test.grid);
    save_grid(ef, cfg.output / "error_field.bin");
    art.add(cfg.output / "error_field.bin");
    art.add(cfg.output / "error_field.bin.json");
    if (ef.point_count() <= 100000) {
      write_grid_csv(ef, cfg.output / "error_field.csv");
      art.add(cfg.output / "error_field.csv");
    }
  }
  nlohmann::json extra = {{"network_hash", tr.net.hash()}, {"evaluate_wall_ms", report.wall_ms}};
  if (tr.lbfgs_status) extra["lbfgs"] = {{"status", to_string(*tr.lbfgs_status)}, {"iterations", tr.lbfgs_iterations}};
  write_manifest(art, "train", cfg, ms_since(t0), extra);
  return {cfg.output, metrics};
}

RunOutcome run_transfer(const ExperimentConfig& cfg) {
  const auto t0 = Clock::now();
  if (!cfg.transfer) fail(ErrorKind::Schema, "transfer: block is missing");
  Artifacts art{cfg.output, {}};
  fs::create_directories(cfg.output);
  const ReferenceData ref(cfg);
  const ProblemSpec& pb = ref.problem();
  const TransferPlan plan = make_transfer_plan(cfg, ref);

  const auto pipeline = [&](const TransferPlan& p, const fs::path& dir, const StageResult* first) {
    const StageCallback save = [&](std::size_t, const StageResult& s) { save_stage(s, dir / "stages" / s.id, art); };
    TransferResult res = run_transfer_pipeline(p, pb, save, first);
    save_network(res.final_net(), dir / "network.json");
    art.add(dir / "network.json");
    write_history(chained_history(res.stages), dir / "history.csv");
    art.add(dir / "history.csv");
    return res;
  };

  const TransferResult main = pipeline(plan, cfg.output, nullptr);
  nlohmann::json metrics = to_json(main.stages.back().metrics.full);
  metrics["name"] = cfg.name;
  metrics["problem"] = to_string(pb.name);
  metrics["method"] = to_string(plan.distill_method);
  metrics["student_mode"] = to_string(plan.student_mode);
  metrics["seed"] = cfg.seed;
  metrics["stages"] = nlohmann::json::array();
  for (const auto& s : main.stages) metrics["stages"].push_back(stage_json(s));

  nlohmann::json baselines = nlohmann::json::object();
  for (TransferBaseline b : cfg.transfer->baselines) {
    const std::string name = to_string(b);
    const fs::path dir = cfg.output / "baselines" / name;
    fs::create_directories(dir);
    if (b == TransferBaseline::PinnFull) {
      const StageResult s = run_pinn_full(plan, pb);
      save_stage(s, dir, art);
      baselines[name] = stage_json(s);
      continue;
    }
    TransferPlan alt = plan;
    alt.distill_method = b == TransferBaseline::Replay ? DistillMethod::Replay : DistillMethod::None;
    const TransferResult r = pipeline(alt, dir, &main.stages.front());
    nlohmann::json j = to_json(r.stages.back().metrics.full);
    j["stages"] = nlohmann::json::array();
    for (const auto& s : r.stages) j["stages"].push_back(stage_json(s));
    baselines[name] = j;
  }
  if (!baselines.empty()) metrics["baselines"] = baselines;
  write_json(metrics, cfg.output / "metrics.json");
  art.add(cfg.output / "metrics.json");
  write_manifest(art, "transfer", cfg, ms_since(t0), {{"network_hash", main.final_net().hash()}});
  return {cfg.output, metrics};
}

RunOutcome run_evaluate(const ExperimentConfig& cfg, const fs::path& network) {
  const auto t0 = Clock::now();
  Artifacts art{cfg.output, {}};
  fs::create_directories(cfg.output);
  const Network net = load_network(network);
  const ReferenceData ref(cfg);
  const ProblemSpec& pb = ref.problem();
  if (net.input_dim() != pb.dim() || net.output_dim() != pb.outputs)
    fail(ErrorKind::Shape, "network " + network.string() + " does not match " + to_string(pb.name));
  auto rt = stream(cfg.seed, kTestCouples);
  const Eigen::MatrixXd couples =
      pb.parameter_axes.empty() ? Eigen::MatrixXd() : sample_couples(pb, pb.domain, cfg.data.n_params_test, rt);
  const TestData test = make_test(ref, ref.box(), cfg.data.test_n, couples);
  MetricsReport report = evaluate(pb, net, test.set);
  report.wall_ms = ms_since(t0);
  nlohmann::json metrics = metrics_json(cfg, report);
  metrics["network_hash"] = net.hash();
  write_json(metrics, cfg.output / "evaluation.json");
  art.add(cfg.output / "evaluation.json");
  if (test.grid) {
    const GridField ef = error_field(pb, network_source(net), *test.grid);
    save_grid(ef, cfg.output / "evaluation_error_field.bin");
    art.add(cfg.output / "evaluation_error_field.bin");
    art.add(cfg.output / "evaluation_error_field.bin.json");
  }
  write_manifest(art, "evaluate", cfg, ms_since(t0), {{"network", network.string()}});
  return {cfg.output, metrics};
}

// ---------------------------------------------------------------------------
// Report and diff

std::size_t run_report(const std::vector<fs::path>& dirs, const fs::path& out_csv) {
  if (dirs.empty()) fail(ErrorKind::Configuration, "report needs at least one run directory");
  struct Row {
    fs::path dir;
    std::optional<nlohmann::json> m;
  };
  std::vector<Row> rows;
  std::optional<std::string> problem;
  for (const auto& d : dirs) {
    Row r{d, std::nullopt};
    const fs::path p = d / "metrics.json";
    if (fs::exists(p)) {
      r.m = read_json(p);
      const std::string pr = r.m->value("problem", "");
      if (problem && pr != *problem)
        fail(ErrorKind::Configuration,
             "report mixes problems '" + *problem + "' and '" + pr + "'; compare runs of one problem at a time");
      problem = pr;
    }
    rows.push_back(std::move(r));
  }
  static const std::vector<std::string> order = {"DERL", "OUTL", "OUTL_PINN", "SOB",  "HESL",
                                                 "DER_HESL", "SOB_HES", "PINN", "OUTL+PINN"};
  const auto rank = [](const Row& r) -> std::size_t {
    if (!r.m) return order.size() + 1;
    const auto it = std::find(order.begin(), order.end(), r.m->value("method", ""));
    return static_cast<std::size_t>(it - order.begin());
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
    if (rank(a) != rank(b)) return rank(a) < rank(b);
    const auto sa = a.m ? a.m->value("seed", 0ULL) : 0ULL, sb = b.m ? b.m->value("seed", 0ULL) : 0ULL;
    if (sa != sb) return sa < sb;
    return a.dir < b.dir;
  });

  std::vector<std::string> residual_cols;
  for (const auto& r : rows)
    if (r.m && r.m->contains("residual_norms"))
      for (auto& [k, v] : (*r.m)["residual_norms"].items())
        if (std::find(residual_cols.begin(), residual_cols.end(), k) == residual_cols.end()) residual_cols.push_back(k);
  const std::vector<std::string> extras = {"vorticity_err", "g_residual", "field_err_t0"};

  std::FILE* f = std::fopen(out_csv.c_str(), "w");
  if (!f) fail(ErrorKind::Io, "cannot write " + out_csv.string());
  std::fprintf(f, "run,status,problem,method,seed,l2_u,l2_du,residual");
  for (const auto& c : residual_cols) std::fprintf(f, ",residual_%s", c.c_str());
  for (const auto& c : extras) std::fprintf(f, ",%s", c.c_str());
  std::fprintf(f, "\n");
  const auto num = [&](const nlohmann::json& j, const std::string& key) {
    if (j.contains(key) && j[key].is_number()) std::fprintf(f, ",%.10g", j[key].get<double>());
    else std::fprintf(f, ",");
  };
  std::size_t flagged = 0;
  for (const auto& r : rows) {
    if (!r.m) {
      ++flagged;
      std::fprintf(f, "%s,missing_metrics,,,,,,", r.dir.string().c_str());
      for (std::size_t i = 0; i < residual_cols.size() + extras.size(); ++i) std::fprintf(f, ",");
      std::fprintf(f, "\n");
      continue;
    }
    const nlohmann::json& m = *r.m;
    std::fprintf(f, "%s,ok,%s,%s,%llu", r.dir.string().c_str(), m.value("problem", "").c_str(),
                 m.value("method", "").c_str(), static_cast<unsigned long long>(m.value("seed", 0ULL)));
    num(m, "l2_u");
    num(m, "l2_du");
    num(m, "residual");
    for (const auto& c : residual_cols) num(m.contains("residual_norms") ? m["residual_norms"] : nlohmann::json(), c);
    const nlohmann::json ex = m.contains("extras") ? m["extras"] : m;
    for (const auto& c : extras) num(ex, c);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
  return flagged;
}

void run_diff(const fs::path& a, const fs::path& b, const fs::path& out) {
  const auto field = [](const fs::path& p) {
    return load_grid(fs::is_directory(p) ? p / "error_field.bin" : p);
  };
  const GridField d = diff_fields(field(a), field(b));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_grid(d, out);
  fs::path csv = out;
  csv += ".csv";
  write_grid_csv(d, csv);
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace derivlab
