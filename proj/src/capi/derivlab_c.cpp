#include "derivlab.h"

#include <exception>
#include <string>
#include <vector>

#include "derivlab/config.hpp"
#include "derivlab/experiment.hpp"
#include "derivlab/jets.hpp"
#include "derivlab/network.hpp"

struct dl_network {
  derivlab::Network net;
};

namespace {

thread_local std::string g_error;

dl_status status_of(derivlab::ErrorKind kind) {
  using derivlab::ErrorKind;
  switch (kind) {
    case ErrorKind::Schema:
    case ErrorKind::Configuration: return DL_ERR_SCHEMA;
    case ErrorKind::Shape:
    case ErrorKind::Axis: return DL_ERR_SHAPE;
    case ErrorKind::Numerical:
    case ErrorKind::Stability:
    case ErrorKind::Divergence: return DL_ERR_NUMERICAL;
    case ErrorKind::EmptyBatch:
    case ErrorKind::Specification:
    case ErrorKind::Capability:
    case ErrorKind::Domain:
    case ErrorKind::Boundary: return DL_ERR_SPEC;
    case ErrorKind::Io: return DL_ERR_IO;
    case ErrorKind::Runtime: return DL_ERR_RUNTIME;
  }
  return DL_ERR_RUNTIME;
}

template <class Fn>
dl_status guarded(Fn&& fn) {
  try {
    fn();
    g_error.clear();
    return DL_OK;
  } catch (const derivlab::Error& e) {
    g_error = std::string(derivlab::to_string(e.kind())) + " error: " + e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_error = std::string("runtime error: ") + e.what();
    return DL_ERR_RUNTIME;
  } catch (...) {
    g_error = "unknown error";
    return DL_ERR_RUNTIME;
  }
}

dl_status argument(const char* message) {
  g_error = std::string("argument error: ") + message;
  return DL_ERR_ARGUMENT;
}

derivlab::ExperimentConfig load(const dl_run_options* o) {
  derivlab::LoadOptions lo;
  lo.full = o->full != 0;
  if (o->has_seed) lo.seed = o->seed;
  if (o->out_dir) lo.output = o->out_dir;
  return derivlab::load_config(o->config_path, lo);
}

}  // namespace

extern "C" {

const char* dl_last_error(void) { return g_error.c_str(); }

const char* dl_version(void) { return "0.1.0"; }

int dl_exit_code(dl_status s) {
  if (s == DL_OK) return 0;
  return s == DL_ERR_SCHEMA ? 2 : 1;
}

dl_status dl_network_create(const int* dims, size_t count, uint64_t seed, dl_network** out) {
  if (!dims || !out) return argument("null pointer");
  return guarded([&] {
    *out = new dl_network{derivlab::init_network(std::vector<int>(dims, dims + count), seed)};
  });
}

dl_status dl_network_load(const char* path, dl_network** out) {
  if (!path || !out) return argument("null pointer");
  return guarded([&] { *out = new dl_network{derivlab::load_network(path)}; });
}

dl_status dl_network_save(const dl_network* net, const char* path) {
  if (!net || !path) return argument("null pointer");
  return guarded([&] { derivlab::save_network(net->net, path); });
}

void dl_network_free(dl_network* net) { delete net; }

dl_status dl_network_dims(const dl_network* net, int* dims, size_t capacity, size_t* count) {
  if (!net || !count) return argument("null pointer");
  const auto& d = net->net.layer_dims();
  *count = d.size();
  if (dims)
    for (size_t i = 0; i < d.size() && i < capacity; ++i) dims[i] = d[i];
  g_error.clear();
  return DL_OK;
}

dl_status dl_network_forward(const dl_network* net, const double* x, size_t nx, double* y, size_t ny) {
  if (!net || !x || !y) return argument("null pointer");
  if (ny != static_cast<size_t>(net->net.output_dim())) return argument("output buffer size differs from output dim");
  return guarded([&] {
    const Eigen::VectorXd v = net->net.forward({x, nx});
    for (size_t i = 0; i < ny; ++i) y[i] = v[static_cast<Eigen::Index>(i)];
  });
}

dl_status dl_network_input_derivatives(const dl_network* net, const double* x, size_t nx, int order, double* value,
                                       double* jacobian, double* hessian) {
  if (!net || !x || !value || !jacobian) return argument("null pointer");
  if (order < 1 || order > 2) return argument("order must be 1 or 2");
  if (order == 2 && !hessian) return argument("order 2 needs a hessian buffer");
  return guarded([&] {
    const auto d = derivlab::input_derivatives(net->net, {x, nx}, order);
    const auto m = d.value.size(), n = d.jacobian.cols();
    for (Eigen::Index o = 0; o < m; ++o) {
      value[o] = d.value[o];
      for (Eigen::Index a = 0; a < n; ++a) {
        jacobian[o * n + a] = d.jacobian(o, a);
        if (order == 2)
          for (Eigen::Index b = 0; b < n; ++b) hessian[(o * n + a) * n + b] = d.hessian[o](a, b);
      }
    }
  });
}

dl_status dl_generate(const dl_run_options* o) {
  if (!o || !o->config_path) return argument("config_path is required");
  return guarded([&] { derivlab::run_generate(load(o)); });
}

dl_status dl_train(const dl_run_options* o) {
  if (!o || !o->config_path) return argument("config_path is required");
  return guarded([&] {
    const auto cfg = load(o);
    if (cfg.transfer) derivlab::run_transfer(cfg);
    else derivlab::run_train(cfg);
  });
}

dl_status dl_transfer(const dl_run_options* o) {
  if (!o || !o->config_path) return argument("config_path is required");
  return guarded([&] { derivlab::run_transfer(load(o)); });
}

dl_status dl_evaluate(const dl_run_options* o, const char* network_path) {
  if (!o || !o->config_path || !network_path) return argument("config_path and network_path are required");
  return guarded([&] { derivlab::run_evaluate(load(o), network_path); });
}

dl_status dl_report(const char* const* dirs, size_t count, const char* out_csv) {
  if (!dirs || !out_csv) return argument("null pointer");
  std::size_t flagged = 0;
  const dl_status s = guarded([&] {
    std::vector<std::filesystem::path> list(dirs, dirs + count);
    flagged = derivlab::run_report(list, out_csv);
  });
  if (s != DL_OK) return s;
  if (flagged > 0) {
    g_error = "io error: " + std::to_string(flagged) + " run(s) have no metrics.json (flagged in the table)";
    return DL_ERR_IO;
  }
  return DL_OK;
}

dl_status dl_diff(const char* a, const char* b, const char* out) {
  if (!a || !b || !out) return argument("null pointer");
  return guarded([&] { derivlab::run_diff(a, b, out); });
}

}  // extern "C"
