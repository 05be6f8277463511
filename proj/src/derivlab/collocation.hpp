#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace derivlab {

enum class Region { Interior, Boundary, Initial };

std::string to_string(Region region);
Region region_from_string(const std::string& name);

// Boundary sets for periodic problems: each point p is paired with
// p + period * e_axis and the BC loss compares the network at both.
struct PeriodicPairing {
  int axis = 0;
  double period = 0.0;
};

// Points in the (time x) space (x parameter) domain with optional targets.
//
// Derivative targets only cover `derivative_axes` (parameters are not
// differentiated). With k = derivative_axes.size():
//   jacobians: n x (m*k), column  out*k + a
//   hessians:  n x (m*k*k), column (out*k + a)*k + b, symmetric in (a, b)
struct CollocationSet {
  Region region = Region::Interior;
  Eigen::MatrixXd points;
  std::vector<std::string> coord_names;
  int outputs = 1;
  std::vector<int> derivative_axes;
  std::optional<Eigen::MatrixXd> values;
  std::optional<Eigen::MatrixXd> jacobians;
  std::optional<Eigen::MatrixXd> hessians;
  std::optional<PeriodicPairing> periodic;
  int time_axis = -1;
  double t0 = 0.0;
  nlohmann::json meta = nlohmann::json::object();

  Eigen::Index size() const noexcept { return points.rows(); }
  int dim() const noexcept { return static_cast<int>(points.cols()); }
  int derivative_count() const noexcept { return static_cast<int>(derivative_axes.size()); }

  // Checks every present target array against the point count and the
  // initial-time invariant. Throws ErrorKind::Shape / Specification.
  void validate() const;

  CollocationSet subset(std::span<const Eigen::Index> rows) const;
};

// Stacks sets with identical layout (targets present in all or none).
CollocationSet concatenate(const std::vector<const CollocationSet*>& sets);

// Columnar CSV (coordinates, u<k>, du<k>_dx<a>, d2u<k>_dx<a>dx<b> with a<=b)
// plus a sidecar manifest `<stem>.json`.
void write_collocation(const CollocationSet& set, const std::filesystem::path& csv_path);
CollocationSet read_collocation(const std::filesystem::path& csv_path);

}  // namespace derivlab
