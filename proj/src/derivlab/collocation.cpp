#include "derivlab/collocation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "derivlab/error.hpp"

namespace derivlab {

std::string to_string(Region region) {
  switch (region) {
    case Region::Interior: return "interior";
    case Region::Boundary: return "boundary";
    case Region::Initial: return "initial";
  }
  return "interior";
}

Region region_from_string(const std::string& name) {
  if (name == "interior") return Region::Interior;
  if (name == "boundary") return Region::Boundary;
  if (name == "initial") return Region::Initial;
  fail(ErrorKind::Schema, "unknown region tag '" + name + "'");
}

void CollocationSet::validate() const {
  const Eigen::Index n = size();
  const int k = derivative_count();
  auto check = [&](const std::optional<Eigen::MatrixXd>& arr, Eigen::Index cols, const char* name) {
    if (!arr) return;
    if (arr->rows() != n)
      fail(ErrorKind::Shape, std::string(name) + " has " + std::to_string(arr->rows()) +
                                 " rows, expected " + std::to_string(n));
    if (arr->cols() != cols)
      fail(ErrorKind::Shape, std::string(name) + " has " + std::to_string(arr->cols()) +
                                 " columns, expected " + std::to_string(cols));
  };
  check(values, outputs, "values");
  check(jacobians, static_cast<Eigen::Index>(outputs) * k, "jacobians");
  check(hessians, static_cast<Eigen::Index>(outputs) * k * k, "hessians");
  if (!coord_names.empty() && static_cast<int>(coord_names.size()) != dim())
    fail(ErrorKind::Shape, "coord_names does not match point dimension");
  for (int a : derivative_axes) {
    if (a < 0 || a >= dim()) fail(ErrorKind::Axis, "derivative axis " + std::to_string(a) + " out of range");
  }
  if (region == Region::Initial) {
    if (time_axis < 0 || time_axis >= dim())
      fail(ErrorKind::Specification, "initial set without a time axis");
    for (Eigen::Index p = 0; p < n; ++p) {
      if (points(p, time_axis) != t0)
        fail(ErrorKind::Specification, "initial set point " + std::to_string(p) + " is not at t0");
    }
  }
}

CollocationSet CollocationSet::subset(std::span<const Eigen::Index> rows) const {
  CollocationSet out = *this;
  auto take = [&](const Eigen::MatrixXd& src) {
    Eigen::MatrixXd dst(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) dst.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    return dst;
  };
  out.points = take(points);
  if (values) out.values = take(*values);
  if (jacobians) out.jacobians = take(*jacobians);
  if (hessians) out.hessians = take(*hessians);
  return out;
}

CollocationSet concatenate(const std::vector<const CollocationSet*>& sets) {
  if (sets.empty()) fail(ErrorKind::EmptyBatch, "nothing to concatenate");
  CollocationSet out = *sets.front();
  Eigen::Index n = 0;
  for (const auto* s : sets) {
    if (s->dim() != out.dim() || s->outputs != out.outputs ||
        s->derivative_axes != out.derivative_axes || s->values.has_value() != out.values.has_value() ||
        s->jacobians.has_value() != out.jacobians.has_value() ||
        s->hessians.has_value() != out.hessians.has_value())
      fail(ErrorKind::Shape, "cannot concatenate collocation sets with different layouts");
    n += s->size();
  }
  auto stack = [&](auto member) {
    const Eigen::Index cols = ((*sets.front()).*member).cols();
    Eigen::MatrixXd dst(n, cols);
    Eigen::Index row = 0;
    for (const auto* s : sets) {
      const Eigen::MatrixXd& src = (*s).*member;
      dst.middleRows(row, src.rows()) = src;
      row += src.rows();
    }
    return dst;
  };
  out.points = stack(&CollocationSet::points);
  auto stack_opt = [&](std::optional<Eigen::MatrixXd> CollocationSet::*member) {
    if (!((*sets.front()).*member)) return;
    const Eigen::Index cols = ((*sets.front()).*member)->cols();
    Eigen::MatrixXd dst(n, cols);
    Eigen::Index row = 0;
    for (const auto* s : sets) {
      const Eigen::MatrixXd& src = *((*s).*member);
      dst.middleRows(row, src.rows()) = src;
      row += src.rows();
    }
    out.*member = std::move(dst);
  };
  stack_opt(&CollocationSet::values);
  stack_opt(&CollocationSet::jacobians);
  stack_opt(&CollocationSet::hessians);
  return out;
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".json");
  return p;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_collocation(const CollocationSet& set, const std::filesystem::path& csv_path) {
  set.validate();
  const int d = set.dim();
  const int m = set.outputs;
  const int k = set.derivative_count();
  std::vector<std::string> names = set.coord_names;
  if (names.empty()) {
    for (int i = 0; i < d; ++i) names.push_back("x" + std::to_string(i));
  }

  std::ofstream out(csv_path);
  if (!out) fail(ErrorKind::Io, "cannot write " + csv_path.string());
  std::vector<std::string> header = names;
  if (set.values)
    for (int o = 0; o < m; ++o) header.push_back("u" + std::to_string(o));
  if (set.jacobians)
    for (int o = 0; o < m; ++o)
      for (int a = 0; a < k; ++a)
        header.push_back("du" + std::to_string(o) + "_dx" + std::to_string(set.derivative_axes[a]));
  if (set.hessians)
    for (int o = 0; o < m; ++o)
      for (int a = 0; a < k; ++a)
        for (int b = a; b < k; ++b)
          header.push_back("d2u" + std::to_string(o) + "_dx" + std::to_string(set.derivative_axes[a]) +
                           "dx" + std::to_string(set.derivative_axes[b]));
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';

  for (Eigen::Index p = 0; p < set.size(); ++p) {
    std::string line;
    for (int i = 0; i < d; ++i) line += (i ? "," : "") + fmt(set.points(p, i));
    if (set.values)
      for (int o = 0; o < m; ++o) line += "," + fmt((*set.values)(p, o));
    if (set.jacobians)
      for (int c = 0; c < m * k; ++c) line += "," + fmt((*set.jacobians)(p, c));
    if (set.hessians)
      for (int o = 0; o < m; ++o)
        for (int a = 0; a < k; ++a)
          for (int b = a; b < k; ++b) line += "," + fmt((*set.hessians)(p, (o * k + a) * k + b));
    out << line << '\n';
  }

  nlohmann::json manifest;
  manifest["region"] = to_string(set.region);
  manifest["coord_names"] = names;
  manifest["outputs"] = m;
  manifest["derivative_axes"] = set.derivative_axes;
  manifest["rows"] = set.size();
  manifest["has_values"] = set.values.has_value();
  manifest["has_jacobians"] = set.jacobians.has_value();
  manifest["has_hessians"] = set.hessians.has_value();
  manifest["time_axis"] = set.time_axis;
  manifest["t0"] = set.t0;
  if (set.periodic) manifest["periodic"] = {{"axis", set.periodic->axis}, {"period", set.periodic->period}};
  manifest["meta"] = set.meta;
  std::ofstream mf(manifest_path(csv_path));
  if (!mf) fail(ErrorKind::Io, "cannot write manifest for " + csv_path.string());
  mf << manifest.dump(2) << '\n';
}

CollocationSet read_collocation(const std::filesystem::path& csv_path) {
  std::ifstream mf(manifest_path(csv_path));
  if (!mf) fail(ErrorKind::Io, "missing manifest for " + csv_path.string());
  nlohmann::json manifest;
  CollocationSet set;
  try {
    mf >> manifest;
    set.region = region_from_string(manifest.at("region").get<std::string>());
    set.coord_names = manifest.at("coord_names").get<std::vector<std::string>>();
    set.outputs = manifest.at("outputs").get<int>();
    set.derivative_axes = manifest.at("derivative_axes").get<std::vector<int>>();
    set.time_axis = manifest.value("time_axis", -1);
    set.t0 = manifest.value("t0", 0.0);
    if (manifest.contains("periodic"))
      set.periodic = PeriodicPairing{manifest["periodic"].at("axis").get<int>(),
                                     manifest["periodic"].at("period").get<double>()};
    set.meta = manifest.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, csv_path.string() + " manifest: " + e.what());
  }
  const bool has_values = manifest.value("has_values", false);
  const bool has_jac = manifest.value("has_jacobians", false);
  const bool has_hess = manifest.value("has_hessians", false);

  std::ifstream in(csv_path);
  if (!in) fail(ErrorKind::Io, "cannot read " + csv_path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }

  const int d = static_cast<int>(set.coord_names.size());
  const int m = set.outputs;
  const int k = set.derivative_count();
  const int pairs = k * (k + 1) / 2;
  const std::size_t width = d + (has_values ? m : 0) + (has_jac ? m * k : 0) + (has_hess ? m * pairs : 0);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  set.points.resize(n, d);
  if (has_values) set.values = Eigen::MatrixXd(n, m);
  if (has_jac) set.jacobians = Eigen::MatrixXd(n, m * k);
  if (has_hess) set.hessians = Eigen::MatrixXd(n, m * k * k);
  for (Eigen::Index p = 0; p < n; ++p) {
    const auto& row = rows[p];
    if (row.size() != width)
      fail(ErrorKind::Shape, csv_path.string() + ": row " + std::to_string(p) + " has " +
                                 std::to_string(row.size()) + " cells, expected " + std::to_string(width));
    std::size_t c = 0;
    for (int i = 0; i < d; ++i) set.points(p, i) = row[c++];
    if (has_values)
      for (int o = 0; o < m; ++o) (*set.values)(p, o) = row[c++];
    if (has_jac)
      for (int j = 0; j < m * k; ++j) (*set.jacobians)(p, j) = row[c++];
    if (has_hess)
      for (int o = 0; o < m; ++o)
        for (int a = 0; a < k; ++a)
          for (int b = a; b < k; ++b) {
            const double v = row[c++];
            (*set.hessians)(p, (o * k + a) * k + b) = v;
            (*set.hessians)(p, (o * k + b) * k + a) = v;
          }
  }
  set.validate();
  return set;
}

}  // namespace derivlab
