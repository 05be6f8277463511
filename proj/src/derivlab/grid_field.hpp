#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace derivlab {

// Dense samples on a tensor grid. Storage is row-major over the axes in
// order (time first when present) with components fastest.
struct GridField {
  std::vector<std::string> axis_names;
  std::vector<std::vector<double>> axes;
  int components = 1;
  std::vector<double> data;
  nlohmann::json meta = nlohmann::json::object();

  GridField() = default;
  GridField(std::vector<std::string> names, std::vector<std::vector<double>> axes, int components);

  std::size_t rank() const noexcept { return axes.size(); }
  std::vector<std::size_t> shape() const;
  std::size_t point_count() const;

  std::size_t flat(std::span<const std::size_t> index) const;
  double& at(std::span<const std::size_t> index, int component = 0);
  double at(std::span<const std::size_t> index, int component = 0) const;

  // Coordinates of the grid point with flat point index `p`.
  std::vector<double> coords(std::size_t p) const;

  // Throws ErrorKind::Shape when data size disagrees with the axes, or an
  // axis is not strictly increasing.
  void validate() const;

  // Keeps every `factor`-th node along the listed axes.
  GridField downsample(std::span<const std::size_t> axes_to_thin, std::size_t factor) const;
};

// Uniform axis lo, lo + step, ... with n nodes.
std::vector<double> uniform_axis(double lo, double step, std::size_t n);

// Flat little-endian f64 array plus `<path>.json` header.
void save_grid(const GridField& field, const std::filesystem::path& path);
GridField load_grid(const std::filesystem::path& path);

// One row per grid point: coordinates then components.
void write_grid_csv(const GridField& field, const std::filesystem::path& path);

}  // namespace derivlab
