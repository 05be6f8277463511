#include "derivlab/grid_field.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include "derivlab/error.hpp"

namespace derivlab {

GridField::GridField(std::vector<std::string> names, std::vector<std::vector<double>> ax, int comps)
    : axis_names(std::move(names)), axes(std::move(ax)), components(comps) {
  if (axis_names.size() != axes.size()) fail(ErrorKind::Shape, "grid axis names and axes differ in count");
  if (components < 1) fail(ErrorKind::Shape, "grid needs at least one component");
  data.assign(point_count() * static_cast<std::size_t>(components), 0.0);
}

std::vector<std::size_t> GridField::shape() const {
  std::vector<std::size_t> s;
  for (const auto& a : axes) s.push_back(a.size());
  return s;
}

std::size_t GridField::point_count() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.size();
  return n;
}

std::size_t GridField::flat(std::span<const std::size_t> index) const {
  if (index.size() != axes.size()) fail(ErrorKind::Shape, "grid index has the wrong rank");
  std::size_t f = 0;
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (index[i] >= axes[i].size()) fail(ErrorKind::Shape, "grid index out of range");
    f = f * axes[i].size() + index[i];
  }
  return f;
}

double& GridField::at(std::span<const std::size_t> index, int component) {
  return data[flat(index) * components + component];
}

double GridField::at(std::span<const std::size_t> index, int component) const {
  return data[flat(index) * components + component];
}

std::vector<double> GridField::coords(std::size_t p) const {
  std::vector<double> c(axes.size());
  for (std::size_t i = axes.size(); i-- > 0;) {
    c[i] = axes[i][p % axes[i].size()];
    p /= axes[i].size();
  }
  return c;
}

void GridField::validate() const {
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i].empty()) fail(ErrorKind::Shape, "grid axis '" + axis_names[i] + "' is empty");
    for (std::size_t j = 1; j < axes[i].size(); ++j)
      if (!(axes[i][j] > axes[i][j - 1]))
        fail(ErrorKind::Shape, "grid axis '" + axis_names[i] + "' is not strictly increasing");
  }
  if (data.size() != point_count() * static_cast<std::size_t>(components))
    fail(ErrorKind::Shape, "grid data size does not match the axes");
}

GridField GridField::downsample(std::span<const std::size_t> thin, std::size_t factor) const {
  if (factor == 0) fail(ErrorKind::Configuration, "downsample factor must be >= 1");
  std::vector<std::vector<std::size_t>> keep(axes.size());
  std::vector<std::vector<double>> new_axes(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    bool t = false;
    for (std::size_t a : thin) t = t || a == i;
    for (std::size_t j = 0; j < axes[i].size(); j += t ? factor : 1) {
      keep[i].push_back(j);
      new_axes[i].push_back(axes[i][j]);
    }
  }
  GridField out(axis_names, new_axes, components);
  out.meta = meta;
  out.meta["downsample_factor"] = factor;
  std::vector<std::size_t> src(axes.size());
  for (std::size_t p = 0; p < out.point_count(); ++p) {
    std::size_t q = p;
    for (std::size_t i = axes.size(); i-- > 0;) {
      src[i] = keep[i][q % keep[i].size()];
      q /= keep[i].size();
    }
    const std::size_t f = flat(src);
    for (int c = 0; c < components; ++c) out.data[p * components + c] = data[f * components + c];
  }
  return out;
}

std::vector<double> uniform_axis(double lo, double step, std::size_t n) {
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = lo + static_cast<double>(i) * step;
  return a;
}

void save_grid(const GridField& field, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "grid files are little-endian");
  field.validate();
  std::ofstream bin(path, std::ios::binary);
  if (!bin) fail(ErrorKind::Io, "cannot write " + path.string());
  bin.write(reinterpret_cast<const char*>(field.data.data()),
            static_cast<std::streamsize>(field.data.size() * sizeof(double)));
  nlohmann::json h;
  h["format"] = "derivlab.grid";
  h["dtype"] = "f64";
  h["order"] = "row-major, components fastest";
  h["axis_names"] = field.axis_names;
  h["axes"] = field.axes;
  h["shape"] = field.shape();
  h["components"] = field.components;
  h["meta"] = field.meta;
  std::ofstream js(path.string() + ".json");
  if (!js) fail(ErrorKind::Io, "cannot write " + path.string() + ".json");
  js << h.dump(2) << "\n";
}

GridField load_grid(const std::filesystem::path& path) {
  std::ifstream js(path.string() + ".json");
  if (!js) fail(ErrorKind::Io, "cannot read " + path.string() + ".json");
  nlohmann::json h;
  try {
    js >> h;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, "grid header: " + std::string(e.what()));
  }
  if (h.value("format", "") != "derivlab.grid" || h.value("dtype", "") != "f64")
    fail(ErrorKind::Schema, "not a derivlab f64 grid header");
  GridField g(h.at("axis_names").get<std::vector<std::string>>(), h.at("axes").get<std::vector<std::vector<double>>>(),
              h.at("components").get<int>());
  g.meta = h.value("meta", nlohmann::json::object());
  std::ifstream bin(path, std::ios::binary);
  if (!bin) fail(ErrorKind::Io, "cannot read " + path.string());
  bin.read(reinterpret_cast<char*>(g.data.data()), static_cast<std::streamsize>(g.data.size() * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(g.data.size() * sizeof(double)))
    fail(ErrorKind::Io, "grid data in " + path.string() + " is truncated");
  return g;
}

void write_grid_csv(const GridField& field, const std::filesystem::path& path) {
  field.validate();
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& n : field.axis_names) std::fprintf(f, "%s,", n.c_str());
  for (int c = 0; c < field.components; ++c) std::fprintf(f, "c%d%s", c, c + 1 < field.components ? "," : "\n");
  for (std::size_t p = 0; p < field.point_count(); ++p) {
    for (double x : field.coords(p)) std::fprintf(f, "%.17g,", x);
    for (int c = 0; c < field.components; ++c)
      std::fprintf(f, "%.17g%s", field.data[p * field.components + c], c + 1 < field.components ? "," : "\n");
  }
  std::fclose(f);
}

}  // namespace derivlab
