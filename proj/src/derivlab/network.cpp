#include "derivlab/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "derivlab/error.hpp"

namespace derivlab {

namespace {

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) fail(ErrorKind::Configuration, "layer_dims needs at least 2 entries");
  for (int d : dims) {
    if (d < 1) fail(ErrorKind::Configuration, "layer_dims entries must be >= 1");
  }
}

}  // namespace

Network::Network(std::vector<int> layer_dims, Activation activation)
    : dims_(std::move(layer_dims)), activation_(activation) {
  check_dims(dims_);
  layers_.reserve(dims_.size() - 1);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    layers_.push_back({Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]),
                       Eigen::VectorXd::Zero(dims_[l + 1])});
  }
}

Eigen::Index Network::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Eigen::VectorXd Network::parameters() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index k = 0;
  for (const auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) flat[k++] = layer.weight(r, c);
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) flat[k++] = layer.bias[r];
  }
  return flat;
}

void Network::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count())
    fail(ErrorKind::Shape, "parameter vector has " + std::to_string(flat.size()) +
                               " entries, network expects " +
                               std::to_string(parameter_count()));
  Eigen::Index k = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = flat[k++];
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = flat[k++];
  }
}

Eigen::VectorXd Network::forward(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_dim())
    fail(ErrorKind::Shape, "input has " + std::to_string(x.size()) + " entries, network expects " +
                               std::to_string(input_dim()));
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::VectorXd z = layers_[l].weight * a + layers_[l].bias;
    if (l + 1 < layers_.size()) {
      a = z.array().tanh();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

std::string Network::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (int d : dims_) mix(static_cast<std::uint64_t>(d));
  const Eigen::VectorXd flat = parameters();
  for (Eigen::Index i = 0; i < flat.size(); ++i) mix(std::bit_cast<std::uint64_t>(flat[i]));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

double glorot_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Network init_network(const std::vector<int>& layer_dims, std::uint64_t seed) {
  Network net(layer_dims);
  std::mt19937_64 rng(seed);
  for (auto& layer : net.layers()) {
    const double bound = glorot_bound(static_cast<int>(layer.weight.cols()),
                                      static_cast<int>(layer.weight.rows()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
  }
  return net;
}

nlohmann::json to_json(const Network& net) {
  nlohmann::json doc;
  doc["format"] = "derivlab.network";
  doc["version"] = 1;
  doc["layer_dims"] = net.layer_dims();
  doc["activation"] = "tanh";
  doc["order"] = "row-major";
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> w;
    w.reserve(layer.weight.size());
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.push_back(layer.weight(r, c));
    std::vector<double> b(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"weight", w}, {"bias", b}});
  }
  return doc;
}

Network network_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("activation").get<std::string>() != "tanh")
      fail(ErrorKind::Configuration, "unsupported activation '" +
                                         doc.at("activation").get<std::string>() + "'");
    Network net(doc.at("layer_dims").get<std::vector<int>>());
    const auto& layers = doc.at("layers");
    if (layers.size() != net.layers().size())
      fail(ErrorKind::Shape, "layer count does not match layer_dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto w = layers[l].at("weight").get<std::vector<double>>();
      auto b = layers[l].at("bias").get<std::vector<double>>();
      auto& layer = net.layers()[l];
      if (w.size() != static_cast<std::size_t>(layer.weight.size()) ||
          b.size() != static_cast<std::size_t>(layer.bias.size()))
        fail(ErrorKind::Shape, "layer " + std::to_string(l) + " arrays do not chain with layer_dims");
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = w[k++];
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = b[r];
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, std::string("malformed network document: ") + e.what());
  }
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << to_json(net).dump() << '\n';
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Schema, path.string() + ": " + e.what());
  }
  return network_from_json(doc);
}

}  // namespace derivlab
