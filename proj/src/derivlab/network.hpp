#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace derivlab {

enum class Activation { Tanh };

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Feed-forward model: tanh on hidden layers, identity on the output layer.
//
// Flat parameter layout (used by optimizers and gradients): for each layer,
// the weight matrix in row-major order followed by the bias vector.
class Network {
 public:
  // Zero-initialized network with the given layer dimensions.
  explicit Network(std::vector<int> layer_dims, Activation activation = Activation::Tanh);

  const std::vector<int>& layer_dims() const noexcept { return dims_; }
  int input_dim() const noexcept { return dims_.front(); }
  int output_dim() const noexcept { return dims_.back(); }
  Activation activation() const noexcept { return activation_; }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  Eigen::Index parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  Eigen::VectorXd forward(std::span<const double> x) const;

  // Stable 64-bit FNV-1a digest of dims and parameter bit patterns, hex encoded.
  std::string hash() const;

 private:
  std::vector<int> dims_;
  Activation activation_;
  std::vector<Layer> layers_;
};

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
Network init_network(const std::vector<int>& layer_dims, std::uint64_t seed);

double glorot_bound(int fan_in, int fan_out);

nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& doc);
void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace derivlab
