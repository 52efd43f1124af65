#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chimera/rng.hpp"

namespace chimera::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Parameters are held in double but always carry float32-representable
// values: initialisation and every optimiser step round through float. All
// arithmetic (forward, backward, reductions) runs in double.
inline double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Cached activations of one batched forward pass.
struct Tape {
  std::vector<Matrix> inputs;       // input to each layer
  std::vector<Matrix> preactivation;
};

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;  // dL/dx

  std::size_t size() const;
  double flat(std::size_t index) const;
  bool all_finite() const;
};

/// Fully connected network, SiLU on hidden layers and identity on the output.
/// Batches are column-major: one sample per column.
class DenseNet {
 public:
  DenseNet() = default;
  /// Kaiming-uniform (fan-in) weights, zero biases.
  DenseNet(std::vector<int> layer_dims, std::uint64_t seed);
  static DenseNet zeros(std::vector<int> layer_dims);

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t parameter_count() const;
  /// Flat view: per layer, the weight in row-major order followed by the bias.
  double parameter(std::size_t index) const;
  void set_parameter(std::size_t index, double value);
  std::vector<float> flatten() const;
  void unflatten(const std::vector<float>& values);
  bool all_finite() const;

  Matrix forward(const Matrix& x) const;
  Matrix forward(const Matrix& x, Tape& tape) const;
  Vector forward(const Vector& x) const;

  /// Reverse-mode gradients of L given dL/dy for the batch recorded in tape.
  Gradients backward(const Tape& tape, const Matrix& grad_output) const;

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t index) const;

  std::vector<int> dims_;
  std::vector<Layer> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  // First and second moments, shaped like the parameters of each layer.
  std::vector<Layer> m;
  std::vector<Layer> v;

  static AdamState init(const DenseNet& net, AdamConfig config = {});
};

/// Bias-corrected Adam update. Throws NonFiniteGradient (leaving net and
/// state untouched) if any gradient entry is NaN or infinite.
void adam_step(DenseNet& net, const Gradients& grads, AdamState& state);

/// A deterministic scalar loss with its analytic parameter gradients.
using LossFn = std::function<std::pair<double, Gradients>(const DenseNet&)>;

/// Largest relative error between the analytic gradient and a central
/// difference, over `probes` randomly chosen parameters. Relative error is
/// |a - n| / max(|a| + |n|, 1e-6).
double grad_check(const DenseNet& net, const LossFn& loss, int probes, Rng& rng, double h = 1e-3);

// Checkpoint layout (little-endian):
//   char[4] "CHIM" | u32 version=1 | u32 n | u32 dims[n] | u8 activation (1 = silu/identity)
//   u64 count | f32 params[count]
//   u8 has_adam | [u64 step | f64 lr, beta1, beta2, eps | f64 m[count] | f64 v[count]]
//   (moments use the same flat order as the parameters)
//   u32 meta_len | char meta[meta_len]   (free-form UTF-8, JSON by convention)
struct Checkpoint {
  DenseNet net;
  std::optional<AdamState> adam;
  std::string metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace chimera::nn
