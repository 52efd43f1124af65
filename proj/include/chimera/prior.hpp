#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chimera/embedding_world.hpp"
#include "chimera/nn.hpp"

namespace chimera::prior {

inline constexpr int kTimeFeatures = 16;

/// Linear beta schedule. Timesteps run 1..T; alpha_bar(0) is defined as 1
/// and alpha_bar(1) = alpha_1 = 1 - beta_1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  int steps() const { return steps_; }
  double beta(int t) const { return beta_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }

 private:
  int steps_ = 0;
  std::vector<double> beta_;       // index 0 unused
  std::vector<double> alpha_bar_;  // alpha_bar_[0] == 1
};

/// e_t = sqrt(alpha_bar_t) e + sqrt(1 - alpha_bar_t) eps
Vector q_sample(const Vector& e, int t, const Vector& eps, const NoiseSchedule& sched);

/// 16 sinusoidal features of a normalised time tau in [0, 1]: sin and cos at
/// eight frequencies spaced geometrically from 1 to 1000 rad per unit tau.
Vector time_features(double tau);

/// Network input width: state (d) + time (16) + 4 condition slots (4d) + slot mask (4).
constexpr int prior_input_dim(int d) { return d + kTimeFeatures + kMaxSlots * d + kMaxSlots; }

/// Writes [state | time | slot embeddings zero-padded to 4 | presence mask]
/// into `out`. A null condition writes zeros for both the slots and the mask
/// (the unconditional input used for dropout and guidance).
void write_prior_input(Eigen::Ref<Vector> out, const Vector& state, double tau, const ConditionSet* cond);
Vector prior_input(const Vector& state, double tau, const ConditionSet* cond);

/// Default architecture: input -> 256 -> 256 -> 256 -> d.
std::vector<int> default_layer_dims(int d, int hidden_width = 256, int hidden_layers = 3);

enum class Objective { diffusion_prior, rectified_flow };
std::string_view to_string(Objective objective);
/// Accepts "diffusion", "diffusion_prior", "flow", "rectified_flow".
Objective objective_from_string(std::string_view name);

/// Network inputs and regression targets for one batch, plus the random
/// draws that produced them (kept so tests can build analytic oracles).
struct RegressionBatch {
  Matrix inputs;   // prior_input_dim(d) x B
  Matrix targets;  // d x B
  Matrix noise;    // eps (diffusion) or x_0 (flow), d x B
  Matrix clean;    // the clean target e, d x B
  std::vector<double> tau;
  std::vector<int> timestep;  // diffusion only, 0 for flow
  std::vector<bool> dropped;
};

/// Diffusion-prior batch: t ~ U{1..T}, eps ~ N(0, I), input built from e_t,
/// target is the clean embedding e.
RegressionBatch diffusion_batch(std::span<const TrainingPair> data, std::span<const std::size_t> indices,
                                const NoiseSchedule& sched, Rng& rng, double cond_dropout);

/// Rectified-flow batch: x_0 ~ N(0, I), t ~ U[0, 1], x_t = (1 - t) x_0 + t e,
/// target velocity e - x_0.
RegressionBatch flow_batch(std::span<const TrainingPair> data, std::span<const std::size_t> indices,
                           Rng& rng, double cond_dropout);

/// mean over the batch of ||pred - target||^2
double batch_mse(const Matrix& predictions, const Matrix& targets);

struct LossResult {
  double loss = 0.0;
  nn::Gradients grads;
};

/// Loss and exact gradients of batch_mse(net(inputs), targets).
/// Throws NonFiniteLoss.
LossResult regression_loss(const nn::DenseNet& net, const RegressionBatch& batch);

LossResult loss_diffusion_prior(const nn::DenseNet& net, std::span<const TrainingPair> batch,
                                const NoiseSchedule& sched, Rng& rng, double cond_dropout = 0.0);
LossResult loss_rectified_flow(const nn::DenseNet& net, std::span<const TrainingPair> batch, Rng& rng,
                               double cond_dropout = 0.0);

struct TrainConfig {
  Objective objective = Objective::rectified_flow;
  double lr = 1e-3;
  int batch_size = 64;
  int steps = 20000;
  double cond_dropout = 0.1;
  double cfg_scale = 1.0;
  std::uint64_t seed = 0;
  int hidden_width = 256;
  int hidden_layers = 3;
  int log_every = 100;
};

void validate(const TrainConfig& config);

struct LossPoint {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  nn::DenseNet net;
  nn::AdamState adam;
  /// One point every log_every steps (and at step 0). The value at step s>0
  /// is the mean loss of steps (s - log_every, s].
  std::vector<LossPoint> curve;
  double initial_loss = 0.0;
  /// Mean loss over the last log_every steps.
  double final_window_loss = 0.0;
};

using ProgressFn = std::function<void(int step, double window_loss)>;

/// Single-threaded and deterministic given config.seed. Throws NonFiniteLoss
/// naming the failing step.
TrainResult train(const TrainConfig& config, std::span<const TrainingPair> dataset, int dim,
                  const ProgressFn& progress = {});

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve);

/// Prediction of the prior for one state: the clean embedding (diffusion) or
/// the velocity (flow). `cond == nullptr` requests the unconditional branch.
using Predictor = std::function<Vector(const Vector& state, double tau, const ConditionSet* cond)>;

Predictor net_predictor(const nn::DenseNet& net);

/// Euler integration of dx/dt = v(x, t, c) from x_0 ~ N(0, I) over n_steps
/// uniform steps, renormalised to unit length. cfg_scale != 1 blends the
/// unconditional and conditional velocities.
Vector sample_flow(const Predictor& velocity, const ConditionSet& cond, int n_steps, double cfg_scale,
                   Rng& rng);

/// Deterministic DDIM (eta = 0) reverse loop in the clean-sample
/// parameterisation, starting from e_T ~ N(0, I). n_steps = 0 visits every
/// timestep; otherwise an evenly strided subset ending at t = 1.
Vector sample_diffusion(const Predictor& denoiser, const ConditionSet& cond, const NoiseSchedule& sched,
                        Rng& rng, int n_steps = 0, double cfg_scale = 1.0);

}  // namespace chimera::prior
