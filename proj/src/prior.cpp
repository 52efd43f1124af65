#include "chimera/prior.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "chimera/error.hpp"

namespace chimera::prior {
namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void check_batch(std::span<const TrainingPair> data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("batch must not be empty");
  for (auto i : indices) {
    if (i >= data.size()) throw ValidationError("batch index out of range");
  }
}

void fill_normal(Eigen::Ref<Vector> v, Rng& rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.uniform_index(i)]);
  }
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ValidationError("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps_ = steps;
  s.beta_.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha_bar_.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
    const double b = beta_start + frac * (beta_end - beta_start);
    s.beta_[static_cast<std::size_t>(t)] = b;
    s.alpha_bar_[static_cast<std::size_t>(t)] = s.alpha_bar_[static_cast<std::size_t>(t) - 1] * (1.0 - b);
  }
  return s;
}

Vector q_sample(const Vector& e, int t, const Vector& eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw ValidationError("timestep out of range");
  if (e.size() != eps.size()) throw DimensionMismatch("noise and embedding dimensions differ");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * e + std::sqrt(1.0 - ab) * eps;
}

Vector time_features(double tau) {
  constexpr int kFreqs = kTimeFeatures / 2;
  Vector f(kTimeFeatures);
  for (int j = 0; j < kFreqs; ++j) {
    const double omega = std::pow(1000.0, static_cast<double>(j) / (kFreqs - 1));
    f[j] = std::sin(omega * tau);
    f[j + kFreqs] = std::cos(omega * tau);
  }
  return f;
}

void write_prior_input(Eigen::Ref<Vector> out, const Vector& state, double tau, const ConditionSet* cond) {
  const auto d = state.size();
  if (out.size() != prior_input_dim(static_cast<int>(d))) throw DimensionMismatch("prior input buffer has wrong size");
  out.setZero();
  out.head(d) = state;
  out.segment(d, kTimeFeatures) = time_features(tau);
  if (cond == nullptr) return;
  if (cond->size() > kMaxSlots) throw ValidationError("too many condition slots");
  const Eigen::Index cond_start = d + kTimeFeatures;
  const Eigen::Index mask_start = cond_start + kMaxSlots * d;
  for (int s = 0; s < cond->size(); ++s) {
    const auto& emb = cond->slots[static_cast<std::size_t>(s)].embedding;
    if (emb.size() != d) throw DimensionMismatch("condition embedding has wrong dimension");
    out.segment(cond_start + s * d, d) = emb;
    out[mask_start + s] = 1.0;
  }
}

Vector prior_input(const Vector& state, double tau, const ConditionSet* cond) {
  Vector out(prior_input_dim(static_cast<int>(state.size())));
  write_prior_input(out, state, tau, cond);
  return out;
}

std::vector<int> default_layer_dims(int d, int hidden_width, int hidden_layers) {
  std::vector<int> dims{prior_input_dim(d)};
  for (int i = 0; i < hidden_layers; ++i) dims.push_back(hidden_width);
  dims.push_back(d);
  return dims;
}

std::string_view to_string(Objective objective) {
  return objective == Objective::diffusion_prior ? "diffusion_prior" : "rectified_flow";
}

Objective objective_from_string(std::string_view name) {
  if (name == "diffusion" || name == "diffusion_prior") return Objective::diffusion_prior;
  if (name == "flow" || name == "rectified_flow") return Objective::rectified_flow;
  throw ValidationError("unknown objective '" + std::string(name) + "'");
}

RegressionBatch diffusion_batch(std::span<const TrainingPair> data, std::span<const std::size_t> indices,
                                const NoiseSchedule& sched, Rng& rng, double cond_dropout) {
  check_batch(data, indices);
  const auto d = data[indices[0]].target.size();
  const auto b = static_cast<Eigen::Index>(indices.size());
  RegressionBatch out{Matrix(prior_input_dim(static_cast<int>(d)), b), Matrix(d, b), Matrix(d, b), Matrix(d, b), {}, {}, {}};
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& pair = data[indices[static_cast<std::size_t>(j)]];
    const int t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.steps())));
    fill_normal(out.noise.col(j), rng);
    const bool drop = rng.uniform() < cond_dropout;
    const double tau = static_cast<double>(t) / sched.steps();
    const Vector et = q_sample(pair.target, t, out.noise.col(j), sched);
    write_prior_input(out.inputs.col(j), et, tau, drop ? nullptr : &pair.cond);
    out.targets.col(j) = pair.target;
    out.clean.col(j) = pair.target;
    out.tau.push_back(tau);
    out.timestep.push_back(t);
    out.dropped.push_back(drop);
  }
  return out;
}

RegressionBatch flow_batch(std::span<const TrainingPair> data, std::span<const std::size_t> indices, Rng& rng,
                           double cond_dropout) {
  check_batch(data, indices);
  const auto d = data[indices[0]].target.size();
  const auto b = static_cast<Eigen::Index>(indices.size());
  RegressionBatch out{Matrix(prior_input_dim(static_cast<int>(d)), b), Matrix(d, b), Matrix(d, b), Matrix(d, b), {}, {}, {}};
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& pair = data[indices[static_cast<std::size_t>(j)]];
    fill_normal(out.noise.col(j), rng);
    const double t = rng.uniform();
    const bool drop = rng.uniform() < cond_dropout;
    const Vector xt = (1.0 - t) * out.noise.col(j) + t * pair.target;
    write_prior_input(out.inputs.col(j), xt, t, drop ? nullptr : &pair.cond);
    out.targets.col(j) = pair.target - out.noise.col(j);
    out.clean.col(j) = pair.target;
    out.tau.push_back(t);
    out.timestep.push_back(0);
    out.dropped.push_back(drop);
  }
  return out;
}

double batch_mse(const Matrix& predictions, const Matrix& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw DimensionMismatch("prediction and target shapes differ");
  }
  return (predictions - targets).squaredNorm() / static_cast<double>(targets.cols());
}

LossResult regression_loss(const nn::DenseNet& net, const RegressionBatch& batch) {
  nn::Tape tape;
  const Matrix pred = net.forward(batch.inputs, tape);
  const Matrix diff = pred - batch.targets;
  const double n = static_cast<double>(batch.targets.cols());
  LossResult out;
  out.loss = diff.squaredNorm() / n;
  if (!std::isfinite(out.loss)) throw NonFiniteLoss("loss is not finite");
  out.grads = net.backward(tape, (2.0 / n) * diff);
  return out;
}

LossResult loss_diffusion_prior(const nn::DenseNet& net, std::span<const TrainingPair> batch,
                                const NoiseSchedule& sched, Rng& rng, double cond_dropout) {
  const auto idx = iota_indices(batch.size());
  return regression_loss(net, diffusion_batch(batch, idx, sched, rng, cond_dropout));
}

LossResult loss_rectified_flow(const nn::DenseNet& net, std::span<const TrainingPair> batch, Rng& rng,
                               double cond_dropout) {
  const auto idx = iota_indices(batch.size());
  return regression_loss(net, flow_batch(batch, idx, rng, cond_dropout));
}

void validate(const TrainConfig& c) {
  if (c.steps < 1) throw ValidationError("steps must be at least 1");
  if (c.batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (!(c.cond_dropout >= 0.0 && c.cond_dropout < 1.0)) throw ValidationError("cond_dropout must be in [0, 1)");
  if (!(c.lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (c.log_every < 1) throw ValidationError("log interval must be positive");
}

TrainResult train(const TrainConfig& config, std::span<const TrainingPair> dataset, int dim,
                  const ProgressFn& progress) {
  validate(config);
  if (dataset.empty()) throw ValidationError("training dataset is empty");

  TrainResult result;
  result.net = nn::DenseNet(default_layer_dims(dim, config.hidden_width, config.hidden_layers),
                            mix_seed(config.seed, 0));
  result.adam = nn::AdamState::init(result.net, {config.lr});
  const auto sched = NoiseSchedule::linear();
  Rng noise_rng(mix_seed(config.seed, 1));
  Rng order_rng(mix_seed(config.seed, 2));

  std::vector<std::size_t> order = iota_indices(dataset.size());
  shuffle(order, order_rng);
  std::size_t cursor = 0;
  std::vector<std::size_t> batch_idx;
  double window = 0.0;
  int window_n = 0;

  for (int step = 0; step < config.steps; ++step) {
    batch_idx.clear();
    for (int i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) {
        shuffle(order, order_rng);
        cursor = 0;
      }
      batch_idx.push_back(order[cursor++]);
    }
    const RegressionBatch batch = config.objective == Objective::rectified_flow
                                      ? flow_batch(dataset, batch_idx, noise_rng, config.cond_dropout)
                                      : diffusion_batch(dataset, batch_idx, sched, noise_rng, config.cond_dropout);
    LossResult lr;
    try {
      lr = regression_loss(result.net, batch);
    } catch (const NonFiniteLoss&) {
      throw NonFiniteLoss("non-finite loss at step " + std::to_string(step));
    }
    nn::adam_step(result.net, lr.grads, result.adam);

    if (step == 0) {
      result.initial_loss = lr.loss;
      result.curve.push_back({0, lr.loss});
    }
    window += lr.loss;
    ++window_n;
    const int done = step + 1;
    if (done % config.log_every == 0 || done == config.steps) {
      const double mean = window / window_n;
      if (done % config.log_every == 0) result.curve.push_back({done, mean});
      result.final_window_loss = mean;
      if (progress) progress(done, mean);
      window = 0.0;
      window_n = 0;
    }
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossPoint> curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,loss\n";
  out.precision(10);
  for (const auto& p : curve) out << p.step << ',' << p.loss << '\n';
}

Predictor net_predictor(const nn::DenseNet& net) {
  return [&net](const Vector& state, double tau, const ConditionSet* cond) {
    return net.forward(prior_input(state, tau, cond));
  };
}

namespace {

Vector guided(const Predictor& f, const Vector& x, double tau, const ConditionSet& cond, double cfg_scale) {
  Vector cond_out = f(x, tau, &cond);
  if (cfg_scale == 1.0) return cond_out;
  const Vector uncond = f(x, tau, nullptr);
  return uncond + cfg_scale * (cond_out - uncond);
}

}  // namespace

Vector sample_flow(const Predictor& velocity, const ConditionSet& cond, int n_steps, double cfg_scale, Rng& rng) {
  if (n_steps < 1) throw ValidationError("n_steps must be at least 1");
  if (cond.slots.empty()) throw ValidationError("empty condition set");
  const auto d = cond.slots.front().embedding.size();
  Vector x(d);
  fill_normal(x, rng);
  const double dt = 1.0 / n_steps;
  for (int i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) / n_steps;
    x += dt * guided(velocity, x, t, cond, cfg_scale);
  }
  return x / x.norm();
}

Vector sample_diffusion(const Predictor& denoiser, const ConditionSet& cond, const NoiseSchedule& sched, Rng& rng,
                        int n_steps, double cfg_scale) {
  if (n_steps < 0) throw ValidationError("n_steps must be non-negative");
  if (cond.slots.empty()) throw ValidationError("empty condition set");
  const int big_t = sched.steps();
  std::vector<int> ts;
  if (n_steps == 0 || n_steps >= big_t) {
    for (int t = big_t; t >= 1; --t) ts.push_back(t);
  } else if (n_steps == 1) {
    ts.push_back(big_t);
  } else {
    for (int i = 0; i < n_steps; ++i) {
      const double frac = static_cast<double>(i) / (n_steps - 1);
      ts.push_back(static_cast<int>(std::lround(big_t - frac * (big_t - 1))));
    }
  }
  const auto d = cond.slots.front().embedding.size();
  Vector x(d);
  fill_normal(x, rng);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const Vector clean = guided(denoiser, x, static_cast<double>(t) / big_t, cond, cfg_scale);
    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const Vector eps = (x - std::sqrt(ab) * clean) / std::sqrt(1.0 - ab);
    x = std::sqrt(ab_prev) * clean + std::sqrt(1.0 - ab_prev) * eps;
  }
  return x / x.norm();
}

}  // namespace chimera::prior
