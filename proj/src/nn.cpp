#include "chimera/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "chimera/error.hpp"

namespace chimera::nn {
namespace {

constexpr std::uint8_t kActivationSiluIdentity = 1;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw DimensionMismatch("a network needs at least input and output dims");
  for (int d : dims) {
    if (d < 1) throw DimensionMismatch("layer dimensions must be positive");
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

static_assert(std::endian::native == std::endian::little);

// Row-major weights then bias, per layer; the same order as DenseNet::flatten.
void write_layers(std::ostream& out, const std::vector<Layer>& layers) {
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) write_pod(out, l.weight(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) write_pod(out, l.bias[r]);
  }
}

std::vector<Layer> read_layers(std::istream& in, const DenseNet& shape) {
  std::vector<Layer> out;
  for (const auto& s : shape.layers()) {
    Layer l{Matrix(s.weight.rows(), s.weight.cols()), Vector(s.bias.size())};
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = read_pod<double>(in);
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = read_pod<double>(in);
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

std::size_t Gradients::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weight.size(); ++l) n += static_cast<std::size_t>(weight[l].size() + bias[l].size());
  return n;
}

double Gradients::flat(std::size_t index) const {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    const auto& w = weight[l];
    const auto wn = static_cast<std::size_t>(w.size());
    if (index < wn) {
      const auto cols = static_cast<std::size_t>(w.cols());
      return w(static_cast<Eigen::Index>(index / cols), static_cast<Eigen::Index>(index % cols));
    }
    index -= wn;
    if (index < static_cast<std::size_t>(bias[l].size())) return bias[l][static_cast<Eigen::Index>(index)];
    index -= static_cast<std::size_t>(bias[l].size());
  }
  throw DimensionMismatch("gradient index out of range");
}

bool Gradients::all_finite() const {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    if (!weight[l].allFinite() || !bias[l].allFinite()) return false;
  }
  return true;
}

DenseNet::DenseNet(std::vector<int> layer_dims, std::uint64_t seed) : dims_(std::move(layer_dims)) {
  check_dims(dims_);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    Rng rng(mix_seed(seed, l));
    const double bound = std::sqrt(6.0 / in);
    Layer layer{Matrix(out, in), Vector::Zero(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = to_f32((2.0 * rng.uniform() - 1.0) * bound);
    }
    layers_.push_back(std::move(layer));
  }
}

DenseNet DenseNet::zeros(std::vector<int> layer_dims) {
  check_dims(layer_dims);
  DenseNet net;
  net.dims_ = std::move(layer_dims);
  for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l) {
    net.layers_.push_back({Matrix::Zero(net.dims_[l + 1], net.dims_[l]), Vector::Zero(net.dims_[l + 1])});
  }
  return net;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::pair<std::size_t, std::size_t> DenseNet::locate(std::size_t index) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto n = static_cast<std::size_t>(layers_[l].weight.size() + layers_[l].bias.size());
    if (index < n) return {l, index};
    index -= n;
  }
  throw DimensionMismatch("parameter index out of range");
}

double DenseNet::parameter(std::size_t index) const {
  const auto [l, i] = locate(index);
  const auto& layer = layers_[l];
  const auto wn = static_cast<std::size_t>(layer.weight.size());
  if (i < wn) {
    const auto cols = static_cast<std::size_t>(layer.weight.cols());
    return layer.weight(static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols));
  }
  return layer.bias[static_cast<Eigen::Index>(i - wn)];
}

void DenseNet::set_parameter(std::size_t index, double value) {
  const auto [l, i] = locate(index);
  auto& layer = layers_[l];
  const auto wn = static_cast<std::size_t>(layer.weight.size());
  if (i < wn) {
    const auto cols = static_cast<std::size_t>(layer.weight.cols());
    layer.weight(static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols)) = value;
  } else {
    layer.bias[static_cast<Eigen::Index>(i - wn)] = value;
  }
}

std::vector<float> DenseNet::flatten() const {
  std::vector<float> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(static_cast<float>(l.weight(r, c)));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(static_cast<float>(l.bias[r]));
  }
  return out;
}

void DenseNet::unflatten(const std::vector<float>& values) {
  if (values.size() != parameter_count()) throw DimensionMismatch("parameter blob has wrong length");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = values[k++];
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = values[k++];
  }
}

bool DenseNet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Matrix DenseNet::forward(const Matrix& x) const {
  Tape tape;
  return forward(x, tape);
}

Matrix DenseNet::forward(const Matrix& x, Tape& tape) const {
  if (x.rows() != input_dim()) {
    throw DimensionMismatch("input has " + std::to_string(x.rows()) + " rows, network expects " +
                            std::to_string(input_dim()));
  }
  tape.inputs.clear();
  tape.preactivation.clear();
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    tape.inputs.push_back(std::move(a));
    if (l + 1 < layers_.size()) {
      a = z.unaryExpr([](double v) { return v * sigmoid(v); });
    } else {
      a = z;
    }
    tape.preactivation.push_back(std::move(z));
  }
  return a;
}

Vector DenseNet::forward(const Vector& x) const {
  return forward(Matrix(x)).col(0);
}

Gradients DenseNet::backward(const Tape& tape, const Matrix& grad_output) const {
  if (tape.inputs.size() != layers_.size()) throw DimensionMismatch("tape does not match network");
  if (grad_output.rows() != output_dim() || grad_output.cols() != tape.inputs.front().cols()) {
    throw DimensionMismatch("output gradient shape does not match forward batch");
  }
  Gradients g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  Matrix delta = grad_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    if (li + 1 < layers_.size()) {
      const Matrix& z = tape.preactivation[li];
      delta.array() *= z.unaryExpr([](double v) {
                          const double s = sigmoid(v);
                          return s * (1.0 + v * (1.0 - s));
                        }).array();
    }
    g.weight[li].noalias() = delta * tape.inputs[li].transpose();
    g.bias[li] = delta.rowwise().sum();
    Matrix next = layers_[li].weight.transpose() * delta;
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

AdamState AdamState::init(const DenseNet& net, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& l : net.layers()) {
    s.m.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  s.v = s.m;
  return s;
}

namespace {

template <typename Param, typename Grad, typename Moment>
void adam_update(Param& p, const Grad& g, Moment& m, Moment& v, const AdamConfig& c,
                 double correct1, double correct2) {
  m.array() = c.beta1 * m.array() + (1.0 - c.beta1) * g.array();
  v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
  p.array() -= c.lr * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.eps);
  p = p.unaryExpr([](double x) { return to_f32(x); });
}

}  // namespace

void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size() || state.m.size() != layers.size() ||
      state.v.size() != layers.size()) {
    throw DimensionMismatch("gradient/optimizer state shape does not match network");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads.weight[l].rows() != layers[l].weight.rows() ||
        grads.weight[l].cols() != layers[l].weight.cols() ||
        grads.bias[l].size() != layers[l].bias.size() ||
        state.m[l].weight.rows() != layers[l].weight.rows() ||
        state.m[l].weight.cols() != layers[l].weight.cols()) {
      throw DimensionMismatch("layer " + std::to_string(l) + ": gradient shape mismatch");
    }
  }
  if (!grads.all_finite()) throw NonFiniteGradient("non-finite gradient; optimizer step skipped");

  const auto& c = state.config;
  const auto t = static_cast<double>(state.step + 1);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    adam_update(layers[l].weight, grads.weight[l], state.m[l].weight, state.v[l].weight, c, correct1, correct2);
    adam_update(layers[l].bias, grads.bias[l], state.m[l].bias, state.v[l].bias, c, correct1, correct2);
  }
  state.step += 1;
}

double grad_check(const DenseNet& net, const LossFn& loss, int probes, Rng& rng, double h) {
  if (probes < 1) throw ValidationError("grad_check needs at least one probe");
  const auto [base_loss, grads] = loss(net);
  (void)base_loss;
  const std::size_t n = net.parameter_count();
  double worst = 0.0;
  DenseNet probe = net;
  for (int p = 0; p < probes; ++p) {
    const std::size_t idx = rng.uniform_index(n);
    const double orig = net.parameter(idx);
    probe.set_parameter(idx, orig + h);
    const double up = loss(probe).first;
    probe.set_parameter(idx, orig - h);
    const double down = loss(probe).first;
    probe.set_parameter(idx, orig);
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.flat(idx);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    worst = std::max(worst, rel);
  }
  return worst;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write("CHIM", 4);
  write_pod<std::uint32_t>(out, 1);
  const auto& dims = ckpt.net.dims();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  write_pod<std::uint8_t>(out, kActivationSiluIdentity);
  const auto params = ckpt.net.flatten();
  write_pod<std::uint64_t>(out, params.size());
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size() * sizeof(float)));
  write_pod<std::uint8_t>(out, ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    write_pod<std::uint64_t>(out, a.step);
    write_pod(out, a.config.lr);
    write_pod(out, a.config.beta1);
    write_pod(out, a.config.beta2);
    write_pod(out, a.config.eps);
    write_layers(out, a.m);
    write_layers(out, a.v);
  }
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  if (!out) throw Error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  char magic[4]{};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CHIM", 4) != 0) throw FormatError("not a checkpoint: bad magic");
  if (read_pod<std::uint32_t>(in) != 1) throw FormatError("unsupported checkpoint version");
  const auto ndims = read_pod<std::uint32_t>(in);
  if (ndims < 2 || ndims > 64) throw FormatError("implausible layer count in checkpoint");
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < ndims; ++i) dims.push_back(static_cast<int>(read_pod<std::uint32_t>(in)));
  if (read_pod<std::uint8_t>(in) != kActivationSiluIdentity) throw FormatError("unknown activation tag");

  Checkpoint ckpt;
  ckpt.net = DenseNet::zeros(dims);
  const auto count = read_pod<std::uint64_t>(in);
  if (count != ckpt.net.parameter_count()) throw FormatError("parameter count does not match dims");
  std::vector<float> params(count);
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw FormatError("checkpoint truncated");
  ckpt.net.unflatten(params);

  if (read_pod<std::uint8_t>(in) != 0) {
    AdamState a;
    a.step = read_pod<std::uint64_t>(in);
    a.config.lr = read_pod<double>(in);
    a.config.beta1 = read_pod<double>(in);
    a.config.beta2 = read_pod<double>(in);
    a.config.eps = read_pod<double>(in);
    a.m = read_layers(in, ckpt.net);
    a.v = read_layers(in, ckpt.net);
    ckpt.adam = std::move(a);
  }
  const auto meta_len = read_pod<std::uint32_t>(in);
  ckpt.metadata.resize(meta_len);
  in.read(ckpt.metadata.data(), meta_len);
  if (!in) throw FormatError("checkpoint truncated");
  return ckpt;
}

}  // namespace chimera::nn
