#include "chimera/metrics.hpp"

#include <cmath>

#include "chimera/error.hpp"

namespace chimera::eval {
namespace {

Matrix stack_rows(std::span<const Vector> samples) {
  const auto d = samples.front().size();
  Matrix m(static_cast<Eigen::Index>(samples.size()), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw DimensionMismatch("samples have differing dimensions");
    m.row(static_cast<Eigen::Index>(i)) = samples[i].transpose();
  }
  return m;
}

std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace

GaussianStats gaussian_stats(std::span<const Vector> samples) {
  if (samples.size() < 2) throw TooFewSamples("gaussian_stats needs at least two samples");
  const Matrix x = stack_rows(samples);
  GaussianStats s;
  s.n = samples.size();
  s.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw DimensionMismatch("fid: statistics have different dimensions");
  }
  constexpr double kClamp = -1e-8;

  Eigen::SelfAdjointEigenSolver<Matrix> eig_a(a.cov);
  if (eig_a.info() != Eigen::Success) throw NonConvergent("fid: eigen-decomposition of covariance failed");
  Vector lam_a = eig_a.eigenvalues();
  for (Eigen::Index i = 0; i < lam_a.size(); ++i) {
    if (lam_a[i] < kClamp) throw NonConvergent("fid: covariance is not positive semi-definite");
    lam_a[i] = std::sqrt(std::max(lam_a[i], 0.0));
  }
  const Matrix sqrt_a = eig_a.eigenvectors() * lam_a.asDiagonal() * eig_a.eigenvectors().transpose();
  Matrix inner = sqrt_a * b.cov * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eig_inner(inner, Eigen::EigenvaluesOnly);
  if (eig_inner.info() != Eigen::Success) throw NonConvergent("fid: eigen-decomposition of product failed");
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < eig_inner.eigenvalues().size(); ++i) {
    const double lam = eig_inner.eigenvalues()[i];
    if (lam < kClamp) throw NonConvergent("fid: covariance product has a negative eigenvalue");
    trace_sqrt += std::sqrt(std::max(lam, 0.0));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
}

double kid_kernel(const Vector& u, const Vector& v) {
  const double base = u.dot(v) / static_cast<double>(u.size()) + 1.0;
  return base * base * base;
}

double mmd2_unbiased(std::span<const Vector> x, std::span<const Vector> y) {
  const std::size_t m = x.size();
  if (m < 2 || y.size() != m) throw TooFewSamples("mmd2_unbiased needs two equal sets of at least two samples");
  const Matrix xm = stack_rows(x);
  const Matrix ym = stack_rows(y);
  if (xm.cols() != ym.cols()) throw DimensionMismatch("mmd: sample sets have different dimensions");
  const double d = static_cast<double>(xm.cols());
  auto kernel = [d](const Matrix& a, const Matrix& b) {
    return ((a * b.transpose()).array() / d + 1.0).cube().matrix().eval();
  };
  const Matrix kxx = kernel(xm, xm);
  const Matrix kyy = kernel(ym, ym);
  const Matrix kxy = kernel(xm, ym);
  const double md = static_cast<double>(m);
  const double sxx = kxx.sum() - kxx.trace();
  const double syy = kyy.sum() - kyy.trace();
  return sxx / (md * (md - 1.0)) + syy / (md * (md - 1.0)) - 2.0 * kxy.sum() / (md * md);
}

KidResult kid(std::span<const Vector> x, std::span<const Vector> y, int subset_size, int n_subsets, Rng& rng) {
  if (n_subsets < 2) throw TooFewSamples("kid needs at least two subsets");
  if (subset_size < 2 || static_cast<std::size_t>(subset_size) > std::min(x.size(), y.size())) {
    throw TooFewSamples("kid subset size must be in [2, min(|x|, |y|)]");
  }
  KidResult out;
  std::vector<Vector> xs, ys;
  for (int s = 0; s < n_subsets; ++s) {
    xs.clear();
    ys.clear();
    for (auto i : draw_without_replacement(x.size(), static_cast<std::size_t>(subset_size), rng)) xs.push_back(x[i]);
    for (auto i : draw_without_replacement(y.size(), static_cast<std::size_t>(subset_size), rng)) ys.push_back(y[i]);
    out.subsets.push_back(mmd2_unbiased(xs, ys));
  }
  double sum = 0.0;
  for (double v : out.subsets) sum += v;
  out.mean = sum / n_subsets;
  double sq = 0.0;
  for (double v : out.subsets) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / (n_subsets - 1));
  return out;
}

double slot_match_rate(const GeneratedSample& sample, const EmbeddingWorld& world) {
  const int k = sample.cond.size();
  const auto decoded = decode_slots(sample.generated, k, world);
  int hits = 0;
  for (int i = 0; i < k; ++i) {
    hits += decoded[static_cast<std::size_t>(i)] == sample.cond.slots[static_cast<std::size_t>(i)].atom_index;
  }
  return static_cast<double>(hits) / k;
}

double compositional_accuracy(std::span<const GeneratedSample> samples, const EmbeddingWorld& world) {
  if (samples.empty()) throw TooFewSamples("compositional_accuracy needs at least one sample");
  double sum = 0.0;
  for (const auto& s : samples) sum += slot_match_rate(s, world);
  return sum / static_cast<double>(samples.size());
}

}  // namespace chimera::eval
