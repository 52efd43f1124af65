#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "chimera/embedding_world.hpp"
#include "chimera/rng.hpp"

namespace chimera::eval {

/// Sufficient statistics of a Gaussian fit: sample mean and unbiased covariance.
struct GaussianStats {
  Vector mean;
  Matrix cov;
  std::size_t n = 0;
};

/// Throws TooFewSamples for fewer than two samples, DimensionMismatch for ragged input.
GaussianStats gaussian_stats(std::span<const Vector> samples);

/// Frechet distance between two Gaussian fits:
///   ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
/// The trace of the square root is taken from the eigenvalues of the
/// symmetric matrix S_a^{1/2} S_b S_a^{1/2}; eigenvalues in (-1e-8, 0) are
/// clamped to zero, anything more negative raises NonConvergent.
double fid(const GaussianStats& a, const GaussianStats& b);

/// Polynomial kernel (u.v / d + 1)^3.
double kid_kernel(const Vector& u, const Vector& v);

/// Unbiased MMD^2 between two equally sized sample sets (diagonal terms
/// excluded from the within-set sums).
double mmd2_unbiased(std::span<const Vector> x, std::span<const Vector> y);

struct KidResult {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across subsets (n - 1)
  std::vector<double> subsets;
};

/// For each of n_subsets rounds, draws subset_size samples without
/// replacement from each set and evaluates mmd2_unbiased.
KidResult kid(std::span<const Vector> x, std::span<const Vector> y, int subset_size, int n_subsets, Rng& rng);

struct GeneratedSample {
  Vector generated;
  ConditionSet cond;
};

/// Fraction of slots whose decoded atom matches the conditioning atom
/// (per sample), averaged over samples.
double compositional_accuracy(std::span<const GeneratedSample> samples, const EmbeddingWorld& world);
/// Per-sample slot-match fraction.
double slot_match_rate(const GeneratedSample& sample, const EmbeddingWorld& world);

}  // namespace chimera::eval
