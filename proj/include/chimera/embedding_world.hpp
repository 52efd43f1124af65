#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "chimera/corpus.hpp"
#include "chimera/taxonomy.hpp"

namespace chimera {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr int kMaxSlots = 4;
inline constexpr int kDefaultEmbeddingDim = 64;
// Default world seed. Chosen so that every pair of distinct default-taxonomy
// atoms has |cosine| < 0.5 (checked in the test suite).
inline constexpr std::uint64_t kDefaultWorldSeed = 91;

/// Encoder boundary: maps an atom to its conditioning embedding. The
/// synthetic encoder below is the only implementation shipped; an image
/// encoder would plug in here.
class AtomEncoder {
 public:
  virtual ~AtomEncoder() = default;
  virtual int dim() const = 0;
  virtual Vector encode(const SemanticAtom& atom) const = 0;
};

/// Seeded Gaussian draw keyed by (world_seed, domain, part, subject), normalised.
class SyntheticEncoder final : public AtomEncoder {
 public:
  SyntheticEncoder(std::uint64_t world_seed, int dim);
  int dim() const override { return dim_; }
  Vector encode(const SemanticAtom& atom) const override;

 private:
  std::uint64_t world_seed_;
  int dim_;
};

struct WorldConfig {
  std::uint64_t world_seed = kDefaultWorldSeed;
  int dim = kDefaultEmbeddingDim;

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

/// Orthogonal d x d matrix from QR of a seeded Gaussian matrix, with the
/// columns sign-fixed so that R has a positive diagonal.
Matrix seeded_orthogonal(std::uint64_t seed, int dim);

/// The synthetic embedding space: one unit vector per taxonomy atom and four
/// slot rotations. Immutable after construction.
class EmbeddingWorld {
 public:
  EmbeddingWorld(const Taxonomy& taxonomy, WorldConfig config);
  EmbeddingWorld(const Taxonomy& taxonomy, WorldConfig config,
                 std::shared_ptr<const AtomEncoder> encoder);

  const WorldConfig& config() const { return config_; }
  int dim() const { return config_.dim; }
  std::size_t atom_count() const { return atoms_.size(); }
  const std::vector<SemanticAtom>& atoms() const { return atoms_; }
  const SemanticAtom& atom(std::size_t index) const { return atoms_.at(index); }

  std::optional<std::size_t> find_atom(const SemanticAtom& atom) const;
  /// Throws UnknownAtom.
  std::size_t atom_index(const SemanticAtom& atom) const;

  const Matrix& slot_rotation(int slot) const { return rotations_.at(static_cast<std::size_t>(slot)); }
  /// Rows are the atom embeddings in enumeration order.
  const Matrix& atom_table() const { return table_; }
  Vector atom_embedding(std::size_t index) const { return table_.row(static_cast<Eigen::Index>(index)).transpose(); }
  Vector atom_embedding(const SemanticAtom& atom) const { return atom_embedding(atom_index(atom)); }
  /// Rows are (R_slot * e_a)^T for every atom a; used by the slot decoder.
  const Matrix& slot_keys(int slot) const { return keys_.at(static_cast<std::size_t>(slot)); }

 private:
  WorldConfig config_;
  std::vector<SemanticAtom> atoms_;
  std::unordered_map<std::string, std::size_t> index_;
  Matrix table_;
  std::vector<Matrix> rotations_;
  std::vector<Matrix> keys_;
};

struct ConditionSlot {
  SemanticAtom atom;
  std::size_t atom_index = 0;
  Vector embedding;
};

/// Ordered per-slot conditioning; slot order is the prompt's atom order.
struct ConditionSet {
  std::vector<ConditionSlot> slots;

  int size() const { return static_cast<int>(slots.size()); }
  std::vector<SemanticAtom> atoms() const;
};

/// Throws UnknownAtom, or ValidationError if the slot count is outside [2, 4].
ConditionSet make_condition(const EmbeddingWorld& world, std::span<const SemanticAtom> atoms);

/// normalize(sum_i R_i e_i)
Vector compose_target(const ConditionSet& cond, const EmbeddingWorld& world);

/// One argmax pass: slot i takes the atom maximising cos(e, R_i a). Ties go
/// to the earlier atom in enumeration order.
std::vector<std::size_t> match_slots(const Vector& e, int k, const EmbeddingWorld& world);

/// Slot decoder. Starts from match_slots and then refines each slot against
/// the residual left after removing the other slots' least-squares
/// contribution, until the assignment stops changing.
std::vector<std::size_t> decode_slots(const Vector& e, int k, const EmbeddingWorld& world);
std::vector<SemanticAtom> decode_parts(const Vector& e, int k, const EmbeddingWorld& world);

struct TrainingPair {
  std::uint64_t prompt_id = 0;
  ConditionSet cond;
  Vector target;
};

TrainingPair make_pair(const HybridPrompt& record, const EmbeddingWorld& world);
std::vector<TrainingPair> make_dataset(std::span<const HybridPrompt> corpus,
                                       const EmbeddingWorld& world);

double cosine(const Vector& a, const Vector& b);

// World header: {"world_seed": ..., "d": ...}. Embeddings are rederived on load.
void save_world_header(const std::filesystem::path& path, const WorldConfig& config);
WorldConfig load_world_header(const std::filesystem::path& path);

// Dataset cache. Little-endian layout:
//   char[4] "CHDS" | u32 version=1 | u32 d | u64 count
//   count rows of: i32 atom_index[4] (-1 for empty slots) | u64 prompt_id | f32 target[d]
// Condition embeddings are rederived from the world on load; the stored
// target is float32 and therefore only float-exact.
void save_dataset(const std::filesystem::path& path, std::span<const TrainingPair> data,
                  const EmbeddingWorld& world);
std::vector<TrainingPair> load_dataset(const std::filesystem::path& path,
                                       const EmbeddingWorld& world);

}  // namespace chimera
