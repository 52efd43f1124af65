#include "chimera/embedding_world.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "chimera/error.hpp"
#include "chimera/hash.hpp"
#include "chimera/rng.hpp"

namespace chimera {
namespace {

std::string atom_key(const SemanticAtom& a) {
  std::string key(to_string(a.domain));
  key += '/';
  key += a.part;
  key += '/';
  key += a.subject;
  return key;
}

std::size_t argmax_first(const Vector& scores) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  }
  return best;
}

void check_slot_count(int k) {
  if (k < kMinAtomsPerPrompt || k > kMaxSlots) {
    throw ValidationError("slot count must be in [2, 4], got " + std::to_string(k));
  }
}

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("unexpected end of file");
  return v;
}

}  // namespace

SyntheticEncoder::SyntheticEncoder(std::uint64_t world_seed, int dim)
    : world_seed_(world_seed), dim_(dim) {
  if (dim < 1) throw ValidationError("embedding dimension must be positive");
}

Vector SyntheticEncoder::encode(const SemanticAtom& atom) const {
  Rng rng(mix_seed(world_seed_, fnv1a64(atom_key(atom))));
  Vector v(dim_);
  for (int i = 0; i < dim_; ++i) v[i] = rng.normal();
  return v / v.norm();
}

Matrix seeded_orthogonal(std::uint64_t seed, int dim) {
  Rng rng(seed);
  Matrix g(dim, dim);
  // Row-major fill so the draw order is independent of Eigen's storage order.
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) g(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
  const Matrix& r = qr.matrixQR();
  for (int c = 0; c < dim; ++c) {
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  return q;
}

EmbeddingWorld::EmbeddingWorld(const Taxonomy& taxonomy, WorldConfig config)
    : EmbeddingWorld(taxonomy, config,
                     std::make_shared<SyntheticEncoder>(config.world_seed, config.dim)) {}

EmbeddingWorld::EmbeddingWorld(const Taxonomy& taxonomy, WorldConfig config,
                               std::shared_ptr<const AtomEncoder> encoder)
    : config_(config), atoms_(enumerate_atoms(taxonomy)) {
  if (!encoder || encoder->dim() != config.dim) {
    throw DimensionMismatch("encoder dimension does not match world dimension");
  }
  const auto n = static_cast<Eigen::Index>(atoms_.size());
  table_.resize(n, config.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = atoms_[static_cast<std::size_t>(i)];
    index_.emplace(atom_key(a), static_cast<std::size_t>(i));
    table_.row(i) = encoder->encode(a).transpose();
  }
  for (int s = 0; s < kMaxSlots; ++s) {
    const std::string name = "slot-rotation-" + std::to_string(s);
    rotations_.push_back(seeded_orthogonal(mix_seed(config.world_seed, fnv1a64(name)), config.dim));
    keys_.push_back(table_ * rotations_.back().transpose());
  }
}

std::optional<std::size_t> EmbeddingWorld::find_atom(const SemanticAtom& atom) const {
  const auto it = index_.find(atom_key(atom));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingWorld::atom_index(const SemanticAtom& atom) const {
  if (auto idx = find_atom(atom)) return *idx;
  throw UnknownAtom("atom <" + atom.part + ", " + atom.subject + "> (" +
                    std::string(to_string(atom.domain)) + ") is not in the world");
}

std::vector<SemanticAtom> ConditionSet::atoms() const {
  std::vector<SemanticAtom> out;
  out.reserve(slots.size());
  for (const auto& s : slots) out.push_back(s.atom);
  return out;
}

ConditionSet make_condition(const EmbeddingWorld& world, std::span<const SemanticAtom> atoms) {
  check_slot_count(static_cast<int>(atoms.size()));
  ConditionSet cond;
  for (const auto& a : atoms) {
    const auto idx = world.atom_index(a);
    cond.slots.push_back({a, idx, world.atom_embedding(idx)});
  }
  return cond;
}

Vector compose_target(const ConditionSet& cond, const EmbeddingWorld& world) {
  check_slot_count(cond.size());
  Vector sum = Vector::Zero(world.dim());
  for (int i = 0; i < cond.size(); ++i) {
    sum.noalias() += world.slot_rotation(i) * cond.slots[static_cast<std::size_t>(i)].embedding;
  }
  return sum / sum.norm();
}

std::vector<std::size_t> match_slots(const Vector& e, int k, const EmbeddingWorld& world) {
  check_slot_count(k);
  if (e.size() != world.dim()) throw DimensionMismatch("embedding has wrong dimension");
  std::vector<std::size_t> out;
  for (int i = 0; i < k; ++i) out.push_back(argmax_first(world.slot_keys(i) * e));
  return out;
}

std::vector<std::size_t> decode_slots(const Vector& e, int k, const EmbeddingWorld& world) {
  constexpr int kMaxRefinements = 16;
  std::vector<std::size_t> current = match_slots(e, k, world);
  Matrix basis(world.dim(), k);
  for (int round = 0; round < kMaxRefinements; ++round) {
    for (int j = 0; j < k; ++j) {
      basis.col(j) = world.slot_keys(j).row(static_cast<Eigen::Index>(current[static_cast<std::size_t>(j)])).transpose();
    }
    const Vector weights = basis.colPivHouseholderQr().solve(e);
    const Vector fitted = basis * weights;
    std::vector<std::size_t> next(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      const Vector residual = e - fitted + weights[i] * basis.col(i);
      next[static_cast<std::size_t>(i)] = argmax_first(world.slot_keys(i) * residual);
    }
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

std::vector<SemanticAtom> decode_parts(const Vector& e, int k, const EmbeddingWorld& world) {
  std::vector<SemanticAtom> out;
  for (auto idx : decode_slots(e, k, world)) out.push_back(world.atom(idx));
  return out;
}

TrainingPair make_pair(const HybridPrompt& record, const EmbeddingWorld& world) {
  TrainingPair p;
  p.prompt_id = record.id;
  p.cond = make_condition(world, record.atoms);
  p.target = compose_target(p.cond, world);
  return p;
}

std::vector<TrainingPair> make_dataset(std::span<const HybridPrompt> corpus,
                                       const EmbeddingWorld& world) {
  std::vector<TrainingPair> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) out.push_back(make_pair(r, world));
  return out;
}

double cosine(const Vector& a, const Vector& b) {
  const double denom = a.norm() * b.norm();
  return denom > 0.0 ? a.dot(b) / denom : 0.0;
}

void save_world_header(const std::filesystem::path& path, const WorldConfig& config) {
  nlohmann::ordered_json j;
  j["world_seed"] = config.world_seed;
  j["d"] = config.dim;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

WorldConfig load_world_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open world header " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    return {j.at("world_seed").get<std::uint64_t>(), j.at("d").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("world header: ") + e.what());
  }
}

void save_dataset(const std::filesystem::path& path, std::span<const TrainingPair> data,
                  const EmbeddingWorld& world) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("CHDS", 4);
  write_pod<std::uint32_t>(out, 1);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(world.dim()));
  write_pod<std::uint64_t>(out, data.size());
  for (const auto& p : data) {
    for (int s = 0; s < kMaxSlots; ++s) {
      const std::int32_t idx =
          s < p.cond.size() ? static_cast<std::int32_t>(p.cond.slots[static_cast<std::size_t>(s)].atom_index) : -1;
      write_pod(out, idx);
    }
    write_pod<std::uint64_t>(out, p.prompt_id);
    for (Eigen::Index i = 0; i < p.target.size(); ++i) write_pod(out, static_cast<float>(p.target[i]));
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<TrainingPair> load_dataset(const std::filesystem::path& path,
                                       const EmbeddingWorld& world) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  char magic[4]{};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CHDS", 4) != 0) throw FormatError("bad dataset magic");
  if (read_pod<std::uint32_t>(in) != 1) throw FormatError("unsupported dataset version");
  if (read_pod<std::uint32_t>(in) != static_cast<std::uint32_t>(world.dim())) {
    throw DimensionMismatch("dataset dimension does not match world");
  }
  const auto count = read_pod<std::uint64_t>(in);
  std::vector<TrainingPair> out;
  out.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    std::vector<SemanticAtom> atoms;
    for (int s = 0; s < kMaxSlots; ++s) {
      const auto idx = read_pod<std::int32_t>(in);
      if (idx < 0) continue;
      if (static_cast<std::size_t>(idx) >= world.atom_count()) throw UnknownAtom("dataset atom index out of range");
      atoms.push_back(world.atom(static_cast<std::size_t>(idx)));
    }
    TrainingPair p;
    p.prompt_id = read_pod<std::uint64_t>(in);
    p.cond = make_condition(world, atoms);
    p.target.resize(world.dim());
    for (int i = 0; i < world.dim(); ++i) p.target[i] = read_pod<float>(in);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace chimera
