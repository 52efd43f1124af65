#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chimera/rng.hpp"

namespace chimera {

enum class Domain { creature, vehicle, furniture, plant, electronics, instrument };

inline constexpr int kDomainCount = 6;
inline constexpr int kPartsPerDomain = 8;
inline constexpr int kMinSubjectsPerPart = 6;
inline constexpr int kMaxSubjectsPerPart = 19;
inline constexpr int kMinAtomsPerPrompt = 2;
inline constexpr int kMaxAtomsPerPrompt = 4;

std::string_view to_string(Domain domain);
/// Throws ParseError for names outside the six domains.
Domain domain_from_string(std::string_view name);

/// A <part, subject> pair tagged with the domain that supplies it.
struct SemanticAtom {
  std::string part;
  std::string subject;
  Domain domain = Domain::creature;

  friend bool operator==(const SemanticAtom&, const SemanticAtom&) = default;
};

struct PartEntry {
  std::string name;
  std::vector<std::string> subjects;
};

struct DomainEntry {
  Domain domain = Domain::creature;
  std::string prefix;
  std::vector<PartEntry> parts;
};

struct Taxonomy {
  std::vector<DomainEntry> domains;

  std::size_t atom_count() const;
};

/// Lowercases ASCII, trims, and collapses inner whitespace runs to one space.
/// Throws ValidationError if the result is empty or contains characters other
/// than [a-z0-9 '-].
std::string normalize_token(std::string_view raw);

Taxonomy parse_taxonomy(std::string_view text);

/// Reads and validates a taxonomy file. ParseError on malformed input,
/// ValidationError naming the first violated constraint otherwise.
Taxonomy load_taxonomy(const std::filesystem::path& path);

/// Checks the structural constraints: six distinct domains, eight parts per
/// domain, 6..19 subjects per part, unique (part, subject) pairs.
void validate(const Taxonomy& taxonomy);

/// Atoms in file order: domain, then part, then subject.
std::vector<SemanticAtom> enumerate_atoms(const Taxonomy& taxonomy);

/// Draws k distinct atoms with pairwise distinct part names. Without domain
/// mixing a domain is chosen uniformly first and all atoms come from it.
/// Throws InsufficientAtoms when fewer than k part names are available.
std::vector<SemanticAtom> sample_atoms(const Taxonomy& taxonomy, Rng& rng, int k,
                                       bool mix_domains);

/// "{prefix} with {p1} of a {s1}, {p2} of a {s2}, and {p3} of a {s3}."
/// Two atoms are joined with " and ", three or more use a serial comma.
std::string render_prompt(std::string_view prefix, std::span<const SemanticAtom> atoms);

/// FNV-1a 64 of the UTF-8 bytes of the prompt text.
std::uint64_t derive_seed(std::string_view text);

const DomainEntry& find_domain(const Taxonomy& taxonomy, Domain domain);

}  // namespace chimera
