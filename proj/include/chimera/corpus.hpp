#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chimera/taxonomy.hpp"

namespace chimera {

/// Render settings attached to every prompt for an external text-to-image backend.
struct RenderConfig {
  int resolution = 1024;
  int steps = 50;
  double guidance_scale = 5.0;
  double scheduler_shift = 3.0;

  friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

void validate(const RenderConfig& render);

struct HybridPrompt {
  std::uint64_t id = 0;
  std::string prefix;
  bool domain_mix = false;
  std::vector<SemanticAtom> atoms;
  std::string text;
  std::uint64_t seed = 0;
  RenderConfig render;

  friend bool operator==(const HybridPrompt&, const HybridPrompt&) = default;
};

struct CorpusOptions {
  std::size_t n = 37000;
  std::uint64_t master_seed = 0;
  double mix_ratio = 0.5;
  RenderConfig render;
};

/// Record `index` of the corpus, generated from its own stream
/// mix_seed(master_seed, index); independent of every other record.
HybridPrompt generate_record(const Taxonomy& taxonomy, const CorpusOptions& options,
                             std::uint64_t index);

std::vector<HybridPrompt> generate_corpus(const Taxonomy& taxonomy, const CorpusOptions& options);

/// One compact JSON object, no trailing newline. Field order is fixed.
std::string to_json_line(const HybridPrompt& record);
HybridPrompt from_json_line(std::string_view line);

void write_corpus(std::ostream& out, std::span<const HybridPrompt> records);
void write_corpus(const std::filesystem::path& path, std::span<const HybridPrompt> records);
std::vector<HybridPrompt> read_corpus(const std::filesystem::path& path);

/// Checks the per-record invariants: 2..4 atoms, distinct parts, text is the
/// rendered template and seed is its hash. Throws ValidationError.
void check_record(const HybridPrompt& record);

}  // namespace chimera
