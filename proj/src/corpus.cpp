#include "chimera/corpus.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

#include "chimera/error.hpp"

namespace chimera {

using ojson = nlohmann::ordered_json;

void validate(const RenderConfig& render) {
  if (render.resolution <= 0) throw ValidationError("render resolution must be positive");
  if (render.steps <= 0) throw ValidationError("render steps must be positive");
  if (!(render.guidance_scale > 0.0)) throw ValidationError("guidance scale must be positive");
}

HybridPrompt generate_record(const Taxonomy& taxonomy, const CorpusOptions& options,
                             std::uint64_t index) {
  Rng rng(mix_seed(options.master_seed, index));
  const int k = kMinAtomsPerPrompt +
                static_cast<int>(rng.uniform_index(kMaxAtomsPerPrompt - kMinAtomsPerPrompt + 1));
  const bool mix = rng.uniform() < options.mix_ratio;

  HybridPrompt rec;
  rec.id = index;
  rec.domain_mix = mix;
  rec.atoms = sample_atoms(taxonomy, rng, k, mix);
  // Mixed prompts take the prefix of the first atom's domain.
  rec.prefix = find_domain(taxonomy, rec.atoms.front().domain).prefix;
  rec.text = render_prompt(rec.prefix, rec.atoms);
  rec.seed = derive_seed(rec.text);
  rec.render = options.render;
  return rec;
}

std::vector<HybridPrompt> generate_corpus(const Taxonomy& taxonomy, const CorpusOptions& options) {
  if (options.n < 1) throw ValidationError("corpus size must be at least 1");
  if (!(options.mix_ratio >= 0.0 && options.mix_ratio <= 1.0)) {
    throw ValidationError("mix ratio must be in [0, 1]");
  }
  validate(options.render);
  std::vector<HybridPrompt> out;
  out.reserve(options.n);
  for (std::size_t i = 0; i < options.n; ++i) out.push_back(generate_record(taxonomy, options, i));
  return out;
}

std::string to_json_line(const HybridPrompt& r) {
  ojson atoms = ojson::array();
  for (const auto& a : r.atoms) {
    atoms.push_back({{"part", a.part}, {"subject", a.subject}, {"domain", to_string(a.domain)}});
  }
  ojson j;
  j["id"] = r.id;
  j["prefix"] = r.prefix;
  j["domain_mix"] = r.domain_mix;
  j["atoms"] = std::move(atoms);
  j["text"] = r.text;
  j["seed"] = r.seed;
  j["render"] = {{"resolution", r.render.resolution},
                 {"steps", r.render.steps},
                 {"guidance_scale", r.render.guidance_scale},
                 {"scheduler_shift", r.render.scheduler_shift}};
  return j.dump();
}

HybridPrompt from_json_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    HybridPrompt r;
    r.id = j.at("id").get<std::uint64_t>();
    r.prefix = j.at("prefix").get<std::string>();
    r.domain_mix = j.at("domain_mix").get<bool>();
    for (const auto& a : j.at("atoms")) {
      r.atoms.push_back({a.at("part").get<std::string>(), a.at("subject").get<std::string>(),
                         domain_from_string(a.at("domain").get<std::string>())});
    }
    r.text = j.at("text").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& rc = j.at("render");
    r.render.resolution = rc.at("resolution").get<int>();
    r.render.steps = rc.at("steps").get<int>();
    r.render.guidance_scale = rc.at("guidance_scale").get<double>();
    r.render.scheduler_shift = rc.at("scheduler_shift").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("corpus record: ") + e.what());
  }
}

void write_corpus(std::ostream& out, std::span<const HybridPrompt> records) {
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

void write_corpus(const std::filesystem::path& path, std::span<const HybridPrompt> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus(out, records);
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<HybridPrompt> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open corpus " + path.string());
  std::vector<HybridPrompt> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_json_line(line));
  }
  return out;
}

void check_record(const HybridPrompt& r) {
  const auto n = r.atoms.size();
  if (n < kMinAtomsPerPrompt || n > kMaxAtomsPerPrompt) {
    throw ValidationError("record " + std::to_string(r.id) + ": atom count out of range");
  }
  std::set<std::string> parts;
  for (const auto& a : r.atoms) {
    if (!parts.insert(a.part).second) {
      throw ValidationError("record " + std::to_string(r.id) + ": repeated part '" + a.part + "'");
    }
  }
  if (r.text != render_prompt(r.prefix, r.atoms)) {
    throw ValidationError("record " + std::to_string(r.id) + ": text does not match template");
  }
  if (r.seed != derive_seed(r.text)) {
    throw ValidationError("record " + std::to_string(r.id) + ": seed does not match text");
  }
}

}  // namespace chimera
