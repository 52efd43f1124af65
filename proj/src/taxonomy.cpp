#include "chimera/taxonomy.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "chimera/error.hpp"
#include "chimera/hash.hpp"

namespace chimera {
namespace {

constexpr std::array<std::pair<Domain, std::string_view>, kDomainCount> kDomainNames{{
    {Domain::creature, "creature"},
    {Domain::vehicle, "vehicle"},
    {Domain::furniture, "furniture"},
    {Domain::plant, "plant"},
    {Domain::electronics, "electronics"},
    {Domain::instrument, "instrument"},
}};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void parse_fail(int line_no, const std::string& what) {
  throw ParseError("taxonomy line " + std::to_string(line_no) + ": " + what);
}

std::string atom_label(std::string_view part, std::string_view subject) {
  return "<" + std::string(part) + ", " + std::string(subject) + ">";
}

}  // namespace

std::string_view to_string(Domain domain) {
  for (const auto& [d, name] : kDomainNames) {
    if (d == domain) return name;
  }
  return "unknown";
}

Domain domain_from_string(std::string_view name) {
  for (const auto& [d, n] : kDomainNames) {
    if (n == name) return d;
  }
  throw ParseError("unknown domain '" + std::string(name) + "'");
}

std::size_t Taxonomy::atom_count() const {
  std::size_t n = 0;
  for (const auto& d : domains) {
    for (const auto& p : d.parts) n += p.subjects.size();
  }
  return n;
}

std::string normalize_token(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : trim(raw)) {
    if (c == ' ' || c == '\t') {
      pending_space = true;
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '\'';
    if (!ok) throw ValidationError("invalid character in token '" + std::string(raw) + "'");
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  if (out.empty()) throw ValidationError("empty token");
  return out;
}

Taxonomy parse_taxonomy(std::string_view text) {
  Taxonomy tax;
  int line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;

    const auto sp = line.find_first_of(" \t");
    const std::string_view keyword = line.substr(0, sp);
    const std::string_view rest = sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp));

    if (keyword == "domain") {
      if (rest.empty()) parse_fail(line_no, "domain name missing");
      DomainEntry entry;
      try {
        entry.domain = domain_from_string(rest);
      } catch (const ParseError& e) {
        parse_fail(line_no, e.what());
      }
      tax.domains.push_back(std::move(entry));
    } else if (keyword == "prefix") {
      if (tax.domains.empty()) parse_fail(line_no, "prefix before any domain");
      if (rest.empty()) parse_fail(line_no, "empty prefix");
      tax.domains.back().prefix = std::string(rest);
    } else if (keyword == "part") {
      if (tax.domains.empty()) parse_fail(line_no, "part before any domain");
      const auto colon = rest.find(':');
      if (colon == std::string_view::npos) parse_fail(line_no, "expected 'part <name>: <subjects>'");
      PartEntry part;
      try {
        part.name = normalize_token(rest.substr(0, colon));
        for (std::string_view s : split(rest.substr(colon + 1), ',')) {
          part.subjects.push_back(normalize_token(s));
        }
      } catch (const ValidationError& e) {
        parse_fail(line_no, e.what());
      }
      tax.domains.back().parts.push_back(std::move(part));
    } else {
      parse_fail(line_no, "unknown directive '" + std::string(keyword) + "'");
    }
  }
  return tax;
}

Taxonomy load_taxonomy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open taxonomy file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Taxonomy tax = parse_taxonomy(buf.str());
  validate(tax);
  return tax;
}

void validate(const Taxonomy& taxonomy) {
  if (taxonomy.domains.size() != kDomainCount) {
    throw ValidationError("expected " + std::to_string(kDomainCount) + " domains, found " +
                          std::to_string(taxonomy.domains.size()));
  }
  std::set<Domain> seen_domains;
  std::set<std::pair<std::string, std::string>> seen_atoms;
  for (const auto& d : taxonomy.domains) {
    const std::string dname(to_string(d.domain));
    if (!seen_domains.insert(d.domain).second) {
      throw ValidationError("domain '" + dname + "' appears more than once");
    }
    if (d.prefix.empty()) throw ValidationError("domain '" + dname + "' has no prefix");
    if (d.parts.size() != kPartsPerDomain) {
      throw ValidationError("domain '" + dname + "': expected " + std::to_string(kPartsPerDomain) +
                            " parts, found " + std::to_string(d.parts.size()));
    }
    std::set<std::string> part_names;
    for (const auto& p : d.parts) {
      if (!part_names.insert(p.name).second) {
        throw ValidationError("domain '" + dname + "': part '" + p.name + "' listed twice");
      }
      const auto n = static_cast<int>(p.subjects.size());
      if (n < kMinSubjectsPerPart || n > kMaxSubjectsPerPart) {
        throw ValidationError("part '" + p.name + "' in domain '" + dname + "': expected " +
                              std::to_string(kMinSubjectsPerPart) + " to " +
                              std::to_string(kMaxSubjectsPerPart) + " subjects, found " +
                              std::to_string(n));
      }
      for (const auto& s : p.subjects) {
        if (!seen_atoms.emplace(p.name, s).second) {
          throw ValidationError("duplicate atom " + atom_label(p.name, s));
        }
      }
    }
  }
}

std::vector<SemanticAtom> enumerate_atoms(const Taxonomy& taxonomy) {
  std::vector<SemanticAtom> atoms;
  atoms.reserve(taxonomy.atom_count());
  for (const auto& d : taxonomy.domains) {
    for (const auto& p : d.parts) {
      for (const auto& s : p.subjects) atoms.push_back({p.name, s, d.domain});
    }
  }
  return atoms;
}

const DomainEntry& find_domain(const Taxonomy& taxonomy, Domain domain) {
  for (const auto& d : taxonomy.domains) {
    if (d.domain == domain) return d;
  }
  throw ValidationError("taxonomy has no domain '" + std::string(to_string(domain)) + "'");
}

std::vector<SemanticAtom> sample_atoms(const Taxonomy& taxonomy, Rng& rng, int k,
                                       bool mix_domains) {
  if (k < kMinAtomsPerPrompt || k > kMaxAtomsPerPrompt) {
    throw InsufficientAtoms("k must be in [2, 4], got " + std::to_string(k));
  }
  if (taxonomy.domains.empty()) throw InsufficientAtoms("taxonomy is empty");

  std::vector<SemanticAtom> pool;
  if (mix_domains) {
    pool = enumerate_atoms(taxonomy);
  } else {
    const auto& d = taxonomy.domains[rng.uniform_index(taxonomy.domains.size())];
    for (const auto& p : d.parts) {
      for (const auto& s : p.subjects) pool.push_back({p.name, s, d.domain});
    }
  }

  std::set<std::string> part_names;
  for (const auto& a : pool) part_names.insert(a.part);
  if (static_cast<int>(part_names.size()) < k) {
    throw InsufficientAtoms("requested " + std::to_string(k) + " atoms but only " +
                            std::to_string(part_names.size()) + " distinct parts are available");
  }

  std::vector<SemanticAtom> picked;
  picked.reserve(static_cast<std::size_t>(k));
  std::vector<const SemanticAtom*> eligible;
  for (int i = 0; i < k; ++i) {
    eligible.clear();
    for (const auto& a : pool) {
      const bool used = std::any_of(picked.begin(), picked.end(),
                                    [&](const SemanticAtom& p) { return p.part == a.part; });
      if (!used) eligible.push_back(&a);
    }
    picked.push_back(*eligible[rng.uniform_index(eligible.size())]);
  }
  return picked;
}

std::string render_prompt(std::string_view prefix, std::span<const SemanticAtom> atoms) {
  if (atoms.size() < kMinAtomsPerPrompt || atoms.size() > kMaxAtomsPerPrompt) {
    throw ValidationError("render_prompt needs 2 to 4 atoms, got " + std::to_string(atoms.size()));
  }
  std::string out(prefix);
  out += " with ";
  const std::size_t n = atoms.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      if (n == 2) {
        out += " and ";
      } else {
        out += (i + 1 == n) ? ", and " : ", ";
      }
    }
    out += atoms[i].part;
    out += " of a ";
    out += atoms[i].subject;
  }
  out += '.';
  return out;
}

std::uint64_t derive_seed(std::string_view text) { return fnv1a64(text); }

}  // namespace chimera
