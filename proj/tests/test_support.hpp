#pragma once

#include <string>

#include "chimera/embedding_world.hpp"
#include "chimera/taxonomy.hpp"

namespace chimera::test {

inline const Taxonomy& default_taxonomy() {
  static const Taxonomy t = load_taxonomy(CHIMERA_DEFAULT_TAXONOMY);
  return t;
}

inline const EmbeddingWorld& default_world() {
  static const EmbeddingWorld w(default_taxonomy(), WorldConfig{});
  return w;
}

// Taxonomy text with the given shape; subject names are unique per part.
inline std::string taxonomy_text(int domains, int parts, int subjects) {
  static const char* names[] = {"creature", "vehicle", "furniture", "plant", "electronics", "instrument"};
  std::string text;
  for (int d = 0; d < domains; ++d) {
    text += "domain " + std::string(names[d % 6]) + "\nprefix A thing\n";
    for (int p = 0; p < parts; ++p) {
      text += "part d" + std::to_string(d) + "p" + std::to_string(p) + ":";
      for (int s = 0; s < subjects; ++s) text += (s ? ", s" : " s") + std::to_string(s);
      text += "\n";
    }
  }
  return text;
}

}  // namespace chimera::test
