#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "chimera/corpus.hpp"
#include "chimera/embedding_world.hpp"
#include "chimera/error.hpp"
#include "chimera/metrics.hpp"
#include "chimera/parteval.hpp"
#include "chimera/taxonomy.hpp"

namespace py = pybind11;
using namespace chimera;

namespace {

using AtomPair = std::pair<std::string, std::string>;  // (part, subject)

// Rows are samples.
std::vector<Vector> rows_of(const Eigen::Ref<const Matrix>& m) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).transpose());
  return out;
}

/// A taxonomy plus the embedding world built over it.
class World {
 public:
  World(const std::string& taxonomy_path, std::uint64_t seed, int dim)
      : taxonomy_(std::make_shared<Taxonomy>(load_taxonomy(taxonomy_path))),
        world_(*taxonomy_, WorldConfig{seed, dim}) {}

  int dim() const { return world_.dim(); }
  std::size_t atom_count() const { return world_.atom_count(); }

  std::vector<AtomPair> atoms() const {
    std::vector<AtomPair> out;
    for (const auto& a : world_.atoms()) out.emplace_back(a.part, a.subject);
    return out;
  }

  Vector compose(const std::vector<AtomPair>& parts) const { return compose_target(condition(parts), world_); }

  std::vector<AtomPair> decode(const Vector& e, int k) const {
    std::vector<AtomPair> out;
    for (const auto& a : decode_parts(e, k, world_)) out.emplace_back(a.part, a.subject);
    return out;
  }

  double compositional_accuracy(const Eigen::Ref<const Matrix>& generated,
                                const std::vector<std::vector<AtomPair>>& conditions) const {
    if (static_cast<std::size_t>(generated.rows()) != conditions.size()) {
      throw DimensionMismatch("one condition list per generated row is required");
    }
    std::vector<eval::GeneratedSample> samples;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      samples.push_back({generated.row(static_cast<Eigen::Index>(i)).transpose(), condition(conditions[i])});
    }
    return eval::compositional_accuracy(samples, world_);
  }

 private:
  ConditionSet condition(const std::vector<AtomPair>& parts) const {
    std::vector<SemanticAtom> atoms;
    for (const auto& [part, subject] : parts) {
      const auto found = std::find_if(world_.atoms().begin(), world_.atoms().end(), [&](const SemanticAtom& a) {
        return a.part == part && a.subject == subject;
      });
      if (found == world_.atoms().end()) throw UnknownAtom("unknown atom <" + part + ", " + subject + ">");
      atoms.push_back(*found);
    }
    return make_condition(world_, atoms);
  }

  std::shared_ptr<Taxonomy> taxonomy_;
  EmbeddingWorld world_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Chimera core: taxonomy, corpus, synthetic embedding world and evaluation metrics";
  m.attr("DEFAULT_TAXONOMY") = CHIMERA_DEFAULT_TAXONOMY;
  m.attr("DEFAULT_WORLD_SEED") = kDefaultWorldSeed;
  m.attr("__version__") = CHIMERA_VERSION;

  static py::exception<Error> base_error(m, "ChimeraError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  m.def(
      "validate_taxonomy",
      [](const std::string& path) {
        const auto t = load_taxonomy(path);
        validate(t);
        std::size_t parts = 0;
        for (const auto& d : t.domains) parts += d.parts.size();
        return py::dict(py::arg("domains") = t.domains.size(), py::arg("parts") = parts,
                        py::arg("atoms") = t.atom_count());
      },
      py::arg("path") = CHIMERA_DEFAULT_TAXONOMY, "Load and validate a taxonomy file; returns its counts.");

  m.def(
      "render_prompt",
      [](const std::string& prefix, const std::vector<AtomPair>& parts) {
        std::vector<SemanticAtom> atoms;
        for (const auto& [p, s] : parts) atoms.push_back({p, s, Domain::creature});
        return render_prompt(prefix, atoms);
      },
      py::arg("prefix"), py::arg("atoms"));
  m.def("derive_seed", [](const std::string& text) { return derive_seed(text); }, py::arg("text"));

  m.def(
      "generate_corpus",
      [](std::size_t n, std::uint64_t seed, double mix_ratio, const std::string& taxonomy) {
        CorpusOptions options;
        options.n = n;
        options.master_seed = seed;
        options.mix_ratio = mix_ratio;
        std::vector<std::string> lines;
        for (const auto& r : generate_corpus(load_taxonomy(taxonomy), options)) lines.push_back(to_json_line(r));
        return lines;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("mix_ratio") = 0.5, py::arg("taxonomy") = CHIMERA_DEFAULT_TAXONOMY,
      "Corpus records as JSON lines.");

  py::class_<World>(m, "World")
      .def(py::init<const std::string&, std::uint64_t, int>(), py::arg("taxonomy") = CHIMERA_DEFAULT_TAXONOMY,
           py::arg("seed") = kDefaultWorldSeed, py::arg("dim") = kDefaultEmbeddingDim)
      .def_property_readonly("dim", &World::dim)
      .def_property_readonly("atom_count", &World::atom_count)
      .def("atoms", &World::atoms)
      .def("compose", &World::compose, py::arg("atoms"), "Unit-norm composite target for (part, subject) slots.")
      .def("decode", &World::decode, py::arg("embedding"), py::arg("k"))
      .def("compositional_accuracy", &World::compositional_accuracy, py::arg("generated"), py::arg("conditions"));

  m.def(
      "fid",
      [](const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
        return eval::fid(eval::gaussian_stats(rows_of(a)), eval::gaussian_stats(rows_of(b)));
      },
      py::arg("a"), py::arg("b"), "Frechet distance between Gaussian fits of two (n, d) sample arrays.");
  m.def(
      "mmd2_unbiased",
      [](const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y) {
        return eval::mmd2_unbiased(rows_of(x), rows_of(y));
      },
      py::arg("x"), py::arg("y"));
  m.def(
      "kid",
      [](const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& y, int subset_size, int subsets,
         std::uint64_t seed) {
        Rng rng(seed);
        const auto r = eval::kid(rows_of(x), rows_of(y), subset_size, subsets, rng);
        return std::pair{r.mean, r.std};
      },
      py::arg("x"), py::arg("y"), py::arg("subset_size") = 100, py::arg("subsets") = 10, py::arg("seed") = 0,
      "(mean, std) of the unbiased MMD^2 over random subsets.");

  m.def(
      "parteval_questions",
      [](const std::string& part, const std::string& object, const eval::AttributeMap& attributes, int slot) {
        const auto f = eval::parteval_extract(SemanticAtom{part, object, Domain::creature}, &attributes);
        std::vector<py::dict> out;
        for (const auto& q : eval::parteval_questions(f, slot)) {
          out.push_back(py::dict(py::arg("text") = q.text, py::arg("attribute") = std::string(to_string(q.attribute)),
                                 py::arg("expected") = q.expected, py::arg("slot") = q.slot));
        }
        return out;
      },
      py::arg("part"), py::arg("object"), py::arg("attributes") = eval::AttributeMap{}, py::arg("slot") = 0);
  m.def(
      "parteval_score",
      [](const std::vector<std::vector<int>>& verdicts) {
        std::vector<eval::GradeRecord> records;
        for (const auto& v : verdicts) records.push_back(eval::make_grade_record(v));
        return eval::parteval_score(records);
      },
      py::arg("verdicts"), "Mean normalised score of per-sample verdict lists (all the same length).");
}
