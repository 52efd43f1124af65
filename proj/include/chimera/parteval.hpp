#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chimera/embedding_world.hpp"
#include "chimera/metrics.hpp"

namespace chimera::eval {

inline constexpr std::string_view kUnspecified = "unspecified";

enum class Attribute { object, part, color, texture, spatial_relation };
std::string_view to_string(Attribute attribute);
Attribute attribute_from_string(std::string_view name);

/// Stage 1 output: the structured description of one part.
struct PartFeature {
  std::string object;
  std::string part;
  std::string color{kUnspecified};
  std::string texture{kUnspecified};
  std::string spatial_relation{kUnspecified};

  const std::string& get(Attribute attribute) const;
};

using AttributeMap = std::map<std::string, std::string>;

/// object = subject and part = part of the atom; the remaining attributes
/// come from `metadata` (keys "color", "texture", "spatial_relation") when present.
PartFeature parteval_extract(const SemanticAtom& atom, const AttributeMap* metadata = nullptr);

/// Stage 2 question. `slot` is the part's position within the generated
/// sample; it is carried to the grader through the request subject_ref.
struct EvalQuestion {
  std::string text;
  Attribute attribute = Attribute::object;
  std::string expected;
  int slot = 0;
};

/// Question templates, one per attribute kind:
///   object            "Is the {part} recognizably that of a {object}?"
///   part              "Does the generated object have a clearly visible {part}?"
///   color             "Is the {part} {color}?"
///   texture           "Does the {part} have a {texture} texture?"
///   spatial_relation  "Is the {part} positioned {spatial_relation}?"
/// One question per specified attribute, in the order listed above.
std::vector<EvalQuestion> parteval_questions(const PartFeature& feature, int slot = 0);

/// Questions for every slot of a condition set, slot by slot.
std::vector<EvalQuestion> sample_questions(const ConditionSet& cond,
                                           std::span<const AttributeMap> metadata = {});

/// Wire request for one question. subject_ref names the generated output
/// being graded, suffixed with "#<slot>".
struct GradeRequest {
  std::string subject_ref;
  std::string question;
  std::string attribute;
  std::string expected;
};

struct Verdict {
  int verdict = 0;
  std::string rationale;
};

/// Stage 3 backend. Implementations must be safe to call concurrently.
class Grader {
 public:
  virtual ~Grader() = default;
  virtual Verdict grade(const GradeRequest& request) = 0;
};

/// Answers every question with the same verdict.
class ConstantGrader final : public Grader {
 public:
  explicit ConstantGrader(int verdict) : verdict_(verdict) {}
  Verdict grade(const GradeRequest&) override { return {verdict_, "constant"}; }

 private:
  int verdict_;
};

/// Grades generated embeddings of the synthetic world: a slot confirms the
/// object (resp. part) attribute when the decoded atom's subject (resp. part)
/// equals the expected value, and any other attribute when the decoded atom
/// is the conditioning atom itself.
class OracleGrader final : public Grader {
 public:
  explicit OracleGrader(const EmbeddingWorld& world) : world_(world) {}

  /// Registers a generated sample under `subject_ref`. Not thread-safe;
  /// register everything before grading.
  void add_subject(const std::string& subject_ref, const GeneratedSample& sample);

  Verdict grade(const GradeRequest& request) override;

 private:
  const EmbeddingWorld& world_;
  std::unordered_map<std::string, std::vector<std::size_t>> decoded_;
  std::unordered_map<std::string, std::vector<std::size_t>> truth_;
};

struct GradeRecord {
  std::vector<int> verdicts;
  int partial_score = 0;
  int max_score = 0;

  double normalized() const {
    return max_score == 0 ? 0.0 : static_cast<double>(partial_score) / max_score;
  }
};

/// Builds a record from raw verdicts; throws MalformedVerdict for values other than 0/1.
GradeRecord make_grade_record(std::span<const int> verdicts);

/// Grades every question with at most `max_in_flight` concurrent requests.
/// Throws MalformedVerdict for a verdict outside {0, 1}; GraderUnavailable
/// propagates from the backend.
GradeRecord parteval_grade(Grader& grader, const std::string& subject_ref,
                           std::span<const EvalQuestion> questions, int max_in_flight = 4);

/// Mean normalised score. Throws MixedScale if records disagree on max_score
/// and TooFewSamples for an empty list.
double parteval_score(std::span<const GradeRecord> records);

}  // namespace chimera::eval
