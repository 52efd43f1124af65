#include "chimera/parteval.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "chimera/error.hpp"

namespace chimera::eval {
namespace {

constexpr Attribute kAttributeOrder[] = {Attribute::object, Attribute::part, Attribute::color,
                                         Attribute::texture, Attribute::spatial_relation};

std::string question_text(const PartFeature& f, Attribute a) {
  switch (a) {
    case Attribute::object:
      return "Is the " + f.part + " recognizably that of a " + f.object + "?";
    case Attribute::part:
      return "Does the generated object have a clearly visible " + f.part + "?";
    case Attribute::color:
      return "Is the " + f.part + " " + f.color + "?";
    case Attribute::texture:
      return "Does the " + f.part + " have a " + f.texture + " texture?";
    case Attribute::spatial_relation:
      return "Is the " + f.part + " positioned " + f.spatial_relation + "?";
  }
  return {};
}

// "sample-3#1" -> ("sample-3", 1)
std::pair<std::string, int> split_subject_ref(const std::string& ref) {
  const auto hash = ref.rfind('#');
  if (hash == std::string::npos) throw MalformedVerdict("subject_ref '" + ref + "' has no slot suffix");
  try {
    return {ref.substr(0, hash), std::stoi(ref.substr(hash + 1))};
  } catch (const std::exception&) {
    throw MalformedVerdict("subject_ref '" + ref + "' has a bad slot suffix");
  }
}

}  // namespace

std::string_view to_string(Attribute attribute) {
  switch (attribute) {
    case Attribute::object: return "object";
    case Attribute::part: return "part";
    case Attribute::color: return "color";
    case Attribute::texture: return "texture";
    case Attribute::spatial_relation: return "spatial_relation";
  }
  return "unknown";
}

Attribute attribute_from_string(std::string_view name) {
  for (auto a : kAttributeOrder) {
    if (to_string(a) == name) return a;
  }
  throw ValidationError("unknown attribute '" + std::string(name) + "'");
}

const std::string& PartFeature::get(Attribute attribute) const {
  switch (attribute) {
    case Attribute::object: return object;
    case Attribute::part: return part;
    case Attribute::color: return color;
    case Attribute::texture: return texture;
    case Attribute::spatial_relation: return spatial_relation;
  }
  return object;
}

PartFeature parteval_extract(const SemanticAtom& atom, const AttributeMap* metadata) {
  if (atom.part.empty() || atom.subject.empty()) {
    throw ValidationError("part features need both a part and an object");
  }
  PartFeature f;
  f.object = atom.subject;
  f.part = atom.part;
  if (metadata != nullptr) {
    auto take = [&](const char* key, std::string& field) {
      if (auto it = metadata->find(key); it != metadata->end() && !it->second.empty()) field = it->second;
    };
    take("color", f.color);
    take("texture", f.texture);
    take("spatial_relation", f.spatial_relation);
  }
  return f;
}

std::vector<EvalQuestion> parteval_questions(const PartFeature& feature, int slot) {
  std::vector<EvalQuestion> out;
  for (auto a : kAttributeOrder) {
    const std::string& value = feature.get(a);
    if (value.empty() || value == kUnspecified) continue;
    out.push_back({question_text(feature, a), a, value, slot});
  }
  return out;
}

std::vector<EvalQuestion> sample_questions(const ConditionSet& cond, std::span<const AttributeMap> metadata) {
  std::vector<EvalQuestion> out;
  for (int s = 0; s < cond.size(); ++s) {
    const AttributeMap* meta = static_cast<std::size_t>(s) < metadata.size() ? &metadata[static_cast<std::size_t>(s)] : nullptr;
    for (auto& q : parteval_questions(parteval_extract(cond.slots[static_cast<std::size_t>(s)].atom, meta), s)) {
      out.push_back(std::move(q));
    }
  }
  return out;
}

void OracleGrader::add_subject(const std::string& subject_ref, const GeneratedSample& sample) {
  decoded_[subject_ref] = decode_slots(sample.generated, sample.cond.size(), world_);
  std::vector<std::size_t> truth;
  for (const auto& s : sample.cond.slots) truth.push_back(s.atom_index);
  truth_[subject_ref] = std::move(truth);
}

Verdict OracleGrader::grade(const GradeRequest& request) {
  const auto [ref, slot] = split_subject_ref(request.subject_ref);
  const auto dec = decoded_.find(ref);
  if (dec == decoded_.end()) throw GraderUnavailable("oracle grader has no subject '" + ref + "'");
  const auto& truth = truth_.at(ref);
  if (slot < 0 || static_cast<std::size_t>(slot) >= truth.size()) {
    throw MalformedVerdict("slot " + std::to_string(slot) + " out of range for '" + ref + "'");
  }
  const auto got = dec->second[static_cast<std::size_t>(slot)];
  const auto& atom = world_.atom(got);
  bool ok = false;
  switch (attribute_from_string(request.attribute)) {
    case Attribute::object: ok = atom.subject == request.expected; break;
    case Attribute::part: ok = atom.part == request.expected; break;
    default: ok = got == truth[static_cast<std::size_t>(slot)]; break;
  }
  return {ok ? 1 : 0, "decoded <" + atom.part + ", " + atom.subject + ">"};
}

GradeRecord make_grade_record(std::span<const int> verdicts) {
  GradeRecord r;
  for (int v : verdicts) {
    if (v != 0 && v != 1) throw MalformedVerdict("verdict must be 0 or 1, got " + std::to_string(v));
    r.verdicts.push_back(v);
    r.partial_score += v;
  }
  r.max_score = static_cast<int>(verdicts.size());
  return r;
}

GradeRecord parteval_grade(Grader& grader, const std::string& subject_ref, std::span<const EvalQuestion> questions,
                           int max_in_flight) {
  std::vector<int> verdicts(questions.size(), 0);
  auto grade_one = [&](std::size_t i) {
    const auto& q = questions[i];
    const GradeRequest req{subject_ref + "#" + std::to_string(q.slot), q.text, std::string(to_string(q.attribute)),
                           q.expected};
    verdicts[i] = grader.grade(req).verdict;
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(max_in_flight, 1)), questions.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < questions.size(); ++i) grade_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < questions.size(); i = next++) {
            try {
              grade_one(i);
            } catch (...) {
              std::lock_guard lock(failure_mu);
              if (!failure) failure = std::current_exception();
              next = questions.size();
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return make_grade_record(verdicts);
}

double parteval_score(std::span<const GradeRecord> records) {
  if (records.empty()) throw TooFewSamples("parteval_score needs at least one record");
  const int scale = records.front().max_score;
  double sum = 0.0;
  for (const auto& r : records) {
    if (r.max_score != scale) {
      throw MixedScale("records have different question counts (" + std::to_string(scale) + " vs " +
                       std::to_string(r.max_score) + ")");
    }
    sum += r.normalized();
  }
  return sum / static_cast<double>(records.size());
}

}  // namespace chimera::eval
