#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <json.hpp>
#include <set>
#include <thread>

#include "chimera/error.hpp"
#include "chimera/parteval.hpp"
#include "chimera/remote_grader.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h defines a _res macro that clashes with Eigen internals.
#include <httplib.h>

using namespace chimera;
using namespace chimera::eval;

namespace {

const AttributeMap kFull{{"color", "crimson"}, {"texture", "scaly"}, {"spatial_relation", "on top"}};

std::vector<int> verdicts_of(std::initializer_list<int> v) { return v; }

/// Scripted grader: answers by question index and records every request.
class ScriptedGrader final : public Grader {
 public:
  explicit ScriptedGrader(std::vector<int> answers) : answers_(std::move(answers)) {}
  Verdict grade(const GradeRequest& r) override {
    std::lock_guard lock(mu_);
    seen.push_back(r);
    const auto it = index.find(r.question + "|" + r.subject_ref);
    return {answers_.at(it == index.end() ? 0 : it->second), ""};
  }
  std::map<std::string, std::size_t> index;
  std::vector<GradeRequest> seen;

 private:
  std::vector<int> answers_;
  std::mutex mu_;
};

/// In-process grading server on an ephemeral port.
class FakeServer {
 public:
  explicit FakeServer(httplib::Server::Handler handler) {
    server_.Post("/grade", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/grade"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RemoteGraderConfig fast_config(std::string endpoint) {
  RemoteGraderConfig c;
  c.endpoint = std::move(endpoint);
  c.timeout = std::chrono::milliseconds(2000);
  c.retry_backoff = std::chrono::milliseconds(1);
  return c;
}

const GradeRequest kRequest{"chimera/7#0", "Is the wing recognizably that of a bat?", "object", "bat"};

}  // namespace

TEST_CASE("feature extraction") {
  const SemanticAtom atom{"wing", "bat", Domain::creature};
  const auto bare = parteval_extract(atom);
  CHECK(bare.object == "bat");
  CHECK(bare.part == "wing");
  CHECK(bare.color == kUnspecified);
  CHECK(bare.texture == kUnspecified);
  CHECK(bare.spatial_relation == kUnspecified);

  const auto full = parteval_extract(atom, &kFull);
  CHECK(full.color == "crimson");
  CHECK(full.texture == "scaly");
  CHECK(full.spatial_relation == "on top");

  const AttributeMap empty_color{{"color", ""}};
  CHECK(parteval_extract(atom, &empty_color).color == kUnspecified);
  CHECK_THROWS_AS(parteval_extract(SemanticAtom{"", "bat", Domain::creature}), ValidationError);
}

TEST_CASE("question templates and counts") {
  const SemanticAtom atom{"wing", "bat", Domain::creature};
  const auto qs = parteval_questions(parteval_extract(atom, &kFull), 1);
  REQUIRE(qs.size() == 5);
  CHECK(qs[0].text == "Is the wing recognizably that of a bat?");
  CHECK(qs[1].text == "Does the generated object have a clearly visible wing?");
  CHECK(qs[2].text == "Is the wing crimson?");
  CHECK(qs[3].text == "Does the wing have a scaly texture?");
  CHECK(qs[4].text == "Is the wing positioned on top?");
  const Attribute order[] = {Attribute::object, Attribute::part, Attribute::color, Attribute::texture,
                             Attribute::spatial_relation};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(qs[i].attribute == order[i]);
    CHECK(qs[i].slot == 1);
  }
  CHECK(qs[0].expected == "bat");
  CHECK(qs[1].expected == "wing");
  CHECK(qs[2].expected == "crimson");

  const auto bare = parteval_questions(parteval_extract(atom));
  CHECK(bare.size() == 2);

  const auto again = parteval_questions(parteval_extract(atom, &kFull), 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(again[i].text == qs[i].text);

  // Two fully specified parts: the 10-question scale.
  const auto& w = test::default_world();
  Rng rng(3);
  const auto cond = make_condition(w, sample_atoms(test::default_taxonomy(), rng, 2, true));
  const std::vector<AttributeMap> meta{kFull, kFull};
  const auto two = sample_questions(cond, meta);
  CHECK(two.size() == 10);
  CHECK(two[4].slot == 0);
  CHECK(two[5].slot == 1);
  CHECK(sample_questions(cond).size() == 4);

  for (auto a : order) CHECK(attribute_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(attribute_from_string("shape"), ValidationError);
}

TEST_CASE("grade arithmetic") {
  const auto seven = make_grade_record(verdicts_of({1, 1, 0, 1, 1, 0, 1, 1, 0, 1}));
  CHECK(seven.partial_score == 7);
  CHECK(seven.max_score == 10);
  CHECK(seven.normalized() == doctest::Approx(0.7).epsilon(1e-15));

  CHECK(make_grade_record(std::vector<int>(10, 0)).normalized() == 0.0);
  CHECK(make_grade_record(std::vector<int>(10, 1)).normalized() == 1.0);
  CHECK_THROWS_AS(make_grade_record(verdicts_of({1, 2})), MalformedVerdict);
  CHECK_THROWS_AS(make_grade_record(verdicts_of({-1})), MalformedVerdict);

  const std::vector<GradeRecord> pair{make_grade_record(verdicts_of({1, 1})), make_grade_record(verdicts_of({0, 0}))};
  CHECK(parteval_score(pair) == doctest::Approx(0.5));

  std::vector<int> v71(100, 0);
  std::fill(v71.begin(), v71.begin() + 71, 1);
  const std::vector<GradeRecord> many(200, make_grade_record(v71));
  CHECK(parteval_score(many) == doctest::Approx(0.71).epsilon(1e-12));

  const std::vector<GradeRecord> mixed{make_grade_record(verdicts_of({1, 1})), make_grade_record(verdicts_of({1, 0, 1}))};
  CHECK_THROWS_AS(parteval_score(mixed), MixedScale);
  CHECK_THROWS_AS(parteval_score(std::vector<GradeRecord>{}), TooFewSamples);
}

TEST_CASE("grading through a grader") {
  const SemanticAtom atom{"wing", "bat", Domain::creature};
  const auto qs = parteval_questions(parteval_extract(atom, &kFull));
  for (int in_flight : {1, 4}) {
    CAPTURE(in_flight);
    ConstantGrader yes(1), no(0), bad(2);
    CHECK(parteval_grade(yes, "s", qs, in_flight).normalized() == 1.0);
    CHECK(parteval_grade(no, "s", qs, in_flight).normalized() == 0.0);
    CHECK_THROWS_AS(parteval_grade(bad, "s", qs, in_flight), MalformedVerdict);
  }

  ScriptedGrader scripted({1, 0, 1, 1, 0});
  for (std::size_t i = 0; i < qs.size(); ++i) scripted.index[qs[i].text + "|s#0"] = i;
  const auto r = parteval_grade(scripted, "s", qs, 4);
  CHECK(r.verdicts == std::vector<int>{1, 0, 1, 1, 0});
  CHECK(r.partial_score == 3);
  REQUIRE(scripted.seen.size() == 5);
  for (const auto& req : scripted.seen) CHECK(req.subject_ref == "s#0");
}

TEST_CASE("oracle grader") {
  const auto& w = test::default_world();
  Rng rng(8);
  OracleGrader grader(w);
  std::vector<std::pair<std::string, ConditionSet>> subjects;
  for (int i = 0; i < 30; ++i) {
    auto cond = make_condition(w, sample_atoms(test::default_taxonomy(), rng, 2 + i % 3, true));
    const std::string ref = "oracle/" + std::to_string(i);
    grader.add_subject(ref, {compose_target(cond, w), cond});
    subjects.emplace_back(ref, std::move(cond));
  }
  for (const auto& [ref, cond] : subjects) {
    std::vector<AttributeMap> meta(static_cast<std::size_t>(cond.size()), kFull);
    const auto qs = sample_questions(cond, meta);
    CHECK(qs.size() == static_cast<std::size_t>(5 * cond.size()));
    CHECK(parteval_grade(grader, ref, qs).normalized() == 1.0);
  }

  // A sample whose slot 0 decodes to another subject fails exactly that slot's object question.
  const auto& [ref, cond] = subjects.front();
  const auto qs = sample_questions(cond);
  const std::size_t other = (cond.slots[0].atom_index + 1) % w.atom_count();
  std::vector<SemanticAtom> swapped;
  swapped.push_back(w.atom(other));
  for (int s = 1; s < cond.size(); ++s) swapped.push_back(cond.slots[static_cast<std::size_t>(s)].atom);
  const auto wrong = make_condition(w, swapped);
  grader.add_subject("wrong", {compose_target(wrong, w), cond});
  const auto rec = parteval_grade(grader, "wrong", qs);
  CHECK(rec.verdicts[0] == (w.atom(other).subject == cond.slots[0].atom.subject ? 1 : 0));
  CHECK(rec.verdicts[1] == (w.atom(other).part == cond.slots[0].atom.part ? 1 : 0));
  for (std::size_t i = 2; i < rec.verdicts.size(); ++i) CHECK(rec.verdicts[i] == 1);

  CHECK_THROWS_AS(grader.grade({"missing#0", "q", "object", "x"}), GraderUnavailable);
  CHECK_THROWS_AS(grader.grade({ref + "#9", "q", "object", "x"}), MalformedVerdict);
  CHECK_THROWS_AS(grader.grade({ref, "q", "object", "x"}), MalformedVerdict);
}

TEST_CASE("score is monotone under single verdict flips") {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const int scale = 1 + static_cast<int>(rng.uniform_index(20));
    const int n = 1 + static_cast<int>(rng.uniform_index(8));
    std::vector<std::vector<int>> raw(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(scale)));
    for (auto& r : raw)
      for (auto& v : r) v = static_cast<int>(rng.uniform_index(2));
    auto score_of = [](const std::vector<std::vector<int>>& rs) {
      std::vector<GradeRecord> recs;
      for (const auto& r : rs) recs.push_back(make_grade_record(r));
      return parteval_score(recs);
    };
    const double before = score_of(raw);
    CHECK(before >= 0.0);
    CHECK(before <= 1.0);
    const auto ri = rng.uniform_index(static_cast<std::uint64_t>(n));
    const auto vi = rng.uniform_index(static_cast<std::uint64_t>(scale));
    const int old = raw[ri][vi];
    raw[ri][vi] = 1;
    const double after = score_of(raw);
    if (old == 0) {
      CHECK(after > before);
    } else {
      CHECK(after == before);
    }
  }
}

TEST_CASE("remote grader wire contract") {
  CHECK(RemoteGrader::request_body(kRequest) ==
        R"({"subject_ref":"chimera/7#0","question":"Is the wing recognizably that of a bat?","attribute":"object","expected":"bat"})");
  CHECK(RemoteGrader::request_key(kRequest).size() == 64);
  CHECK(RemoteGrader::parse_response(R"({"verdict":1,"rationale":"clear"})").verdict == 1);
  CHECK(RemoteGrader::parse_response(R"({"verdict":0})").verdict == 0);
  CHECK_THROWS_AS(RemoteGrader::parse_response("yes"), MalformedVerdict);
  CHECK_THROWS_AS(RemoteGrader::parse_response(R"({"verdict":"1"})"), MalformedVerdict);
  CHECK_THROWS_AS(RemoteGrader::parse_response(R"({"verdict":3})"), MalformedVerdict);
  CHECK_THROWS_AS(RemoteGrader::parse_response(R"([1])"), MalformedVerdict);
  CHECK_THROWS_AS(RemoteGrader(fast_config("not a url")), ValidationError);
}

TEST_CASE("remote grader over HTTP") {
  std::atomic<int> calls{0};
  std::string last_auth;
  std::string last_body;
  std::mutex mu;
  FakeServer server([&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++calls;
    {
      std::lock_guard lock(mu);
      last_auth = req.get_header_value("Authorization");
      last_body = req.body;
    }
    if (n == 1) {
      res.status = 500;
      return;
    }
    const auto j = nlohmann::json::parse(req.body);
    const bool ok = j["attribute"] == "object" && j["expected"] == "bat";
    res.set_content(nlohmann::json{{"verdict", ok ? 1 : 0}, {"rationale", "fake"}}.dump(), "application/json");
  });

  SUBCASE("retries a server error, sends the token, then caches") {
    auto config = fast_config(server.endpoint());
    config.auth_token = "s3cret";
    config.cache_dir = std::filesystem::temp_directory_path() / ("chimera_grader_cache_" + std::to_string(::getpid()));
    std::filesystem::remove_all(config.cache_dir);
    {
      RemoteGrader grader(config);
      const auto v = grader.grade(kRequest);
      CHECK(v.verdict == 1);
      CHECK(v.rationale == "fake");
      CHECK(calls == 2);
      CHECK(last_auth == "Bearer s3cret");
      CHECK(last_body == RemoteGrader::request_body(kRequest));
      CHECK(grader.network_calls() == 2);

      CHECK(grader.grade(kRequest).verdict == 1);
      CHECK(calls == 2);
      CHECK(grader.cache_hits() == 1);
    }
    RemoteGrader fresh(config);
    CHECK(fresh.grade(kRequest).verdict == 1);
    CHECK(fresh.cache_hits() == 1);
    CHECK(fresh.network_calls() == 0);
    std::filesystem::remove_all(config.cache_dir);
  }

  SUBCASE("concurrent grading of a full sample") {
    calls = 1;  // skip the scripted failure
    RemoteGrader grader(fast_config(server.endpoint()));
    const auto qs = parteval_questions(parteval_extract(SemanticAtom{"wing", "bat", Domain::creature}, &kFull));
    const auto r = parteval_grade(grader, "chimera/7", qs, 4);
    CHECK(r.verdicts == std::vector<int>{1, 0, 0, 0, 0});
    CHECK(calls == 6);
  }

  SUBCASE("gives up after max attempts") {
    auto config = fast_config(server.endpoint());
    config.max_attempts = 1;
    RemoteGrader grader(config);
    CHECK_THROWS_AS(grader.grade(kRequest), GraderUnavailable);
  }
}

TEST_CASE("remote grader failures") {
  FakeServer malformed([](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"verdict": "maybe"})", "application/json");
  });
  RemoteGrader grader(fast_config(malformed.endpoint()));
  CHECK_THROWS_AS(grader.grade(kRequest), MalformedVerdict);
  CHECK(grader.network_calls() == 1);

  FakeServer forbidden([](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  CHECK_THROWS_AS(RemoteGrader(fast_config(forbidden.endpoint())).grade(kRequest), GraderUnavailable);

  // Nothing listens on a freshly released port.
  int dead_port = 0;
  {
    httplib::Server probe;
    dead_port = probe.bind_to_any_port("127.0.0.1");
  }
  auto config = fast_config("http://127.0.0.1:" + std::to_string(dead_port) + "/grade");
  config.timeout = std::chrono::milliseconds(300);
  RemoteGrader unreachable(config);
  CHECK_THROWS_AS(unreachable.grade(kRequest), GraderUnavailable);
  CHECK(unreachable.network_calls() == 3);
}
