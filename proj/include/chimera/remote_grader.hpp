#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include "chimera/parteval.hpp"

namespace chimera::eval {

struct RemoteGraderConfig {
  /// Full URL of the grading endpoint, e.g. "http://127.0.0.1:8080/grade".
  std::string endpoint;
  /// Sent as "Authorization: Bearer <token>" when non-empty.
  std::string auth_token;
  std::chrono::milliseconds timeout{10000};
  int max_attempts = 3;
  std::chrono::milliseconds retry_backoff{200};
  /// Responses are cached here, one file per request hash. Empty disables caching.
  std::filesystem::path cache_dir;
};

/// JSON-over-HTTP grader.
///   POST <endpoint>  {"subject_ref", "question", "attribute", "expected"}
///   200 OK           {"verdict": 0|1, "rationale": "..."}
/// Transport failures, timeouts and 5xx responses are retried up to
/// max_attempts, then GraderUnavailable is thrown. A 200 response whose body
/// is not the documented shape raises MalformedVerdict without retrying.
class RemoteGrader final : public Grader {
 public:
  explicit RemoteGrader(RemoteGraderConfig config);

  Verdict grade(const GradeRequest& request) override;

  /// Canonical JSON body for a request (fixed key order).
  static std::string request_body(const GradeRequest& request);
  /// sha256 of request_body; the cache key.
  static std::string request_key(const GradeRequest& request);
  static Verdict parse_response(const std::string& body);

  std::size_t cache_hits() const;
  std::size_t network_calls() const;

 private:
  std::optional<Verdict> cached(const std::string& key) const;
  void store(const std::string& key, const Verdict& verdict) const;

  RemoteGraderConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  mutable std::mutex stats_mu_;
  mutable std::size_t cache_hits_ = 0;
  std::size_t network_calls_ = 0;
};

}  // namespace chimera::eval
