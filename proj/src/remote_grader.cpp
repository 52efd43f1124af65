#include "chimera/remote_grader.hpp"

#include <fstream>
#include <httplib.h>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "chimera/error.hpp"
#include "chimera/hash.hpp"

namespace chimera::eval {

RemoteGrader::RemoteGrader(RemoteGraderConfig config) : config_(std::move(config)) {
  const auto scheme = config_.endpoint.find("://");
  if (scheme == std::string::npos) throw ValidationError("grader endpoint must be a URL: " + config_.endpoint);
  const auto slash = config_.endpoint.find('/', scheme + 3);
  scheme_host_port_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : config_.endpoint.substr(slash);
  if (config_.max_attempts < 1) throw ValidationError("grader needs at least one attempt");
  if (!config_.cache_dir.empty()) std::filesystem::create_directories(config_.cache_dir);
}

std::string RemoteGrader::request_body(const GradeRequest& r) {
  nlohmann::ordered_json j;
  j["subject_ref"] = r.subject_ref;
  j["question"] = r.question;
  j["attribute"] = r.attribute;
  j["expected"] = r.expected;
  return j.dump();
}

std::string RemoteGrader::request_key(const GradeRequest& r) { return sha256_hex(request_body(r)); }

Verdict RemoteGrader::parse_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw MalformedVerdict("grader response is not JSON");
  }
  if (!j.is_object() || !j.contains("verdict") || !j["verdict"].is_number_integer()) {
    throw MalformedVerdict("grader response lacks an integer verdict");
  }
  const int v = j["verdict"].get<int>();
  if (v != 0 && v != 1) throw MalformedVerdict("verdict must be 0 or 1, got " + std::to_string(v));
  Verdict out{v, {}};
  if (j.contains("rationale") && j["rationale"].is_string()) out.rationale = j["rationale"].get<std::string>();
  return out;
}

std::optional<Verdict> RemoteGrader::cached(const std::string& key) const {
  if (config_.cache_dir.empty()) return std::nullopt;
  std::ifstream in(config_.cache_dir / (key + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_response(buf.str());
  } catch (const MalformedVerdict&) {
    return std::nullopt;  // corrupt entry, refetch
  }
}

void RemoteGrader::store(const std::string& key, const Verdict& verdict) const {
  if (config_.cache_dir.empty()) return;
  nlohmann::ordered_json j;
  j["verdict"] = verdict.verdict;
  j["rationale"] = verdict.rationale;
  // Write-then-rename so concurrent readers never see a partial file.
  const auto final_path = config_.cache_dir / (key + ".json");
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const auto tmp = config_.cache_dir / (key + ".tmp" + tid.str());
  {
    std::ofstream out(tmp, std::ios::binary);
    out << j.dump();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, final_path, ec);
  if (ec) std::filesystem::remove(tmp, ec);
}

Verdict RemoteGrader::grade(const GradeRequest& request) {
  const std::string key = request_key(request);
  if (auto hit = cached(key)) {
    std::lock_guard lock(stats_mu_);
    ++cache_hits_;
    return *hit;
  }

  const std::string body = request_body(request);
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.retry_backoff * attempt);
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!config_.auth_token.empty()) headers.emplace("Authorization", "Bearer " + config_.auth_token);
    {
      std::lock_guard lock(stats_mu_);
      ++network_calls_;
    }
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server returned " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw GraderUnavailable("grader rejected request with status " + std::to_string(res->status));
    }
    Verdict v = parse_response(res->body);
    store(key, v);
    return v;
  }
  throw GraderUnavailable("grader unreachable after " + std::to_string(config_.max_attempts) +
                          " attempts: " + last_error);
}

std::size_t RemoteGrader::cache_hits() const {
  std::lock_guard lock(stats_mu_);
  return cache_hits_;
}

std::size_t RemoteGrader::network_calls() const {
  std::lock_guard lock(stats_mu_);
  return network_calls_;
}

}  // namespace chimera::eval
