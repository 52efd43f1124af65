#include "chimera/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "chimera/corpus.hpp"
#include "chimera/hash.hpp"
#include "chimera/metrics.hpp"
#include "chimera/parteval.hpp"
#include "chimera/remote_grader.hpp"
#include "chimera/report.hpp"
#include "chimera/rng.hpp"
#include "chimera/taxonomy.hpp"

namespace chimera::pipeline {
namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string v = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw UsageError("invalid value '" + v + "' for " + std::string(key));
  }
  return out;
}

// Shortest representation that parses back to the same double.
std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

struct KeySpec {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
KeySpec numeric(std::string key, T RunConfig::*field) {
  return {key,
          [key, field](RunConfig& c, std::string_view v) { c.*field = parse_number<T>(key, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*field);
            else return std::to_string(c.*field);
          }};
}

template <class T>
KeySpec train_numeric(std::string key, T prior::TrainConfig::*field) {
  return {key,
          [key, field](RunConfig& c, std::string_view v) { c.train.*field = parse_number<T>(key, v); },
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.train.*field);
            else return std::to_string(c.train.*field);
          }};
}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = [] {
    std::vector<KeySpec> s;
    s.push_back({"taxonomy", [](RunConfig& c, std::string_view v) { c.taxonomy = trim(v); },
                 [](const RunConfig& c) { return c.taxonomy.string(); }});
    s.push_back({"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = trim(v); },
                 [](const RunConfig& c) { return c.out_dir.string(); }});
    s.push_back(numeric("corpus.n", &RunConfig::corpus_n));
    s.push_back(numeric("corpus.seed", &RunConfig::corpus_seed));
    s.push_back(numeric("corpus.mix_ratio", &RunConfig::mix_ratio));
    s.push_back(numeric("holdout", &RunConfig::holdout));
    s.push_back(numeric("world.seed", &RunConfig::world_seed));
    s.push_back(numeric("world.dim", &RunConfig::dim));
    s.push_back({"train.objective",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.train.objective = prior::objective_from_string(trim(v));
                   } catch (const Error& e) {
                     throw UsageError(std::string("train.objective: ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return std::string(prior::to_string(c.train.objective)); }});
    s.push_back(train_numeric("train.steps", &prior::TrainConfig::steps));
    s.push_back(train_numeric("train.lr", &prior::TrainConfig::lr));
    s.push_back(train_numeric("train.batch_size", &prior::TrainConfig::batch_size));
    s.push_back(train_numeric("train.cond_dropout", &prior::TrainConfig::cond_dropout));
    s.push_back(train_numeric("train.seed", &prior::TrainConfig::seed));
    s.push_back(train_numeric("train.hidden_width", &prior::TrainConfig::hidden_width));
    s.push_back(train_numeric("train.hidden_layers", &prior::TrainConfig::hidden_layers));
    s.push_back(train_numeric("train.log_every", &prior::TrainConfig::log_every));
    s.push_back(numeric("sample.steps", &RunConfig::sample_steps));
    s.push_back(numeric("sample.cfg", &RunConfig::cfg_scale));
    s.push_back(numeric("sample.seed", &RunConfig::sample_seed));
    s.push_back({"eval.label", [](RunConfig& c, std::string_view v) { c.label = trim(v); },
                 [](const RunConfig& c) { return c.label; }});
    s.push_back(numeric("eval.kid_subset_size", &RunConfig::kid_subset_size));
    s.push_back(numeric("eval.kid_subsets", &RunConfig::kid_subsets));
    s.push_back(numeric("eval.seed", &RunConfig::eval_seed));
    s.push_back({"grader.endpoint", [](RunConfig& c, std::string_view v) { c.grader_endpoint = trim(v); },
                 [](const RunConfig& c) { return c.grader_endpoint; }});
    // The token is accepted but never written back out (manifests are shareable).
    s.push_back({"grader.token", [](RunConfig& c, std::string_view v) { c.grader_token = trim(v); },
                 nullptr});
    s.push_back({"grader.cache", [](RunConfig& c, std::string_view v) { c.grader_cache = trim(v); },
                 [](const RunConfig& c) { return c.grader_cache.string(); }});
    return s;
  }();
  return specs;
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("short write to " + path.string());
}

ojson atom_json(const SemanticAtom& a) {
  ojson j;
  j["part"] = a.part;
  j["subject"] = a.subject;
  j["domain"] = std::string(to_string(a.domain));
  return j;
}

ojson int_keyed(const std::map<int, double>& m) {
  ojson j = ojson::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

template <class F>
auto stage(const char* name, std::ostream* log, F&& body) {
  if (log) *log << "[" << name << "]\n" << std::flush;
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& s : key_specs()) k.push_back(s.key);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  const std::string k = trim(key);
  for (const auto& s : key_specs()) {
    if (s.key == k) {
      s.set(config, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + k + "'");
}

void apply_config_text(RunConfig& config, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_setting(config, line.substr(0, eq), line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config file " + path.string() + " (--config)");
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str());
}

std::vector<std::pair<std::string, std::string>> settings(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : key_specs()) {
    if (s.get) out.emplace_back(s.key, s.get(config));
  }
  return out;
}

void validate(const RunConfig& config) {
  if (config.taxonomy.empty() || !fs::is_regular_file(config.taxonomy)) {
    throw UsageError("taxonomy file not found: '" + config.taxonomy.string() + "' (set --taxonomy)");
  }
  if (config.out_dir.empty()) throw UsageError("out_dir must not be empty (set --out)");
  if (config.holdout < 2) throw UsageError("holdout must be at least 2");
  if (config.holdout >= config.corpus_n) throw UsageError("holdout must be smaller than corpus.n");
  if (config.mix_ratio < 0.0 || config.mix_ratio > 1.0) throw UsageError("corpus.mix_ratio must lie in [0, 1]");
  if (config.dim < 2) throw UsageError("world.dim must be at least 2");
  if (config.sample_steps < 0) throw UsageError("sample.steps must be non-negative");
  if (config.train.objective == prior::Objective::rectified_flow && config.sample_steps < 1) {
    throw UsageError("sample.steps must be at least 1 for the flow objective");
  }
  if (config.kid_subset_size < 2 || config.kid_subsets < 2) {
    throw UsageError("eval.kid_subset_size and eval.kid_subsets must be at least 2");
  }
  try {
    prior::validate(config.train);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
}

std::string checkpoint_metadata(prior::Objective objective, const WorldConfig& world) {
  ojson j;
  j["objective"] = std::string(prior::to_string(objective));
  j["world_seed"] = world.world_seed;
  j["d"] = world.dim;
  return j.dump();
}

std::pair<prior::Objective, WorldConfig> parse_checkpoint_metadata(const std::string& metadata) {
  try {
    const auto j = nlohmann::json::parse(metadata);
    WorldConfig world{j.at("world_seed").get<std::uint64_t>(), j.at("d").get<int>()};
    return {prior::objective_from_string(j.at("objective").get<std::string>()), world};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not a prior checkpoint: ") + e.what());
  }
}

Vector generate(const nn::DenseNet& net, prior::Objective objective, const ConditionSet& cond,
                const SampleOptions& options, std::uint64_t key) {
  Rng rng(mix_seed(options.seed, key));
  const auto predictor = prior::net_predictor(net);
  if (objective == prior::Objective::rectified_flow) {
    return prior::sample_flow(predictor, cond, options.steps, options.cfg_scale, rng);
  }
  static const auto sched = prior::NoiseSchedule::linear();
  return prior::sample_diffusion(predictor, cond, sched, rng, options.steps, options.cfg_scale);
}

std::string sample_json_line(std::uint64_t prompt_id, const ConditionSet& cond, const Vector& generated,
                             const EmbeddingWorld& world) {
  ojson j;
  j["prompt_id"] = prompt_id;
  j["atoms"] = ojson::array();
  for (const auto& s : cond.slots) j["atoms"].push_back(atom_json(s.atom));
  j["cosine_to_oracle"] = cosine(generated, compose_target(cond, world));
  j["decoded_atoms"] = ojson::array();
  for (const auto& a : decode_parts(generated, cond.size(), world)) j["decoded_atoms"].push_back(atom_json(a));
  return j.dump();
}

const std::vector<std::string>& artifact_names() {
  static const std::vector<std::string> names{"corpus.jsonl", "world.json",   "dataset.bin",
                                              "prior.ckpt",   "loss.csv",     "samples.jsonl",
                                              "report.json",  "report.csv",   "report.svg",
                                              "metrics.svg"};
  return names;
}

EvalOutput evaluate(const nn::DenseNet& net, prior::Objective objective, const EmbeddingWorld& world,
                    std::span<const TrainingPair> heldout, const RunConfig& config) {
  if (heldout.size() < 2) throw TooFewSamples("evaluation needs at least two held-out pairs");
  const SampleOptions options{config.sample_steps, config.cfg_scale, config.sample_seed};

  std::vector<eval::GeneratedSample> generated;
  std::vector<Vector> targets;
  std::string samples_jsonl;
  for (const auto& pair : heldout) {
    Vector g = generate(net, objective, pair.cond, options, pair.prompt_id);
    samples_jsonl += sample_json_line(pair.prompt_id, pair.cond, g, world);
    samples_jsonl += '\n';
    generated.push_back({std::move(g), pair.cond});
    targets.push_back(pair.target);
  }

  std::unique_ptr<eval::Grader> grader;
  eval::OracleGrader* oracle = nullptr;
  int in_flight = 1;
  if (config.grader_endpoint.empty()) {
    auto o = std::make_unique<eval::OracleGrader>(world);
    oracle = o.get();
    grader = std::move(o);
  } else {
    grader = std::make_unique<eval::RemoteGrader>(
        eval::RemoteGraderConfig{config.grader_endpoint, config.grader_token, std::chrono::milliseconds{10000}, 3,
                                 std::chrono::milliseconds{200}, config.grader_cache});
    in_flight = 4;
  }

  EvalSummary summary;
  std::map<int, std::vector<eval::GradeRecord>> records_by_k;
  std::map<int, double> match_sum;
  double cos_sum = 0.0, match_total = 0.0, parteval_total = 0.0;
  ojson per_sample = ojson::array();
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto& g = generated[i];
    const int k = g.cond.size();
    const std::string ref = config.label + "/" + std::to_string(heldout[i].prompt_id);
    if (oracle) oracle->add_subject(ref, g);
    const auto questions = eval::sample_questions(g.cond);
    const auto record = eval::parteval_grade(*grader, ref, questions, in_flight);
    const double cos = cosine(g.generated, targets[i]);
    const double match = eval::slot_match_rate(g, world);

    cos_sum += cos;
    match_total += match;
    match_sum[k] += match;
    summary.count_by_k[k] += 1;
    parteval_total += record.normalized();
    records_by_k[k].push_back(record);

    ojson s;
    s["prompt_id"] = heldout[i].prompt_id;
    s["k"] = k;
    s["cosine_to_oracle"] = cos;
    s["slot_match"] = match;
    s["partial_score"] = record.partial_score;
    s["max_score"] = record.max_score;
    s["normalized"] = record.normalized();
    per_sample.push_back(std::move(s));
  }
  const auto n = static_cast<double>(generated.size());
  summary.mean_cosine = cos_sum / n;
  summary.compositional_accuracy = match_total / n;
  for (const auto& [k, sum] : match_sum) summary.accuracy_by_k[k] = sum / static_cast<double>(summary.count_by_k[k]);
  for (const auto& [k, recs] : records_by_k) summary.parteval_by_k[k] = eval::parteval_score(recs);
  // Records of different part counts have different question totals, so the
  // overall score is the plain mean of the per-sample normalised scores.
  summary.parteval = parteval_total / n;

  std::vector<Vector> gen_vectors;
  for (const auto& g : generated) gen_vectors.push_back(g.generated);
  summary.fid = eval::fid(eval::gaussian_stats(gen_vectors), eval::gaussian_stats(targets));
  const int subset = std::min<int>(config.kid_subset_size, static_cast<int>(heldout.size()));
  Rng kid_rng(config.eval_seed);
  const auto kid = eval::kid(gen_vectors, targets, subset, config.kid_subsets, kid_rng);
  summary.kid_mean = kid.mean;
  summary.kid_std = kid.std;

  ojson report;
  report["label"] = config.label;
  report["metric"] = "parteval";
  report["final_score"] = summary.parteval;
  report["per_complexity"] = int_keyed(summary.parteval_by_k);
  ojson metrics;
  metrics["samples"] = generated.size();
  metrics["mean_cosine"] = summary.mean_cosine;
  metrics["compositional_accuracy"] = summary.compositional_accuracy;
  metrics["compositional_accuracy_by_k"] = int_keyed(summary.accuracy_by_k);
  metrics["fid"] = summary.fid;
  metrics["kid_mean"] = summary.kid_mean;
  metrics["kid_std"] = summary.kid_std;
  metrics["kid_subset_size"] = subset;
  metrics["kid_subsets"] = config.kid_subsets;
  report["metrics"] = std::move(metrics);
  report["per_sample"] = std::move(per_sample);

  return {summary, std::move(samples_jsonl), report.dump(2) + "\n"};
}

RunResult run(const RunConfig& config, std::ostream* log) {
  validate(config);
  RunResult result;
  result.out_dir = fs::absolute(config.out_dir);
  fs::create_directories(result.out_dir);
  const auto out = [&](const std::string& name) { return result.out_dir / name; };

  const Taxonomy taxonomy = stage("taxonomy", log, [&] { return load_taxonomy(config.taxonomy); });

  const auto corpus = stage("corpus", log, [&] {
    CorpusOptions options;
    options.n = config.corpus_n;
    options.master_seed = config.corpus_seed;
    options.mix_ratio = config.mix_ratio;
    auto records = generate_corpus(taxonomy, options);
    write_corpus(out("corpus.jsonl"), records);
    return records;
  });

  const WorldConfig world_config{config.world_seed, config.dim};
  const EmbeddingWorld world = stage("world", log, [&] {
    save_world_header(out("world.json"), world_config);
    return EmbeddingWorld(taxonomy, world_config);
  });
  const auto dataset = stage("dataset", log, [&] {
    auto data = make_dataset(corpus, world);
    save_dataset(out("dataset.bin"), data, world);
    return data;
  });
  const std::size_t n_train = dataset.size() - config.holdout;
  const std::span<const TrainingPair> train_set(dataset.data(), n_train);
  const std::span<const TrainingPair> heldout(dataset.data() + n_train, config.holdout);

  const nn::DenseNet net = stage("train", log, [&] {
    auto trained = prior::train(config.train, train_set, config.dim, [&](int step, double loss) {
      if (log && step % 1000 == 0) *log << "  step " << step << " loss " << loss << '\n' << std::flush;
    });
    result.initial_loss = trained.initial_loss;
    result.final_loss = trained.final_window_loss;
    prior::write_loss_csv(out("loss.csv"), trained.curve);
    nn::save_checkpoint(out("prior.ckpt"), {trained.net, trained.adam,
                                            checkpoint_metadata(config.train.objective, world_config)});
    return std::move(trained.net);
  });

  const auto evaluated = stage("sample", log, [&] {
    auto e = evaluate(net, config.train.objective, world, heldout, config);
    write_text(out("samples.jsonl"), e.samples_jsonl);
    return e;
  });
  result.summary = evaluated.summary;

  stage("eval", log, [&] {
    write_text(out("report.json"), evaluated.report_json);
    const std::vector<nlohmann::json> docs{nlohmann::json::parse(evaluated.report_json)};
    const auto table = report::collect(docs);
    write_text(out("report.csv"), report::to_csv(table));
    write_text(out("report.svg"), report::to_svg(table));
    const std::vector<std::pair<std::string, double>> bars{
        {"cosine", result.summary.mean_cosine},
        {"accuracy", result.summary.compositional_accuracy},
        {"parteval", result.summary.parteval}};
    write_text(out("metrics.svg"), report::bar_chart_svg(config.label + " metrics", bars));
    return 0;
  });

  stage("manifest", log, [&] {
    ojson m;
    m["tool"] = "chimera";
    m["version"] = CHIMERA_VERSION;
    ojson cfg = ojson::object();
    for (const auto& [k, v] : settings(config)) cfg[k] = v;
    m["config"] = std::move(cfg);
    ojson seeds;
    seeds["corpus"] = config.corpus_seed;
    seeds["world"] = config.world_seed;
    seeds["train"] = config.train.seed;
    seeds["train.init"] = mix_seed(config.train.seed, 0);
    seeds["train.noise"] = mix_seed(config.train.seed, 1);
    seeds["train.order"] = mix_seed(config.train.seed, 2);
    seeds["sample"] = config.sample_seed;
    seeds["eval"] = config.eval_seed;
    m["seeds"] = std::move(seeds);
    ojson inputs;
    inputs["taxonomy"] = {{"path", fs::absolute(config.taxonomy).string()},
                          {"sha256", sha256_file(config.taxonomy)}};
    m["inputs"] = std::move(inputs);
    ojson artifacts = ojson::object();
    for (const auto& name : artifact_names()) {
      const auto digest = sha256_file(out(name));
      result.digests[name] = digest;
      artifacts[name] = {{"path", out(name).string()}, {"sha256", digest}};
    }
    m["out_dir"] = result.out_dir.string();
    m["artifacts"] = std::move(artifacts);
    ojson res;
    res["initial_loss"] = result.initial_loss;
    res["final_loss"] = result.final_loss;
    res["mean_cosine"] = result.summary.mean_cosine;
    res["compositional_accuracy"] = result.summary.compositional_accuracy;
    res["parteval"] = result.summary.parteval;
    res["fid"] = result.summary.fid;
    res["kid_mean"] = result.summary.kid_mean;
    res["kid_std"] = result.summary.kid_std;
    m["results"] = std::move(res);
    result.manifest = out("manifest.json");
    write_text(result.manifest, m.dump(2) + "\n");
    return 0;
  });
  return result;
}

namespace {

nlohmann::json read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw UsageError("cannot read manifest " + manifest.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
}

}  // namespace

RunConfig config_from_manifest(const fs::path& manifest) {
  const auto m = read_manifest(manifest);
  if (!m.contains("config") || !m["config"].is_object()) {
    throw FormatError(manifest.string() + ": no config section");
  }
  RunConfig config;
  for (const auto& [key, value] : m["config"].items()) {
    if (!value.is_string()) throw FormatError(manifest.string() + ": config value for " + key + " is not a string");
    apply_setting(config, key, value.get<std::string>());
  }
  return config;
}

VerifyResult verify(const fs::path& manifest, const fs::path& rerun_dir, std::ostream* log) {
  const auto m = read_manifest(manifest);
  RunConfig config = config_from_manifest(manifest);
  config.out_dir = rerun_dir;

  VerifyResult v;
  if (m.contains("inputs") && m["inputs"].contains("taxonomy")) {
    const auto expected = m["inputs"]["taxonomy"].value("sha256", "");
    if (!fs::is_regular_file(config.taxonomy) || sha256_file(config.taxonomy) != expected) {
      v.ok = false;
      v.mismatches.push_back("taxonomy");
    }
  }
  v.rerun = run(config, log);
  const auto& recorded = m.at("artifacts");
  for (const auto& name : artifact_names()) {
    const bool present = recorded.contains(name) && recorded[name].contains("sha256");
    if (!present || recorded[name]["sha256"].get<std::string>() != v.rerun.digests.at(name)) {
      v.ok = false;
      v.mismatches.push_back(name);
    }
  }
  return v;
}

}  // namespace chimera::pipeline
