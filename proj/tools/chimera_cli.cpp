// chimera: taxonomy -> corpus -> prior -> evaluation, one binary.
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "chimera/corpus.hpp"
#include "chimera/embedding_world.hpp"
#include "chimera/error.hpp"
#include "chimera/nn.hpp"
#include "chimera/pipeline.hpp"
#include "chimera/prior.hpp"
#include "chimera/report.hpp"
#include "chimera/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace chimera;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

void require_taxonomy(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw UsageError("taxonomy file not found: '" + path.string() + "' (set --taxonomy)");
  }
}

void require_file(const fs::path& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw UsageError("file not found: '" + path.string() + "' (" + flag + ")");
}

// Writes to `path`, or stdout for "-".
template <class F>
void with_output(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write(out);
}

SemanticAtom parse_atom_spec(const EmbeddingWorld& world, const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw UsageError("--atoms entries are part:subject, got '" + spec + "'");
  const std::string part = normalize_token(spec.substr(0, colon));
  const std::string subject = normalize_token(spec.substr(colon + 1));
  for (const auto& a : world.atoms()) {
    if (a.part == part && a.subject == subject) return a;
  }
  throw UnknownAtom("no atom <" + part + ", " + subject + "> in the taxonomy");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct TaxonomyValidateArgs {
  std::string file;
};

struct CorpusGenArgs {
  std::string taxonomy = CHIMERA_DEFAULT_TAXONOMY;
  std::size_t n = 37000;
  std::uint64_t seed = 0;
  double mix_ratio = 0.5;
  std::string out = "-";
};

struct PriorTrainArgs {
  std::string taxonomy = CHIMERA_DEFAULT_TAXONOMY;
  std::string corpus;
  std::string objective = "flow";
  std::uint64_t world_seed = kDefaultWorldSeed;
  int dim = kDefaultEmbeddingDim;
  int steps = 20000;
  double lr = 1e-3;
  int batch_size = 64;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  std::size_t holdout = 0;
  std::string out = "prior.ckpt";
  std::string loss_csv;
};

struct PriorSampleArgs {
  std::string taxonomy = CHIMERA_DEFAULT_TAXONOMY;
  std::string ckpt;
  std::string corpus;
  std::vector<std::uint64_t> prompt_ids;
  std::vector<std::string> atoms;
  int steps = 50;
  double cfg = 1.0;
  std::uint64_t seed = 0;
  std::string out = "-";
};

struct EvalArgs {
  std::string taxonomy = CHIMERA_DEFAULT_TAXONOMY;
  std::string ckpt;
  std::string corpus;
  std::size_t holdout = 200;
  int steps = 50;
  double cfg = 1.0;
  std::uint64_t seed = 0;
  std::string label = "chimera";
  std::string out = "report.json";
  std::string samples_out;
  std::string grader_endpoint;
  std::string grader_token;
  std::string grader_cache;
};

struct PipelineArgs {
  std::string config;
  std::string out;
  std::string taxonomy;
  std::string objective;
  std::optional<int> steps;
  std::optional<std::uint64_t> world_seed;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string verify;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string csv = "report.csv";
  std::string svg = "report.svg";
  std::string title;
};

int cmd_taxonomy_validate(const TaxonomyValidateArgs& a) {
  require_taxonomy(a.file);
  const Taxonomy t = load_taxonomy(a.file);
  std::size_t parts = 0;
  for (const auto& d : t.domains) parts += d.parts.size();
  std::cout << "ok: " << t.domains.size() << " domains, " << parts << " parts, " << t.atom_count() << " atoms\n";
  return kExitOk;
}

int cmd_corpus_gen(const CorpusGenArgs& a) {
  require_taxonomy(a.taxonomy);
  const Taxonomy t = load_taxonomy(a.taxonomy);
  CorpusOptions options;
  options.n = a.n;
  options.master_seed = a.seed;
  options.mix_ratio = a.mix_ratio;
  if (a.mix_ratio < 0.0 || a.mix_ratio > 1.0) throw UsageError("--mix-ratio must lie in [0, 1]");
  const auto records = generate_corpus(t, options);
  with_output(a.out, [&](std::ostream& out) { write_corpus(out, records); });
  if (a.out != "-") std::cerr << "wrote " << records.size() << " records to " << a.out << '\n';
  return kExitOk;
}

int cmd_prior_train(const PriorTrainArgs& a) {
  require_taxonomy(a.taxonomy);
  require_file(a.corpus, "--corpus");
  prior::TrainConfig config;
  try {
    config.objective = prior::objective_from_string(a.objective);
  } catch (const Error& e) {
    throw UsageError(std::string("--objective: ") + e.what());
  }
  config.steps = a.steps;
  config.lr = a.lr;
  config.batch_size = a.batch_size;
  config.cond_dropout = a.cond_dropout;
  config.seed = a.seed;
  try {
    prior::validate(config);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  const Taxonomy t = load_taxonomy(a.taxonomy);
  const WorldConfig world_config{a.world_seed, a.dim};
  const EmbeddingWorld world(t, world_config);
  const auto corpus = read_corpus(a.corpus);
  if (a.holdout >= corpus.size()) throw UsageError("--holdout must be smaller than the corpus");
  const auto dataset = make_dataset(corpus, world);
  const std::span<const TrainingPair> train_set(dataset.data(), dataset.size() - a.holdout);

  auto result = prior::train(config, train_set, a.dim, [](int step, double loss) {
    if (step % 1000 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
  });
  nn::save_checkpoint(a.out, {result.net, result.adam, pipeline::checkpoint_metadata(config.objective, world_config)});
  const std::string loss_csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  prior::write_loss_csv(loss_csv, result.curve);
  std::cerr << "initial loss " << result.initial_loss << ", final window loss " << result.final_window_loss
            << "\nwrote " << a.out << " and " << loss_csv << '\n';
  return kExitOk;
}

struct LoadedPrior {
  nn::DenseNet net;
  prior::Objective objective;
  Taxonomy taxonomy;
  std::unique_ptr<EmbeddingWorld> world;
};

LoadedPrior load_prior(const std::string& ckpt, const std::string& taxonomy) {
  require_taxonomy(taxonomy);
  require_file(ckpt, "--ckpt");
  auto c = nn::load_checkpoint(ckpt);
  const auto [objective, world_config] = pipeline::parse_checkpoint_metadata(c.metadata);
  LoadedPrior p{std::move(c.net), objective, load_taxonomy(taxonomy), nullptr};
  p.world = std::make_unique<EmbeddingWorld>(p.taxonomy, world_config);
  if (p.net.output_dim() != world_config.dim || p.net.input_dim() != prior::prior_input_dim(world_config.dim)) {
    throw DimensionMismatch("checkpoint network does not match its recorded world dimension");
  }
  return p;
}

int cmd_prior_sample(const PriorSampleArgs& a) {
  if (a.prompt_ids.empty() == a.atoms.empty()) throw UsageError("give exactly one of --prompt-id or --atoms");
  const auto p = load_prior(a.ckpt, a.taxonomy);
  const pipeline::SampleOptions options{a.steps, a.cfg, a.seed};

  std::vector<std::pair<std::uint64_t, ConditionSet>> jobs;
  if (!a.prompt_ids.empty()) {
    require_file(a.corpus, "--corpus");
    const auto corpus = read_corpus(a.corpus);
    for (auto id : a.prompt_ids) {
      if (id >= corpus.size()) throw UsageError("--prompt-id " + std::to_string(id) + " is outside the corpus");
      jobs.emplace_back(id, make_condition(*p.world, corpus[id].atoms));
    }
  } else {
    for (const auto& spec : a.atoms) {
      std::vector<SemanticAtom> atoms;
      for (const auto& item : split(spec, ',')) atoms.push_back(parse_atom_spec(*p.world, item));
      jobs.emplace_back(derive_seed(spec), make_condition(*p.world, atoms));
    }
  }
  with_output(a.out, [&](std::ostream& out) {
    for (const auto& [id, cond] : jobs) {
      const Vector g = pipeline::generate(p.net, p.objective, cond, options, id);
      out << pipeline::sample_json_line(id, cond, g, *p.world) << '\n';
    }
  });
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  const auto p = load_prior(a.ckpt, a.taxonomy);
  require_file(a.corpus, "--corpus");
  const auto corpus = read_corpus(a.corpus);
  if (a.holdout < 2 || a.holdout > corpus.size()) throw UsageError("--holdout must lie in [2, corpus size]");
  const std::span<const HybridPrompt> held(corpus.data() + (corpus.size() - a.holdout), a.holdout);
  const auto pairs = make_dataset(held, *p.world);

  pipeline::RunConfig config;
  config.sample_steps = a.steps;
  config.cfg_scale = a.cfg;
  config.sample_seed = a.seed;
  config.label = a.label;
  config.grader_endpoint = a.grader_endpoint;
  config.grader_token = a.grader_token;
  config.grader_cache = a.grader_cache;
  const auto e = pipeline::evaluate(p.net, p.objective, *p.world, pairs, config);
  with_output(a.out, [&](std::ostream& out) { out << e.report_json; });
  if (!a.samples_out.empty()) with_output(a.samples_out, [&](std::ostream& out) { out << e.samples_jsonl; });
  std::cerr << "mean cosine " << e.summary.mean_cosine << ", compositional accuracy "
            << e.summary.compositional_accuracy << ", parteval " << e.summary.parteval << ", fid " << e.summary.fid
            << ", kid " << e.summary.kid_mean << " +- " << e.summary.kid_std << '\n';
  return kExitOk;
}

void print_summary(const pipeline::RunResult& r) {
  std::cout << "out_dir " << r.out_dir.string() << "\nmanifest " << r.manifest.string() << "\nloss "
            << r.initial_loss << " -> " << r.final_loss << "\nmean_cosine " << r.summary.mean_cosine
            << "\ncompositional_accuracy " << r.summary.compositional_accuracy << '\n';
  for (const auto& [k, acc] : r.summary.accuracy_by_k) std::cout << "  k=" << k << " accuracy " << acc << '\n';
  std::cout << "parteval " << r.summary.parteval << "\nfid " << r.summary.fid << "\nkid " << r.summary.kid_mean
            << " +- " << r.summary.kid_std << '\n';
}

int cmd_pipeline(const PipelineArgs& a) {
  if (!a.verify.empty()) {
    require_file(a.verify, "--verify");
    const fs::path rerun = a.out.empty() ? fs::path(a.verify).parent_path() / "verify" : fs::path(a.out);
    const auto v = pipeline::verify(a.verify, rerun, &std::cerr);
    print_summary(v.rerun);
    if (!v.ok) {
      std::cout << "verify FAILED:";
      for (const auto& m : v.mismatches) std::cout << ' ' << m;
      std::cout << '\n';
      return kExitFailure;
    }
    std::cout << "verify ok: all " << pipeline::artifact_names().size() << " artifact digests match\n";
    return kExitOk;
  }

  pipeline::RunConfig config;
  if (!a.config.empty()) pipeline::apply_config_file(config, a.config);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    pipeline::apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.out.empty()) config.out_dir = a.out;
  if (!a.taxonomy.empty()) config.taxonomy = a.taxonomy;
  if (!a.objective.empty()) pipeline::apply_setting(config, "train.objective", a.objective);
  if (a.steps) config.train.steps = *a.steps;
  if (a.world_seed) config.world_seed = *a.world_seed;
  if (a.seed) config.train.seed = *a.seed;
  pipeline::validate(config);
  print_summary(pipeline::run(config, &std::cerr));
  return kExitOk;
}

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> paths;
  for (const auto& in : a.inputs) {
    require_file(in, "report input");
    paths.emplace_back(in);
  }
  const auto table = report::collect_files(paths);
  with_output(a.csv, [&](std::ostream& out) { out << report::to_csv(table); });
  with_output(a.svg, [&](std::ostream& out) { out << report::to_svg(table, a.title); });
  std::cerr << "wrote " << a.csv << " and " << a.svg << " (" << table.labels.size() << " label(s), "
            << table.complexities.size() << " complexity level(s))\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chimera: part-compositional prior pipeline on a synthetic embedding world"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CHIMERA_VERSION));
  std::function<int()> action;

  // taxonomy
  auto* taxonomy = app.add_subcommand("taxonomy", "Inspect and validate taxonomy files");
  taxonomy->require_subcommand(1);
  TaxonomyValidateArgs tv;
  auto* validate = taxonomy->add_subcommand("validate", "Parse and validate a taxonomy file");
  validate->add_option("file", tv.file, "Taxonomy text file")->required();
  validate->callback([&] { action = [&] { return cmd_taxonomy_validate(tv); }; });

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Hybrid-prompt corpus generation");
  corpus->require_subcommand(1);
  CorpusGenArgs cg;
  auto* gen = corpus->add_subcommand("gen", "Generate a JSONL prompt corpus");
  gen->add_option("--taxonomy", cg.taxonomy, "Taxonomy file")->capture_default_str();
  gen->add_option("--n", cg.n, "Number of records")->capture_default_str();
  gen->add_option("--seed", cg.seed, "Master seed")->capture_default_str();
  gen->add_option("--mix-ratio", cg.mix_ratio, "Probability that a record mixes domains")->capture_default_str();
  gen->add_option("--out", cg.out, "Output JSONL path ('-' for stdout)")->capture_default_str();
  gen->callback([&] { action = [&] { return cmd_corpus_gen(cg); }; });

  // prior
  auto* prior_cmd = app.add_subcommand("prior", "Train and sample the part-conditioned prior");
  prior_cmd->require_subcommand(1);
  PriorTrainArgs pt;
  auto* train = prior_cmd->add_subcommand("train", "Train a prior on a corpus");
  train->add_option("--objective", pt.objective, "flow or diffusion")
      ->check(CLI::IsMember({"flow", "diffusion", "rectified_flow", "diffusion_prior"}))
      ->capture_default_str();
  train->add_option("--corpus", pt.corpus, "Corpus JSONL")->required();
  train->add_option("--taxonomy", pt.taxonomy, "Taxonomy file")->capture_default_str();
  train->add_option("--world-seed", pt.world_seed, "Embedding world seed")->capture_default_str();
  train->add_option("--dim", pt.dim, "Embedding dimension")->capture_default_str();
  train->add_option("--steps", pt.steps, "Optimisation steps")->capture_default_str();
  train->add_option("--lr", pt.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch-size", pt.batch_size, "Batch size")->capture_default_str();
  train->add_option("--cond-dropout", pt.cond_dropout, "Condition dropout probability")->capture_default_str();
  train->add_option("--seed", pt.seed, "Training seed")->capture_default_str();
  train->add_option("--holdout", pt.holdout, "Exclude the last N corpus records")->capture_default_str();
  train->add_option("--out", pt.out, "Checkpoint path")->capture_default_str();
  train->add_option("--loss-csv", pt.loss_csv, "Loss curve CSV (default <out>.loss.csv)");
  train->callback([&] { action = [&] { return cmd_prior_train(pt); }; });

  PriorSampleArgs ps;
  auto* sample = prior_cmd->add_subcommand("sample", "Sample embeddings from a trained prior");
  sample->add_option("--ckpt", ps.ckpt, "Checkpoint path")->required();
  sample->add_option("--taxonomy", ps.taxonomy, "Taxonomy file")->capture_default_str();
  sample->add_option("--corpus", ps.corpus, "Corpus JSONL (for --prompt-id)");
  auto* pid = sample->add_option("--prompt-id", ps.prompt_ids, "Corpus record id(s) to condition on");
  auto* atoms = sample->add_option("--atoms", ps.atoms, "Condition set as part:subject,part:subject[,...]");
  pid->excludes(atoms);
  sample->add_option("--steps", ps.steps, "Sampling steps (diffusion: 0 = all)")->capture_default_str();
  sample->add_option("--cfg", ps.cfg, "Classifier-free guidance scale")->capture_default_str();
  sample->add_option("--seed", ps.seed, "Sampling seed")->capture_default_str();
  sample->add_option("--out", ps.out, "Output JSONL ('-' for stdout)")->capture_default_str();
  sample->callback([&] { action = [&] { return cmd_prior_sample(ps); }; });

  // eval
  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out corpus records");
  eval->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  eval->add_option("--corpus", ev.corpus, "Corpus JSONL")->required();
  eval->add_option("--taxonomy", ev.taxonomy, "Taxonomy file")->capture_default_str();
  eval->add_option("--holdout", ev.holdout, "Evaluate the last N corpus records")->capture_default_str();
  eval->add_option("--steps", ev.steps, "Sampling steps")->capture_default_str();
  eval->add_option("--cfg", ev.cfg, "Classifier-free guidance scale")->capture_default_str();
  eval->add_option("--seed", ev.seed, "Sampling seed")->capture_default_str();
  eval->add_option("--label", ev.label, "Model label in the report")->capture_default_str();
  eval->add_option("--out", ev.out, "Report JSON path")->capture_default_str();
  eval->add_option("--samples-out", ev.samples_out, "Sample dump JSONL path");
  eval->add_option("--grader-endpoint", ev.grader_endpoint, "Remote PartEval grader URL (default: oracle grader)");
  eval->add_option("--grader-token", ev.grader_token, "Bearer token for the remote grader");
  eval->add_option("--grader-cache", ev.grader_cache, "Directory for cached grader responses");
  eval->callback([&] { action = [&] { return cmd_eval(ev); }; });

  // pipeline
  PipelineArgs pa;
  auto* pipe = app.add_subcommand("pipeline", "Run corpus -> dataset -> train -> sample -> eval end to end");
  pipe->add_option("--config", pa.config, "key = value config file");
  pipe->add_option("--out", pa.out, "Output directory");
  pipe->add_option("--taxonomy", pa.taxonomy, "Taxonomy file");
  pipe->add_option("--objective", pa.objective, "flow or diffusion");
  pipe->add_option("--steps", pa.steps, "Training steps");
  pipe->add_option("--world-seed", pa.world_seed, "Embedding world seed");
  pipe->add_option("--seed", pa.seed, "Training seed");
  pipe->add_option("--set", pa.sets, "Override any config key (key=value, repeatable)");
  pipe->add_option("--verify", pa.verify, "Rerun a manifest.json and compare artifact digests");
  pipe->footer("Config keys: " + [] {
    std::string keys;
    for (const auto& k : pipeline::config_keys()) keys += (keys.empty() ? "" : ", ") + k;
    return keys;
  }());
  pipe->callback([&] { action = [&] { return cmd_pipeline(pa); }; });

  // report
  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Combine report JSONs into a CSV table and an SVG chart");
  rep->add_option("inputs", ra.inputs, "Report JSON files")->required();
  rep->add_option("--csv", ra.csv, "CSV output path")->capture_default_str();
  rep->add_option("--svg", ra.svg, "SVG output path")->capture_default_str();
  rep->add_option("--title", ra.title, "Chart title");
  rep->callback([&] { action = [&] { return cmd_report(ra); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    return action ? action() : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const pipeline::StageError& e) {
    std::cerr << "pipeline failed: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
