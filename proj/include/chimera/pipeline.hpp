#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "chimera/embedding_world.hpp"
#include "chimera/error.hpp"
#include "chimera/nn.hpp"
#include "chimera/prior.hpp"

namespace chimera::pipeline {

/// Every setting of an end-to-end run. Resolution order: these defaults,
/// then a key = value config file, then command-line flags.
struct RunConfig {
  std::filesystem::path taxonomy = CHIMERA_DEFAULT_TAXONOMY;
  std::filesystem::path out_dir = "chimera_run";

  std::size_t corpus_n = 10200;
  std::uint64_t corpus_seed = 0;
  double mix_ratio = 0.5;
  /// The last `holdout` corpus records are held out of training and used for evaluation.
  std::size_t holdout = 200;

  std::uint64_t world_seed = kDefaultWorldSeed;
  int dim = kDefaultEmbeddingDim;

  prior::TrainConfig train;

  /// Euler steps (flow) or DDIM steps (diffusion, 0 = every timestep).
  int sample_steps = 50;
  double cfg_scale = 1.0;
  std::uint64_t sample_seed = 0;

  std::string label = "chimera";
  int kid_subset_size = 100;
  int kid_subsets = 10;
  std::uint64_t eval_seed = 0;

  /// Optional remote PartEval grader; the synthetic oracle grader is used when empty.
  std::string grader_endpoint;
  std::string grader_token;
  std::filesystem::path grader_cache;
};

/// Known keys, in the order they are written to manifests.
const std::vector<std::string>& config_keys();

/// Sets one key. Throws UsageError for an unknown key or an unparsable value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// "key = value" lines; '#' starts a comment; blank lines ignored.
/// Throws UsageError naming the line for malformed lines or unknown keys.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// All settings as ordered (key, value) strings; round-trips through apply_setting.
std::vector<std::pair<std::string, std::string>> settings(const RunConfig& config);

/// Throws UsageError for inconsistent settings (e.g. holdout >= corpus_n).
void validate(const RunConfig& config);

/// A failure inside a named pipeline stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Checkpoint metadata written by training: objective and world, so that a
/// checkpoint alone is enough to sample.
std::string checkpoint_metadata(prior::Objective objective, const WorldConfig& world);
std::pair<prior::Objective, WorldConfig> parse_checkpoint_metadata(const std::string& metadata);

struct SampleOptions {
  int steps = 50;
  double cfg_scale = 1.0;
  std::uint64_t seed = 0;
};

/// One sample for `cond`. The random stream is mix_seed(options.seed, key),
/// so samples are independent of evaluation order.
Vector generate(const nn::DenseNet& net, prior::Objective objective, const ConditionSet& cond,
                const SampleOptions& options, std::uint64_t key);

/// One line of the sample dump:
///   {"prompt_id", "atoms": [{part, subject, domain}], "cosine_to_oracle", "decoded_atoms": [...]}
std::string sample_json_line(std::uint64_t prompt_id, const ConditionSet& cond, const Vector& generated,
                             const EmbeddingWorld& world);

struct EvalSummary {
  double mean_cosine = 0.0;
  double compositional_accuracy = 0.0;
  std::map<int, double> accuracy_by_k;
  std::map<int, std::size_t> count_by_k;
  double parteval = 0.0;
  std::map<int, double> parteval_by_k;
  double fid = 0.0;
  double kid_mean = 0.0;
  double kid_std = 0.0;
};

struct RunResult {
  std::filesystem::path out_dir;
  std::filesystem::path manifest;
  EvalSummary summary;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// artifact file name -> sha256
  std::map<std::string, std::string> digests;
};

/// Names of the files a run writes into out_dir (manifest.json excluded).
const std::vector<std::string>& artifact_names();

/// corpus -> dataset -> train -> sample -> eval, writing every artifact and
/// manifest.json into config.out_dir. Progress lines go to `log` if given.
/// Throws StageError.
RunResult run(const RunConfig& config, std::ostream* log = nullptr);

/// Evaluates an existing checkpoint on held-out pairs (the eval stage alone).
struct EvalOutput {
  EvalSummary summary;
  std::string samples_jsonl;
  std::string report_json;
};
EvalOutput evaluate(const nn::DenseNet& net, prior::Objective objective, const EmbeddingWorld& world,
                    std::span<const TrainingPair> heldout, const RunConfig& config);

/// Reads manifest.json back into a config (out_dir as recorded).
RunConfig config_from_manifest(const std::filesystem::path& manifest);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> mismatches;  // artifact names whose digest differs or that are missing
  RunResult rerun;
};

/// Reruns the manifest's configuration into `rerun_dir` and compares every
/// artifact digest with the recorded one.
VerifyResult verify(const std::filesystem::path& manifest, const std::filesystem::path& rerun_dir,
                    std::ostream* log = nullptr);

}  // namespace chimera::pipeline
