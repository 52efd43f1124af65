// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Usage: acceptance [work_dir [report_file]]
// The report file receives a copy of the PASS/FAIL lines.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "chimera/corpus.hpp"
#include "chimera/error.hpp"
#include "chimera/metrics.hpp"
#include "chimera/parteval.hpp"
#include "chimera/pipeline.hpp"
#include "metric_oracles.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace chimera;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;
std::ofstream report_copy;

void emit(const std::string& line) {
  std::cout << line << std::endl;
  if (report_copy) report_copy << line << std::endl;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs one check, enforcing its time budget (seconds; <= 0 for none).
double run(const std::string& name, double budget, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto start = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail << " [exception: " << e.what() << "]";
  }
  const double took = seconds_since(start);
  if (budget > 0 && took > budget) {
    out.pass = false;
    out.detail << " [over time budget " << budget << " s]";
  }
  if (!out.pass) ++failures;
  char elapsed[32];
  std::snprintf(elapsed, sizeof elapsed, " (%.1f s)", took);
  emit(std::string(out.pass ? "PASS " : "FAIL ") + name + ":" + out.detail.str() + elapsed);
  return took;
}

std::uint64_t fnv1a_reference(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string expected_text(const HybridPrompt& r) {
  std::string out = r.prefix + " with ";
  const auto n = r.atoms.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) out += n == 2 ? " and " : (i + 1 == n ? ", and " : ", ");
    out += r.atoms[i].part + " of a " + r.atoms[i].subject;
  }
  return out + ".";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

const std::vector<TrainingPair>& small_dataset() {
  static const auto data = [] {
    CorpusOptions options;
    options.n = 256;
    return make_dataset(generate_corpus(test::default_taxonomy(), options), test::default_world());
  }();
  return data;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

std::vector<ConditionSet> fresh_conditions(int k, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ConditionSet> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(make_condition(test::default_world(), sample_atoms(test::default_taxonomy(), rng, k, true)));
  }
  return out;
}

double mean_pairwise_cosine(const std::vector<Vector>& xs) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j, ++n) sum += cosine(xs[i], xs[j]);
  return sum / n;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::remove_all(work);
  fs::create_directories(work);
  if (argc > 2) report_copy.open(argv[2], std::ios::trunc);
  const auto& world = test::default_world();

  run("criterion 1 taxonomy fidelity", 1.0, [&](Outcome& o) {
    const auto tax = load_taxonomy(CHIMERA_DEFAULT_TAXONOMY);
    validate(tax);
    std::size_t atoms = 0;
    bool parts_ok = true, subjects_ok = true;
    for (const auto& d : tax.domains) {
      parts_ok = parts_ok && d.parts.size() == 8;
      for (const auto& p : d.parts) {
        subjects_ok = subjects_ok && p.subjects.size() >= 6 && p.subjects.size() <= 19;
        atoms += p.subjects.size();
      }
    }
    o.detail << " domains=" << tax.domains.size() << " atoms=" << atoms;
    o.require(tax.domains.size() == 6, "6 domains");
    o.require(parts_ok, "8 parts per domain");
    o.require(subjects_ok, "6-19 subjects per part");
    o.require(atoms == 464 && enumerate_atoms(tax).size() == 464, "464 atoms");
  });

  run("criterion 2 corpus fidelity", 30.0, [&](Outcome& o) {
    const auto a = work / "corpus_a.jsonl", b = work / "corpus_b.jsonl";
    for (const auto& out : {a, b}) {
      const std::string cmd = quote(CHIMERA_CLI) + " corpus gen --n 37000 --out " + quote(out);
      o.require(std::system(cmd.c_str()) == 0, "corpus gen exit status");
    }
    const std::string bytes = slurp(a);
    o.require(!bytes.empty() && bytes == slurp(b), "byte-identical regeneration");
    std::istringstream lines(bytes);
    std::string line;
    std::size_t n = 0, bad_k = 0, bad_parts = 0, bad_text = 0, bad_render = 0, bad_seed = 0;
    const RenderConfig render_expected{1024, 50, 5.0, 3.0};
    while (std::getline(lines, line)) {
      const auto r = from_json_line(line);
      ++n;
      if (r.atoms.size() < 2 || r.atoms.size() > 4) ++bad_k;
      std::set<std::string> parts;
      for (const auto& at : r.atoms) parts.insert(at.part);
      if (parts.size() != r.atoms.size()) ++bad_parts;
      if (r.text != expected_text(r)) ++bad_text;
      if (!(r.render == render_expected)) ++bad_render;
      if (r.seed != fnv1a_reference(r.text)) ++bad_seed;
    }
    o.detail << " records=" << n;
    o.require(n == 37000, "37000 records");
    o.require(bad_k == 0, "2-4 atoms");
    o.require(bad_parts == 0, "distinct parts");
    o.require(bad_text == 0, "template text");
    o.require(bad_render == 0, "render config");
    o.require(bad_seed == 0, "seed = FNV-1a(text)");
  });

  run("criterion 3 gradient correctness", 60.0, [&](Outcome& o) {
    const auto& data = small_dataset();
    const auto sched = prior::NoiseSchedule::linear();
    const nn::DenseNet net(prior::default_layer_dims(64), 123);
    const auto idx = iota_indices(8);
    Rng rng(2);
    for (const bool flow : {false, true}) {
      const auto batch = flow ? prior::flow_batch(data, idx, rng, 0.1) : prior::diffusion_batch(data, idx, sched, rng, 0.1);
      const nn::LossFn loss = [&](const nn::DenseNet& n) {
        auto r = prior::regression_loss(n, batch);
        return std::pair{r.loss, std::move(r.grads)};
      };
      Rng probes(flow ? 31 : 32);
      const double err = nn::grad_check(net, loss, 30, probes);
      o.detail << (flow ? " flow" : " diffusion") << "_max_rel_err=" << err;
      o.require(err < 1e-4, "relative error < 1e-4");
    }
  });

  run("criterion 6 FID correctness", 10.0, [&](Outcome& o) {
    Rng rng(4);
    auto spd = [&](int d) {
      Matrix a(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
      return Matrix(a * a.transpose() / d + 0.1 * Matrix::Identity(d, d));
    };
    auto gaussian = [&](int d, double scale) {
      Vector v(d);
      for (int j = 0; j < d; ++j) v[j] = scale * rng.normal();
      return v;
    };
    double worst_self = 0.0, worst_closed = 0.0, worst_oracle = 0.0;
    for (int d : {2, 4, 64}) {
      const Matrix cov = spd(d);
      const eval::GaussianStats a{gaussian(d, 1.0), cov, 1000}, b{gaussian(d, 1.0), cov, 1000};
      worst_self = std::max(worst_self, std::abs(eval::fid(a, a)));
      worst_closed = std::max(worst_closed, std::abs(eval::fid(a, b) - (a.mean - b.mean).squaredNorm()));
    }
    for (int trial = 0; trial < 5; ++trial) {
      const eval::GaussianStats a{gaussian(8, 1.0), spd(8), 1000}, b{gaussian(8, 0.5), spd(8), 1000};
      worst_oracle = std::max(worst_oracle, std::abs(eval::fid(a, b) - test::fid_oracle(a, b)));
    }
    o.detail << " self=" << worst_self << " closed_form=" << worst_closed << " vs_oracle=" << worst_oracle;
    o.require(worst_self < 1e-8, "fid(a,a) = 0");
    o.require(worst_closed < 1e-8, "equal-covariance closed form");
    o.require(worst_oracle < 1e-6, "Newton square-root oracle");
  });

  run("criterion 7 KID correctness", 10.0, [&](Outcome& o) {
    Rng rng(2024);
    auto draw = [&](int n) {
      std::vector<Vector> out;
      for (int i = 0; i < n; ++i) {
        Vector v(16);
        for (int j = 0; j < 16; ++j) v[j] = rng.normal();
        out.push_back(v);
      }
      return out;
    };
    const auto x = draw(1000), y = draw(1000);
    Rng subsets(1);
    const auto same = eval::kid(x, y, 100, 10, subsets);
    o.detail << " same_mean=" << same.mean << " std=" << same.std;
    o.require(std::abs(same.mean) <= 3.0 * same.std, "same-distribution mean within 3 std");

    const std::vector<Vector> a{Vector{{0.1, 0.2}}, Vector{{-0.3, 0.5}}, Vector{{0.7, -0.1}}};
    const std::vector<Vector> b{Vector{{1.0, 0.0}}, Vector{{0.2, 0.9}}, Vector{{-0.5, -0.4}}};
    double kaa = 0, kbb = 0, kab = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i != j) {
          kaa += test::poly_kernel(a[i], a[j]);
          kbb += test::poly_kernel(b[i], b[j]);
        }
        kab += test::poly_kernel(a[i], b[j]);
      }
    const double expected = kaa / 6 + kbb / 6 - 2 * kab / 9;
    const double err = std::abs(eval::mmd2_unbiased(a, b) - expected);
    o.detail << " three_sample_err=" << err;
    o.require(err < 1e-12, "hand-expanded estimator");
  });

  run("criterion 8 PartEval arithmetic", 10.0, [&](Outcome& o) {
    const SemanticAtom atom{"wing", "bat", Domain::creature};
    const eval::AttributeMap full{{"color", "black"}, {"texture", "leathery"}, {"spatial_relation", "on the back"}};
    std::vector<eval::EvalQuestion> qs = eval::parteval_questions(eval::parteval_extract(atom, &full), 0);
    for (auto q : eval::parteval_questions(eval::parteval_extract(atom, &full), 1)) qs.push_back(q);
    eval::ConstantGrader yes(1), no(0);
    const double perfect = eval::parteval_grade(yes, "fixture", qs).normalized();
    const double negative = eval::parteval_grade(no, "fixture", qs).normalized();
    const std::vector<int> seven{1, 1, 0, 1, 1, 0, 1, 1, 0, 1};
    const double fixture = eval::make_grade_record(seven).normalized();
    o.detail << " questions=" << qs.size() << " perfect=" << perfect << " negative=" << negative
             << " fixture=" << fixture;
    o.require(qs.size() == 10, "10 questions for two full parts");
    o.require(perfect == 1.0, "perfect -> 1.0");
    o.require(negative == 0.0, "all-negative -> 0.0");
    o.require(std::abs(fixture - 0.7) < 1e-12, "7 of 10 -> 0.7");

    Rng rng(99);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int scale = 1 + static_cast<int>(rng.uniform_index(20));
      const int n = 1 + static_cast<int>(rng.uniform_index(8));
      std::vector<std::vector<int>> raw(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(scale)));
      for (auto& r : raw)
        for (auto& v : r) v = static_cast<int>(rng.uniform_index(2));
      auto score = [&] {
        std::vector<eval::GradeRecord> recs;
        for (const auto& r : raw) recs.push_back(eval::make_grade_record(r));
        return eval::parteval_score(recs);
      };
      const double before = score();
      raw[rng.uniform_index(static_cast<std::uint64_t>(n))][rng.uniform_index(static_cast<std::uint64_t>(scale))] = 1;
      if (score() < before) ++violations;
    }
    o.detail << " monotonicity_violations=" << violations;
    o.require(violations == 0, "monotone under 0->1 flips");
  });

  run("criterion 10 oracle-net zero loss", 10.0, [&](Outcome& o) {
    const auto& data = small_dataset();
    const auto sched = prior::NoiseSchedule::linear();
    const auto idx = iota_indices(128);
    Rng rng(21);
    const auto db = prior::diffusion_batch(data, idx, sched, rng, 0.0);
    const double diff = prior::batch_mse(test::predict_batch(test::clean_oracle(world), db, data, idx), db.targets);
    const auto fb = prior::flow_batch(data, idx, rng, 0.0);
    const double flow = prior::batch_mse(test::predict_batch(test::velocity_oracle(world), fb, data, idx), fb.targets);
    o.detail << " diffusion=" << diff << " flow=" << flow;
    o.require(diff < 1e-10, "diffusion oracle loss");
    o.require(flow < 1e-10, "flow oracle loss");
  });

  // Default desk-scale runs.
  pipeline::RunConfig flow_config;
  flow_config.out_dir = work / "flow";
  pipeline::RunResult flow_run;
  const double flow_seconds = run("criterion 4 oracle recovery (flow)", 30 * 60.0, [&](Outcome& o) {
    flow_run = pipeline::run(flow_config);
    const auto& s = flow_run.summary;
    o.detail << " mean_cosine=" << s.mean_cosine << " compositional_accuracy=" << s.compositional_accuracy
             << " loss " << flow_run.initial_loss << " -> " << flow_run.final_loss;
    o.require(s.mean_cosine >= 0.95, "mean cosine >= 0.95");
    o.require(s.compositional_accuracy >= 0.90, "compositional accuracy >= 0.90");
  });

  run("criterion 4 oracle recovery (diffusion)", 30 * 60.0, [&](Outcome& o) {
    auto config = flow_config;
    config.out_dir = work / "diffusion";
    config.train.objective = prior::Objective::diffusion_prior;
    config.sample_steps = 0;
    const auto result = pipeline::run(config);
    o.detail << " mean_cosine=" << result.summary.mean_cosine
             << " compositional_accuracy=" << result.summary.compositional_accuracy;
    o.require(result.summary.mean_cosine >= 0.90, "mean cosine >= 0.90");
  });

  run("criterion 5 complexity consistency", 5 * 60.0, [&](Outcome& o) {
    const auto ckpt = nn::load_checkpoint(work / "flow" / "prior.ckpt");
    const pipeline::SampleOptions options{flow_config.sample_steps, 1.0, 77};
    std::map<int, double> acc;
    for (int k : {2, 4}) {
      std::vector<eval::GeneratedSample> samples;
      std::uint64_t key = 0;
      for (auto& cond : fresh_conditions(k, 200, 500 + static_cast<std::uint64_t>(k))) {
        Vector x = pipeline::generate(ckpt.net, prior::Objective::rectified_flow, cond, options, key++);
        samples.push_back({std::move(x), std::move(cond)});
      }
      acc[k] = eval::compositional_accuracy(samples, world);
    }
    o.detail << " k2=" << acc[2] << " k4=" << acc[4] << " gap=" << std::abs(acc[4] - acc[2]);
    o.require(std::abs(acc[4] - acc[2]) <= 0.10, "|acc(k=4) - acc(k=2)| <= 0.10");
  });

  run("criterion 9 determinism", 2.0 * flow_seconds, [&](Outcome& o) {
    const auto verified = pipeline::verify(flow_run.manifest, work / "flow_rerun");
    o.detail << " artifacts=" << verified.rerun.digests.size() << " mismatches=" << verified.mismatches.size();
    for (const auto& m : verified.mismatches) o.detail << " " << m;
    o.require(verified.ok && verified.mismatches.empty(), "identical digests");
  });

  run("property permutation sensitivity", 0, [&](Outcome& o) {
    const auto ckpt = nn::load_checkpoint(work / "flow" / "prior.ckpt");
    const pipeline::SampleOptions options{flow_config.sample_steps, 1.0, 3};
    Rng rng(31);
    int tracked = 0;
    const int sets = 200;
    for (int i = 0; i < sets; ++i) {
      const int k = 2 + static_cast<int>(rng.uniform_index(3));
      auto atoms = sample_atoms(test::default_taxonomy(), rng, k, true);
      std::swap(atoms[0], atoms[1]);
      const auto swapped = make_condition(world, atoms);
      const Vector x = pipeline::generate(ckpt.net, prior::Objective::rectified_flow, swapped, options,
                                          static_cast<std::uint64_t>(i));
      if (decode_parts(x, k, world) == atoms) ++tracked;
    }
    o.detail << " tracked=" << tracked << "/" << sets;
    o.require(tracked >= 0.9 * sets, ">= 90% of swaps tracked");
  });

  run("property condition-dropout collapse", 0, [&](Outcome& o) {
    const auto ckpt = nn::load_checkpoint(work / "flow" / "prior.ckpt");
    const auto conditional = prior::net_predictor(ckpt.net);
    const prior::Predictor unconditional = [&](const Vector& x, double t, const ConditionSet*) {
      return conditional(x, t, nullptr);
    };
    // One fixed noise draw shared by every condition set: dropped-condition
    // samples must not depend on the condition, conditional ones must.
    std::vector<Vector> cond_samples, uncond_samples, cond_indep, uncond_indep;
    std::uint64_t key = 0;
    for (const auto& cond : fresh_conditions(3, 100, 8)) {
      Rng a(5), b(5);
      cond_samples.push_back(prior::sample_flow(conditional, cond, flow_config.sample_steps, 1.0, a));
      uncond_samples.push_back(prior::sample_flow(unconditional, cond, flow_config.sample_steps, 1.0, b));
      // Independent noise per set, reported only: a well-fit model matches the
      // target marginal either way, so these two agree in expectation.
      Rng c(mix_seed(5, key)), d(mix_seed(5, key));
      ++key;
      cond_indep.push_back(prior::sample_flow(conditional, cond, flow_config.sample_steps, 1.0, c));
      uncond_indep.push_back(prior::sample_flow(unconditional, cond, flow_config.sample_steps, 1.0, d));
    }
    const double c = mean_pairwise_cosine(cond_samples), u = mean_pairwise_cosine(uncond_samples);
    o.detail << " unconditional=" << u << " conditional=" << c << " (independent noise: unconditional="
             << mean_pairwise_cosine(uncond_indep) << " conditional=" << mean_pairwise_cosine(cond_indep) << ")";
    o.require(u > c, "unconditional samples more alike than conditional ones");
  });

  emit(std::string(failures == 0 ? "ALL PASS" : "FAILURES") + ": " + std::to_string(failures) + " failing");
  return failures == 0 ? 0 : 1;
}
