#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "csasr/ablation.hpp"
#include "csasr/config.hpp"
#include "csasr/errors.hpp"
#include "csasr/trainer.hpp"

using namespace csasr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  const auto dir = fs::temp_directory_path() / ("csasr_harness_" + std::string(name));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_experiment() {
  ExperimentConfig c;
  c.corpus.num_utterances = 40;
  c.corpus.n_units_per_language = 4;
  c.corpus.feat_dim = 8;
  c.model.d_model = 16;
  c.model.heads = 2;
  c.model.enc_layers = 1;
  c.model.dec_layers = 1;
  c.model.ld_layers = 1;
  c.model.ffn_dim = 32;
  c.model.conv_kernel = 3;
  c.optim.epochs = 2;
  c.optim.batch_size = 4;
  c.optim.warmup_steps = 5;
  c.optim.keep_best = 2;
  c.optim.valid_mer = false;
  c.decode.beam = 2;
  return c;
}

}  // namespace

TEST_CASE("overrides reach nested fields and unknown keys are rejected") {
  nlohmann::json doc = ExperimentConfig{};
  apply_overrides(doc, {{"optim.lr", "0.002"}, {"system", "GRL"}, {"seeds", "4,5"}, {"model.use_ld", "true"}});
  const auto c = doc.get<ExperimentConfig>();
  CHECK(c.optim.lr == 0.002);
  CHECK(c.system == "GRL");
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.model.use_ld);
  CHECK_THROWS_AS(apply_overrides(doc, {{"optim.nope", "1"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(doc, {{"optim.lr", "fast"}}), ConfigError);
}

TEST_CASE("config files merge under overrides") {
  const auto dir = temp_dir("cfg");
  { std::ofstream(dir / "c.json") << R"({"beta": 0.5, "optim": {"epochs": 3}})"; }
  const auto c = load_experiment_config(dir / "c.json", {{"optim.epochs", "4"}});
  CHECK(c.beta == 0.5);
  CHECK(c.optim.epochs == 4);
  CHECK(c.optim.batch_size == 16);
  { std::ofstream(dir / "bad.json") << R"({"betta": 0.5})"; }
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json", {}), ConfigError);
  { std::ofstream(dir / "broken.json") << "{"; }
  CHECK_THROWS_AS(load_experiment_config(dir / "broken.json", {}), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json", {}), ConfigError);
}

TEST_CASE("system presets") {
  ModelConfig m;
  apply_system("S0", 0.8, m);
  CHECK_FALSE(m.use_ld);
  apply_system("LD", 0.8, m);
  CHECK(m.use_ld);
  CHECK(m.ld_full_context);
  CHECK(m.beta == 0.8);
  apply_system("LD+LPB", 0.8, m);
  CHECK(m.use_lpb);
  CHECK_FALSE(m.ld_full_context);
  apply_system("GRL", 0.2, m);
  CHECK(m.use_grl);
  CHECK_FALSE(m.use_lpb);
  CHECK(m.beta == 0.2);
  CHECK_THROWS_AS(apply_system("S9", 0.8, m), ConfigError);
  for (const auto& id : system_ids()) {
    ExperimentConfig c;
    c.system = id;
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("the default decode weight is 0.4") { CHECK(DecodeConfig{}.alpha == 0.4); }

TEST_CASE("output root follows the environment") {
  ::setenv("CSASR_OUT_DIR", "/tmp/csasr_root", 1);
  CHECK(output_root() == fs::path("/tmp/csasr_root"));
  CHECK(resolve_output("runs") == fs::path("/tmp/csasr_root/runs"));
  CHECK(resolve_output("/abs") == fs::path("/abs"));
  ::unsetenv("CSASR_OUT_DIR");
}

TEST_CASE("warmup schedule") {
  CHECK(warmup_lr(1e-3, 100, 1) == doctest::Approx(1e-5));
  CHECK(warmup_lr(1e-3, 100, 100) == doctest::Approx(1e-3));
  CHECK(warmup_lr(1e-3, 100, 400) == doctest::Approx(5e-4));
  double prev = 0;
  for (long s = 1; s <= 100; ++s) {
    CHECK(warmup_lr(1e-3, 100, s) >= prev);
    prev = warmup_lr(1e-3, 100, s);
  }
}

TEST_CASE("training is deterministic and keeps the best checkpoints") {
  auto cfg = small_experiment();
  cfg.system = "LD+LPB";
  Corpus corpus = generate_corpus(cfg.corpus);
  global_mvn(corpus);
  const auto a = train(cfg, corpus, temp_dir("run_a"));
  const auto b = train(cfg, corpus, temp_dir("run_b"));
  REQUIRE(a.epochs.size() == 2);
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train.total == b.epochs[e].train.total);
    CHECK(a.epochs[e].valid.total == b.epochs[e].valid.total);
    CHECK(std::isfinite(a.epochs[e].train.l_ld));
  }
  CHECK(a.epochs[1].best_valid_loss <= a.epochs[0].best_valid_loss);
  CHECK(a.kept_checkpoints.size() == 2);
  CHECK(fs::exists(a.averaged_checkpoint));

  const auto model = load_model(a.averaged_checkpoint);
  BeamSearchOptions o;
  o.beam = 2;
  const auto& test = corpus.split(Split::kTestCs);
  const auto r = evaluate(*model, corpus, test, o);
  CHECK(r.mer.utterances == test.size());
  CHECK(r.ld_accuracy >= 0.0);
  CHECK(r.decodes.size() == test.size());
  const auto j = to_json(r, "test_cs", o);
  CHECK(j.at("mer").contains("by_language"));
}

TEST_CASE("a non-finite loss aborts with a dump") {
  auto cfg = small_experiment();
  Corpus corpus = generate_corpus(cfg.corpus);
  cfg.optim.lr = 1e250;
  cfg.optim.warmup_steps = 1;
  cfg.optim.grad_clip = 0.0;
  const auto dir = temp_dir("diverge");
  CHECK_THROWS_AS(train(cfg, corpus, dir), DivergenceError);
  CHECK(fs::exists(dir / "divergence_dump.json"));
}

TEST_CASE("ablation matrix and a failed row") {
  auto cfg = small_experiment();
  cfg.ablation_systems = {"S0", "GRL"};
  cfg.beta_sweep = {0.2, 0.5};
  const auto matrix = ablation_matrix(cfg);
  REQUIRE(matrix.size() == 4);
  CHECK(matrix[2].label == "GRL beta=0.2");
  CHECK(matrix[2].config.beta == 0.2);

  cfg.optim.epochs = 1;
  Corpus corpus = generate_corpus(cfg.corpus);
  global_mvn(corpus);
  std::vector<AblationEntry> two{matrix[0], matrix[1]};
  two[0].config.optim.epochs = 1;
  two[1].config.optim.epochs = 1;
  two[1].config.model.heads = 3;  // fails validation inside the run
  const auto rows = run_ablation(two, {1}, corpus, temp_dir("ablate"));
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].failed);
  CHECK(rows[1].failed);
  const auto back = ablation_from_json(ablation_to_json(rows));
  CHECK(back[0].median_test_cs == rows[0].median_test_cs);
  CHECK(back[1].failed);
  const auto table = format_ablation_table(rows);
  CHECK(table.find("FAILED") != std::string::npos);
  CHECK(table.find("16.7") != std::string::npos);
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS(median({}));
}

TEST_CASE("trend checks compare against the baseline") {
  std::vector<AblationRow> rows(3);
  rows[0].label = rows[0].system = "S0";
  rows[0].median_test_cs = 10;
  rows[0].median_test_mono = 8;
  rows[1].label = rows[1].system = "LD";
  rows[1].beta = 0.8;
  rows[1].median_test_cs = 9;
  rows[2].label = rows[2].system = "GRL";
  rows[2].median_test_mono = 7;
  const auto checks = trend_checks(rows);
  for (const auto& t : checks) {
    CAPTURE(t.name);
    if (t.name == "ld_cs") CHECK((t.available && t.holds));
    if (t.name == "grl_mono") CHECK((t.available && !t.holds));
    if (t.name == "ld_lpb_both") CHECK_FALSE(t.available);
  }
}
