// Command-line entry point: gen-corpus, train, evaluate, average, ablate, report.
//
// Every subcommand accepts --config FILE plus any number of `--section.key
// value` overrides of the experiment config (e.g. --optim.epochs 5,
// --model.d_model 32, --system LD+LPB). Relative output paths resolve under
// $CSASR_OUT_DIR when it is set.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
// error, 3 data error, 4 training divergence.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "csasr/ablation.hpp"
#include "csasr/config.hpp"
#include "csasr/corpus.hpp"
#include "csasr/errors.hpp"
#include "csasr/trainer.hpp"

namespace {

using namespace csasr;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

using Overrides = std::vector<std::pair<std::string, std::string>>;

Overrides parse_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string key = extras[i];
    if (key.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + key + "'");
    key = key.substr(2);
    if (const auto eq = key.find('='); eq != std::string::npos) {
      out.emplace_back(key.substr(0, eq), key.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw ConfigError("override --" + key + " needs a value");
    out.emplace_back(key, extras[++i]);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Corpus open_corpus(const ExperimentConfig& cfg) {
  const auto dir = resolve_output(cfg.corpus_dir);
  if (!std::filesystem::exists(dir / "manifest.jsonl"))
    throw DataError("no corpus at " + dir.string() + " (run gen-corpus first)");
  return load_corpus(dir);
}

struct Common {
  std::string config_file;
  std::vector<std::string> extras;
  ExperimentConfig load() const { return load_experiment_config(config_file, parse_overrides(extras)); }
};

CLI::App* add_command(CLI::App& app, const char* name, const char* help, Common& common) {
  CLI::App* cmd = app.add_subcommand(name, help);
  cmd->add_option("-c,--config", common.config_file, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->allow_extras();
  return cmd;
}

int cmd_gen_corpus(const Common& common) {
  const ExperimentConfig cfg = common.load();
  Corpus corpus = generate_corpus(cfg.corpus);
  global_mvn(corpus);
  const auto dir = resolve_output(cfg.corpus_dir);
  save_corpus(dir, corpus);
  for (auto s : kAllSplits) spdlog::info("{}: {} utterances", split_name(s), corpus.split(s).size());
  spdlog::info("wrote corpus to {}", dir.string());
  return kOk;
}

int cmd_train(const Common& common) {
  const ExperimentConfig cfg = common.load();
  const Corpus corpus = open_corpus(cfg);
  const auto dir = resolve_output(cfg.run_dir);
  const RunRecord rec = train(cfg, corpus, dir);
  spdlog::info("averaged {} checkpoints into {}", rec.kept_checkpoints.size(), rec.averaged_checkpoint);
  return kOk;
}

int cmd_evaluate(const Common& common, const std::string& checkpoint, const std::string& split,
                 const std::string& report, const std::string& decodes) {
  const ExperimentConfig cfg = common.load();
  const Corpus corpus = open_corpus(cfg);
  const auto model = load_model(resolve_output(checkpoint));
  if (model->config().vocab_size != corpus.vocab.size())
    throw DataError("checkpoint vocabulary size " + std::to_string(model->config().vocab_size) +
                    " does not match the corpus (" + std::to_string(corpus.vocab.size()) + ")");
  const Split s = parse_split(split);
  const BeamSearchOptions opts{cfg.decode.beam, cfg.decode.alpha, cfg.decode.max_len, 0};
  const EvaluationResult result = evaluate(*model, corpus, corpus.split(s), opts);
  const nlohmann::json j = to_json(result, split, opts);
  std::cout << j.dump(2) << '\n';
  if (!report.empty()) write_text(resolve_output(report), j.dump(2) + "\n");
  if (!decodes.empty()) {
    std::string lines;
    for (const auto& d : result.decodes) lines += d.dump() + "\n";
    write_text(resolve_output(decodes), lines);
  }
  return kOk;
}

int cmd_average(const std::vector<std::string>& inputs, const std::string& output) {
  std::vector<std::filesystem::path> paths;
  for (const auto& p : inputs) paths.push_back(resolve_output(p));
  const CheckpointFile avg = average_checkpoints(paths);
  const auto out = resolve_output(output);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_checkpoint(out, avg);
  spdlog::info("averaged {} checkpoints into {}", paths.size(), out.string());
  return kOk;
}

int cmd_ablate(const Common& common) {
  const ExperimentConfig cfg = common.load();
  const auto corpus_dir = resolve_output(cfg.corpus_dir);
  Corpus corpus;
  if (std::filesystem::exists(corpus_dir / "manifest.jsonl")) {
    corpus = load_corpus(corpus_dir);
  } else {
    corpus = generate_corpus(cfg.corpus);
    global_mvn(corpus);
    save_corpus(corpus_dir, corpus);
  }
  const auto out = resolve_output(cfg.run_dir);
  const auto rows = run_ablation(ablation_matrix(cfg), cfg.seeds, corpus, out);
  const std::string table = format_ablation_table(rows);
  write_text(out / "ablation.json", ablation_to_json(rows).dump(2) + "\n");
  write_text(out / "ablation.txt", table);
  std::cout << table;
  return kOk;
}

int cmd_report(const std::string& input) {
  const auto path = resolve_output(input);
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + " is not valid JSON");
  if (j.contains("rows")) {
    std::cout << format_ablation_table(ablation_from_json(j));
  } else if (j.contains("mer")) {
    const auto& m = j.at("mer");
    std::printf("split %s: MER %.2f%% over %ld units (S %ld, D %ld, I %ld)\n", j.value("split", "?").c_str(),
                m.at("mer").get<double>(), m.at("ref_units").get<long>(), m.at("substitutions").get<long>(),
                m.at("deletions").get<long>(), m.at("insertions").get<long>());
    for (const auto& [lang, c] : m.at("by_language").items())
      std::printf("  %-6s ref %5ld  S %4ld  D %4ld  I %4ld\n", lang.c_str(), c.at("ref_units").get<long>(),
                  c.at("substitutions").get<long>(), c.at("deletions").get<long>(), c.at("insertions").get<long>());
    if (j.contains("ld_accuracy")) std::printf("  LD accuracy %.2f%%\n", j.at("ld_accuracy").get<double>());
  } else {
    throw DataError(path.string() + " is neither an ablation table nor an evaluation report");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switching hybrid CTC/attention ASR toolkit"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")->capture_default_str();

  Common gen, tr, ev, ab;
  CLI::App* gen_cmd = add_command(app, "gen-corpus", "Generate the synthetic corpus", gen);
  CLI::App* train_cmd = add_command(app, "train", "Train one system", tr);
  CLI::App* eval_cmd = add_command(app, "evaluate", "Beam-search decode a split and score it", ev);
  std::string checkpoint, split = "test_cs", report, decodes;
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--split", split, "train, valid, test_cs or test_mono")->capture_default_str();
  eval_cmd->add_option("--report", report, "write the score report JSON here");
  eval_cmd->add_option("--decodes", decodes, "write decode JSON lines here");
  CLI::App* avg_cmd = app.add_subcommand("average", "Average checkpoints parameter-wise");
  std::vector<std::string> avg_inputs;
  std::string avg_output;
  avg_cmd->add_option("inputs", avg_inputs, "checkpoints")->required();
  avg_cmd->add_option("-o,--output", avg_output, "averaged checkpoint")->required();
  CLI::App* ablate_cmd = add_command(app, "ablate", "Train and evaluate the ablation matrix over seeds", ab);
  CLI::App* report_cmd = app.add_subcommand("report", "Print an ablation table or evaluation report");
  std::string report_input;
  report_cmd->add_option("input", report_input, "ablation.json or an evaluation report")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen_cmd) {
      gen.extras = gen_cmd->remaining();
      return cmd_gen_corpus(gen);
    }
    if (*train_cmd) {
      tr.extras = train_cmd->remaining();
      return cmd_train(tr);
    }
    if (*eval_cmd) {
      ev.extras = eval_cmd->remaining();
      return cmd_evaluate(ev, checkpoint, split, report, decodes);
    }
    if (*avg_cmd) return cmd_average(avg_inputs, avg_output);
    if (*ablate_cmd) {
      ab.extras = ablate_cmd->remaining();
      return cmd_ablate(ab);
    }
    if (*report_cmd) return cmd_report(report_input);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kData;
  } catch (const DivergenceError& e) {
    spdlog::error("divergence: {}", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
