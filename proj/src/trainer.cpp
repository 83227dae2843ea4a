#include "csasr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "csasr/errors.hpp"

namespace csasr {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

LossBreakdown breakdown_of(const LossTensors& l, const ModelConfig& mc) {
  LossBreakdown b;
  b.l_ctc = l.ctc.item();
  b.l_att = l.att.item();
  b.l_ld = l.ld.defined() ? l.ld.item() : 0.0;
  b.total = l.total.item();
  b.alpha = mc.alpha;
  b.beta = mc.use_ld ? mc.beta : 0.0;
  return b;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.ckpt", epoch);
  return buf;
}

double greedy_valid_mer(const Model& model, const Corpus& corpus, std::span<const Utterance> utts, double alpha) {
  BeamSearchOptions opts;
  opts.beam = 1;
  opts.alpha = alpha;
  return evaluate(model, corpus, utts, opts).mer.mer;
}

}  // namespace

nlohmann::json to_json(const LossBreakdown& l) {
  return {{"ctc", l.l_ctc}, {"att", l.l_att}, {"ld", l.l_ld}, {"total", l.total}, {"alpha", l.alpha}, {"beta", l.beta}};
}

nlohmann::json to_json(const RunRecord& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train", to_json(e.train)},
                      {"valid", to_json(e.valid)},
                      {"valid_mer", e.valid_mer},
                      {"best_valid_loss", e.best_valid_loss},
                      {"learning_rate", e.learning_rate},
                      {"checkpoint", e.checkpoint},
                      {"seconds", e.seconds}});
  return {{"system", r.system},
          {"seed", r.seed},
          {"epochs", epochs},
          {"kept_checkpoints", r.kept_checkpoints},
          {"averaged_checkpoint", r.averaged_checkpoint},
          {"steps", r.steps},
          {"wall_seconds", r.wall_seconds}};
}

double warmup_lr(double peak, int warmup, long step) {
  const double s = static_cast<double>(std::max(1L, step));
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

// ---- optimizer --------------------------------------------------------------

AdamOptimizer::AdamOptimizer(ParameterStore& params, const OptimConfig& config) : params_(params), config_(config) {
  for (const auto& [name, p] : params_.items()) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamOptimizer::step(double lr) {
  auto& items = params_.items();
  double sq = 0.0;
  for (const auto& [name, p] : items)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = config_.grad_clip > 0.0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;

  ++t_;
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < items.size(); ++k) {
    Tensor p = items[k].second;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
    }
  }
  params_.zero_grad();
  return norm;
}

// ---- training ---------------------------------------------------------------

ModelConfig model_config_for(const ExperimentConfig& cfg, const Corpus& corpus) {
  ModelConfig mc = cfg.resolved_model();
  mc.vocab_size = corpus.vocab.size();
  mc.feat_dim = static_cast<int>(corpus.config.feat_dim);
  mc.blank_id = corpus.vocab.blank_id();
  mc.sos_eos_id = corpus.vocab.sos_eos_id();
  if (static_cast<std::size_t>(mc.subsample_factor) > corpus.config.subsample_factor)
    spdlog::warn("model subsamples by {} but the corpus was padded for {}; CTC may be infeasible",
                 mc.subsample_factor, corpus.config.subsample_factor);
  mc.validate();
  return mc;
}

LossBreakdown evaluate_losses(const Model& model, std::span<const Utterance> utts) {
  if (utts.empty()) throw DataError("evaluate_losses: no utterances");
  std::vector<LossBreakdown> per(utts.size());
  const auto n = static_cast<long>(utts.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    NoGradGuard no_grad;
    per[static_cast<std::size_t>(i)] =
        breakdown_of(model.compute_losses(utts[static_cast<std::size_t>(i)], ForwardContext{}), model.config());
  }
  LossBreakdown total;
  for (const auto& b : per) total += b;
  return total.scaled(1.0 / static_cast<double>(utts.size()));
}

RunRecord train(const ExperimentConfig& cfg, const Corpus& corpus, const std::filesystem::path& run_dir) {
  const auto start = Clock::now();
  std::filesystem::create_directories(run_dir);
  const ModelConfig mc = model_config_for(cfg, corpus);
  const OptimConfig& oc = cfg.optim;
  {
    nlohmann::json resolved = cfg;
    resolved["model"] = mc;
    write_json(run_dir / "config.json", resolved);
  }

  std::vector<const Utterance*> train_set;
  for (const auto& u : corpus.split(Split::kTrain)) train_set.push_back(&u);
  if (oc.max_train_utterances > 0 && train_set.size() > oc.max_train_utterances)
    train_set.resize(oc.max_train_utterances);
  if (train_set.empty()) throw DataError("training split is empty");
  const auto& valid = corpus.split(Split::kValid);
  // Without a validation split, checkpoints are ranked by training loss.
  const bool have_valid = !valid.empty();
  if (!have_valid) spdlog::warn("validation split is empty; ranking checkpoints by training loss");

  Model model(mc, oc.seed);
  AdamOptimizer adam(model.params(), oc);
  Rng shuffle_rng(oc.seed * 0x9E3779B97F4A7C15ULL + 1);
  Rng dropout_rng(oc.seed * 0xBF58476D1CE4E5B9ULL + 2);
  const ForwardContext train_ctx{true, &dropout_rng};

  RunRecord record;
  record.system = cfg.system;
  record.seed = oc.seed;
  std::vector<std::pair<double, std::filesystem::path>> kept;  // (valid loss, path), best first
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= oc.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(train_set.begin(), train_set.end(), shuffle_rng);
    LossBreakdown epoch_sum;
    double lr = 0.0;
    for (std::size_t b = 0; b < train_set.size(); b += static_cast<std::size_t>(oc.batch_size)) {
      const std::size_t e = std::min(train_set.size(), b + static_cast<std::size_t>(oc.batch_size));
      const double inv = 1.0 / static_cast<double>(e - b);
      std::vector<std::pair<std::string, LossBreakdown>> batch_log;
      for (std::size_t i = b; i < e; ++i) {
        const LossTensors l = model.compute_losses(*train_set[i], train_ctx);
        const LossBreakdown lb = breakdown_of(l, mc);
        batch_log.emplace_back(train_set[i]->id, lb);
        if (!std::isfinite(lb.total)) {
          nlohmann::json dump{{"epoch", epoch}, {"step", record.steps + 1}, {"learning_rate", lr}};
          for (const auto& [id, loss] : batch_log) dump["batch"].push_back({{"id", id}, {"loss", to_json(loss)}});
          dump["ctc_infeasible"] = l.ctc_infeasible;
          write_json(run_dir / "divergence_dump.json", dump);
          throw DivergenceError("non-finite loss on utterance " + train_set[i]->id + " at step " +
                                std::to_string(record.steps + 1) + "; see " +
                                (run_dir / "divergence_dump.json").string());
        }
        backward(scale(l.total, inv));
        epoch_sum += lb;
      }
      ++record.steps;
      lr = warmup_lr(oc.lr, oc.warmup_steps, record.steps);
      adam.step(lr);
    }

    EpochRecord er;
    er.epoch = epoch;
    er.learning_rate = lr;
    er.train = epoch_sum.scaled(1.0 / static_cast<double>(train_set.size()));
    er.valid = have_valid ? evaluate_losses(model, valid) : er.train;
    if (have_valid && oc.valid_mer) er.valid_mer = greedy_valid_mer(model, corpus, valid, cfg.decode.alpha);
    best = std::min(best, er.valid.total);
    er.best_valid_loss = best;

    const auto ckpt = run_dir / epoch_name(epoch);
    save_model(ckpt, model, {{"epoch", epoch}, {"valid_loss", er.valid.total}, {"system", cfg.system}});
    er.checkpoint = ckpt.string();
    kept.emplace_back(er.valid.total, ckpt);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    while (kept.size() > static_cast<std::size_t>(oc.keep_best)) {
      std::filesystem::remove(kept.back().second);
      kept.pop_back();
    }
    er.seconds = seconds_since(epoch_start);
    spdlog::info("[{} seed {}] epoch {}/{} train {:.4f} valid {:.4f} (ctc {:.4f} att {:.4f} ld {:.4f}){} {:.1f}s",
                 cfg.system, oc.seed, epoch, oc.epochs, er.train.total, er.valid.total, er.valid.l_ctc,
                 er.valid.l_att, er.valid.l_ld,
                 er.valid_mer >= 0 ? fmt::format(" mer {:.2f}", er.valid_mer) : std::string(), er.seconds);
    record.epochs.push_back(er);
  }

  std::vector<std::filesystem::path> paths;
  for (const auto& [loss, path] : kept) {
    paths.push_back(path);
    record.kept_checkpoints.push_back(path.string());
  }
  CheckpointFile averaged = average_checkpoints(paths);
  averaged.meta["system"] = cfg.system;
  averaged.meta["seed"] = oc.seed;
  const auto avg_path = run_dir / "averaged.ckpt";
  save_checkpoint(avg_path, averaged);
  record.averaged_checkpoint = avg_path.string();
  record.wall_seconds = seconds_since(start);
  write_json(run_dir / "run.json", to_json(record));
  return record;
}

CheckpointFile average_checkpoints(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw DataError("average_checkpoints: no checkpoints given");
  auto load = [](const std::filesystem::path& p) {
    try {
      return load_checkpoint(p);
    } catch (const std::runtime_error& e) {
      throw DataError(e.what());
    }
  };
  CheckpointFile out = load(paths[0]);
  for (std::size_t k = 1; k < paths.size(); ++k) {
    const CheckpointFile other = load(paths[k]);
    if (other.tensors.size() != out.tensors.size())
      throw DataError("average_checkpoints: " + paths[k].string() + " has a different parameter count");
    for (std::size_t i = 0; i < out.tensors.size(); ++i) {
      auto& a = out.tensors[i];
      const auto& b = other.tensors[i];
      if (a.name != b.name || a.shape != b.shape)
        throw DataError("average_checkpoints: parameter " + a.name + " " + shape_str(a.shape) + " does not match " +
                        b.name + " " + shape_str(b.shape) + " in " + paths[k].string());
      for (std::size_t j = 0; j < a.data.size(); ++j) a.data[j] += b.data[j];
    }
  }
  if (paths.size() > 1) {
    const double inv = 1.0 / static_cast<double>(paths.size());
    for (auto& t : out.tensors)
      for (double& v : t.data) v *= inv;
  }
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& p : paths) sources.push_back(p.string());
  out.meta["averaged_from"] = sources;
  return out;
}

// ---- evaluation -------------------------------------------------------------

EvaluationResult evaluate(const Model& model, const Corpus& corpus, std::span<const Utterance> utts,
                          const BeamSearchOptions& options) {
  if (utts.empty()) throw DataError("evaluate: split has no utterances");
  const std::size_t n = utts.size();
  std::vector<MixedUnitSequence> refs(n), hyps(n);
  std::vector<std::vector<LdLabel>> ld_ref, ld_pred;
  const bool with_ld = model.has_ld_decoder();
  if (with_ld) {
    ld_ref.resize(n);
    ld_pred.resize(n);
  }
  EvaluationResult result;
  result.decodes.resize(n);
  std::vector<char> unterminated(n, 0);

#pragma omp parallel for schedule(dynamic)
  for (long li = 0; li < static_cast<long>(n); ++li) {
    const auto i = static_cast<std::size_t>(li);
    NoGradGuard no_grad;
    const Utterance& u = utts[i];
    const Tensor feats = features_tensor(u);
    const BeamSearchResult r = beam_search(model, feats, options);
    const auto target = u.target();
    refs[i] = to_mixed_units(std::span<const int>(target), corpus.vocab);
    const auto best = r.nbest.empty() ? std::vector<int>{} : r.nbest.front().units();
    hyps[i] = to_mixed_units(std::span<const int>(best), corpus.vocab);
    unterminated[i] = r.unterminated;
    result.decodes[i] = decode_record(u.id, r, corpus.vocab);
    if (with_ld) {
      const std::vector<int> dec_in(u.tokens.begin(), u.tokens.end() - 1);
      ld_pred[i] = predict_ld_labels(model, model.encode(feats, ForwardContext{}), dec_in);
      ld_ref[i].assign(u.ld_labels.begin(), u.ld_labels.end() - 1);
    }
  }
  result.mer = mer(refs, hyps);
  if (with_ld) result.ld_accuracy = ld_accuracy(ld_ref, ld_pred);
  result.unterminated = static_cast<std::size_t>(std::count(unterminated.begin(), unterminated.end(), 1));
  return result;
}

nlohmann::json to_json(const EvaluationResult& r, const std::string& split, const BeamSearchOptions& options) {
  nlohmann::json j{{"split", split},
                   {"mer", to_json(r.mer)},
                   {"unterminated", r.unterminated},
                   {"decode", {{"beam", options.beam}, {"alpha", options.alpha}, {"max_len", options.max_len}}}};
  if (r.ld_accuracy >= 0.0) j["ld_accuracy"] = r.ld_accuracy;
  return j;
}

}  // namespace csasr
