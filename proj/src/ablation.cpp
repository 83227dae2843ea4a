#include "csasr/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "csasr/trainer.hpp"

namespace csasr {
namespace {

std::string fmt_beta(double beta) {
  std::ostringstream ss;
  ss << beta;
  return ss.str();
}

const AblationRow* find_row(const std::vector<AblationRow>& rows, const std::string& label) {
  for (const auto& r : rows)
    if (r.label == label) return &r;
  return nullptr;
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// Published dev_man / dev_sge MER of the corresponding systems, for context only.
struct ReferencePoint {
  const char* system;
  const char* description;
  double dev_man, dev_sge;
};
constexpr ReferencePoint kReferencePoints[] = {
    {"S0", "baseline", 16.7, 23.4},
    {"LD", "+LD, beta 0.8, full context", 16.3, 23.3},
    {"LD+LPB", "+LD +LPB, beta 0.8, causal", 16.3, 23.0},
    {"GRL", "+GRL, beta 0.8", 16.7, 23.7},
};

}  // namespace

std::vector<AblationEntry> ablation_matrix(const ExperimentConfig& cfg) {
  std::vector<AblationEntry> out;
  for (const auto& system : cfg.ablation_systems) {
    ExperimentConfig c = cfg;
    c.system = system;
    out.push_back({system, c});
  }
  const bool has_grl = std::find(cfg.ablation_systems.begin(), cfg.ablation_systems.end(), "GRL") !=
                       cfg.ablation_systems.end();
  const std::string sweep_system = has_grl ? "GRL" : "LD";
  for (double b : cfg.beta_sweep) {
    if (b == cfg.beta) continue;
    ExperimentConfig c = cfg;
    c.system = sweep_system;
    c.beta = b;
    out.push_back({sweep_system + " beta=" + fmt_beta(b), c});
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationRow> run_ablation(const std::vector<AblationEntry>& matrix, const std::vector<std::uint64_t>& seeds,
                                      const Corpus& corpus, const std::filesystem::path& out_dir) {
  std::vector<AblationRow> rows;
  for (const auto& entry : matrix) {
    AblationRow row;
    row.label = entry.label;
    row.system = entry.config.system;
    row.beta = entry.config.resolved_model().use_ld ? entry.config.resolved_model().beta : 0.0;
    std::string dir_name = entry.label;
    std::replace_if(dir_name.begin(), dir_name.end(), [](char c) { return c == ' ' || c == '='; }, '_');
    for (auto seed : seeds) {
      AblationRun run;
      run.seed = seed;
      const auto run_dir = out_dir / dir_name / ("seed" + std::to_string(seed));
      run.run_dir = run_dir.string();
      try {
        ExperimentConfig cfg = entry.config;
        cfg.optim.seed = seed;
        const RunRecord rec = train(cfg, corpus, run_dir);
        const auto model = load_model(rec.averaged_checkpoint);
        const BeamSearchOptions opts{cfg.decode.beam, cfg.decode.alpha, cfg.decode.max_len, 1};
        const auto cs = evaluate(*model, corpus, corpus.split(Split::kTestCs), opts);
        const auto mono = evaluate(*model, corpus, corpus.split(Split::kTestMono), opts);
        run.mer_test_cs = cs.mer.mer;
        run.mer_test_mono = mono.mer.mer;
        run.ld_accuracy = cs.ld_accuracy;
        run.ok = true;
        spdlog::info("[{} seed {}] test_cs MER {:.2f} test_mono MER {:.2f}", entry.label, seed, run.mer_test_cs,
                     run.mer_test_mono);
      } catch (const std::exception& e) {
        run.error = e.what();
        spdlog::error("[{} seed {}] failed: {}", entry.label, seed, e.what());
      }
      row.runs.push_back(run);
    }
    std::vector<double> cs, mono;
    for (const auto& r : row.runs) {
      if (!r.ok) {
        row.failed = true;
        continue;
      }
      cs.push_back(r.mer_test_cs);
      mono.push_back(r.mer_test_mono);
    }
    if (!row.failed && !cs.empty()) {
      row.median_test_cs = median(cs);
      row.median_test_mono = median(mono);
    } else {
      row.failed = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : row.runs) {
      nlohmann::json jr{{"seed", r.seed}, {"ok", r.ok}, {"run_dir", r.run_dir}};
      if (r.ok) {
        jr["mer_test_cs"] = r.mer_test_cs;
        jr["mer_test_mono"] = r.mer_test_mono;
        if (r.ld_accuracy >= 0.0) jr["ld_accuracy"] = r.ld_accuracy;
      } else {
        jr["error"] = r.error;
      }
      runs.push_back(jr);
    }
    nlohmann::json jrow{{"label", row.label}, {"system", row.system}, {"beta", row.beta},
                        {"failed", row.failed}, {"runs", runs}};
    if (!row.failed) {
      jrow["median_mer_test_cs"] = row.median_test_cs;
      jrow["median_mer_test_mono"] = row.median_test_mono;
    }
    out.push_back(jrow);
  }
  nlohmann::json trends = nlohmann::json::array();
  for (const auto& t : trend_checks(rows))
    trends.push_back({{"name", t.name}, {"description", t.description}, {"available", t.available},
                      {"holds", t.holds}, {"detail", t.detail}});
  return {{"rows", out}, {"trends", trends}};
}

std::vector<AblationRow> ablation_from_json(const nlohmann::json& j) {
  std::vector<AblationRow> rows;
  for (const auto& jrow : j.at("rows")) {
    AblationRow row;
    row.label = jrow.at("label").get<std::string>();
    row.system = jrow.at("system").get<std::string>();
    row.beta = jrow.at("beta").get<double>();
    row.failed = jrow.at("failed").get<bool>();
    for (const auto& jr : jrow.at("runs")) {
      AblationRun r;
      r.seed = jr.at("seed").get<std::uint64_t>();
      r.ok = jr.at("ok").get<bool>();
      r.run_dir = jr.value("run_dir", "");
      r.error = jr.value("error", "");
      r.mer_test_cs = jr.value("mer_test_cs", 0.0);
      r.mer_test_mono = jr.value("mer_test_mono", 0.0);
      r.ld_accuracy = jr.value("ld_accuracy", -1.0);
      row.runs.push_back(r);
    }
    if (!row.failed) {
      row.median_test_cs = jrow.at("median_mer_test_cs").get<double>();
      row.median_test_mono = jrow.at("median_mer_test_mono").get<double>();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<TrendCheck> trend_checks(const std::vector<AblationRow>& rows) {
  const AblationRow* base = find_row(rows, "S0");
  auto make = [&](const char* name, const char* desc, const char* label) {
    TrendCheck t;
    t.name = name;
    t.description = desc;
    const AblationRow* other = find_row(rows, label);
    t.available = base && other && !base->failed && !other->failed;
    return std::make_pair(t, other);
  };
  std::vector<TrendCheck> out;
  {
    auto [t, ld] = make("ld_cs", "LD test_cs MER <= S0 test_cs MER", "LD");
    if (t.available) {
      t.holds = ld->median_test_cs <= base->median_test_cs;
      t.detail = "LD " + fmt2(ld->median_test_cs) + " vs S0 " + fmt2(base->median_test_cs);
    }
    out.push_back(t);
  }
  {
    auto [t, lpb] = make("ld_lpb_both", "LD+LPB MER <= S0 MER on test_cs and test_mono", "LD+LPB");
    if (t.available) {
      t.holds = lpb->median_test_cs <= base->median_test_cs && lpb->median_test_mono <= base->median_test_mono;
      t.detail = "test_cs " + fmt2(lpb->median_test_cs) + " vs " + fmt2(base->median_test_cs) + ", test_mono " +
                 fmt2(lpb->median_test_mono) + " vs " + fmt2(base->median_test_mono);
    }
    out.push_back(t);
  }
  {
    auto [t, grl] = make("grl_mono", "GRL test_mono MER >= S0 test_mono MER", "GRL");
    if (t.available) {
      t.holds = grl->median_test_mono >= base->median_test_mono;
      t.detail = "GRL " + fmt2(grl->median_test_mono) + " vs S0 " + fmt2(base->median_test_mono);
    }
    out.push_back(t);
  }
  return out;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t w = 6;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream ss;
  auto pad = [](const std::string& s, std::size_t n) { return s + std::string(n > s.size() ? n - s.size() : 0, ' '); };
  auto lpad = [](const std::string& s, std::size_t n) { return std::string(n > s.size() ? n - s.size() : 0, ' ') + s; };
  ss << pad("system", w) << "  " << lpad("beta", 5) << "  " << lpad("seeds", 5) << "  " << lpad("test_cs", 8) << "  "
     << lpad("test_mono", 9) << '\n';
  ss << std::string(w + 2 + 5 + 2 + 5 + 2 + 8 + 2 + 9, '-') << '\n';
  for (const auto& r : rows) {
    std::size_t ok = 0;
    for (const auto& run : r.runs) ok += run.ok;
    ss << pad(r.label, w) << "  " << lpad(fmt_beta(r.beta), 5) << "  "
       << lpad(std::to_string(ok) + "/" + std::to_string(r.runs.size()), 5) << "  ";
    if (r.failed)
      ss << lpad("FAILED", 8) << "  " << lpad("FAILED", 9);
    else
      ss << lpad(fmt2(r.median_test_cs), 8) << "  " << lpad(fmt2(r.median_test_mono), 9);
    ss << '\n';
  }
  ss << "\nMER in percent, median over seeds.\n\nTrends against S0:\n";
  for (const auto& t : trend_checks(rows)) {
    ss << "  " << pad(t.description, 48) << "  ";
    if (!t.available)
      ss << "n/a";
    else
      ss << (t.holds ? "holds" : "does not hold") << " (" << t.detail << ")";
    ss << '\n';
  }
  ss << "\nPublished reference points (dev_man / dev_sge MER, real corpus; not comparable in scale):\n";
  for (const auto& p : kReferencePoints)
    ss << "  " << pad(p.system, 8) << pad(p.description, 30) << fmt1(p.dev_man) << " / " << fmt1(p.dev_sge) << '\n';
  return ss.str();
}

}  // namespace csasr
