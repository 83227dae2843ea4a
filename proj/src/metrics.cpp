#include "csasr/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string_view>

namespace csasr {
namespace {

// Splits UTF-8 into code points; malformed lead bytes become single-byte units.
std::vector<std::string_view> code_points(std::string_view s) {
  std::vector<std::string_view> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (b >= 0xF0) len = 4;
    else if (b >= 0xE0) len = 3;
    else if (b >= 0xC0) len = 2;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

char32_t decode_cp(std::string_view cp) {
  const auto b0 = static_cast<unsigned char>(cp[0]);
  if (cp.size() == 1) return b0;
  char32_t v = cp.size() == 2 ? (b0 & 0x1F) : cp.size() == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (std::size_t i = 1; i < cp.size(); ++i) v = (v << 6) | (static_cast<unsigned char>(cp[i]) & 0x3F);
  return v;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x2E80 && cp <= 0x9FFF) || (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x20000 && cp <= 0x2FFFF);
}

constexpr std::string_view kBoundary = kWordBoundary;

}  // namespace

const char* unit_language_name(UnitLanguage lang) {
  switch (lang) {
    case UnitLanguage::kE: return "e";
    case UnitLanguage::kM: return "m";
    case UnitLanguage::kOther: return "other";
  }
  return "?";
}

MixedUnitSequence to_mixed_units(std::span<const std::string> tokens, const Vocab& vocab) {
  MixedUnitSequence units;
  bool in_word = false;
  for (const auto& tok : tokens) {
    const auto id = vocab.find(tok);
    if (!id) {
      units.push_back({tok, UnitLanguage::kOther});
      in_word = false;
      continue;
    }
    switch (vocab.token_class(*id)) {
      case TokenClass::kSpecial:
        break;
      case TokenClass::kLangA: {
        std::string_view piece = tok;
        const bool initial = piece.starts_with(kBoundary);
        if (initial) piece.remove_prefix(kBoundary.size());
        if (initial || !in_word) {
          units.push_back({std::string(piece), UnitLanguage::kE});
          in_word = true;
        } else {
          units.back().text += piece;
        }
        break;
      }
      case TokenClass::kLangB:
        for (auto cp : code_points(tok)) units.push_back({std::string(cp), UnitLanguage::kM});
        in_word = false;
        break;
    }
  }
  return units;
}

MixedUnitSequence to_mixed_units(std::span<const int> ids, const Vocab& vocab) {
  const auto tokens = vocab.decode(ids);
  return to_mixed_units(std::span<const std::string>(tokens), vocab);
}

std::string normalized_text(const MixedUnitSequence& units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const bool glue = i > 0 && units[i].lang == UnitLanguage::kM && units[i - 1].lang == UnitLanguage::kM;
    if (i > 0 && !glue) out += ' ';
    out += units[i].text;
  }
  return out;
}

MixedUnitSequence units_from_text(const std::string& text) {
  MixedUnitSequence units;
  bool in_run = false;
  for (auto cp : code_points(text)) {
    if (cp == " ") {
      in_run = false;
    } else if (is_cjk(decode_cp(cp))) {
      units.push_back({std::string(cp), UnitLanguage::kM});
      in_run = false;
    } else if (in_run) {
      units.back().text += cp;
    } else {
      units.push_back({std::string(cp), UnitLanguage::kE});
      in_run = true;
    }
  }
  return units;
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  return *this;
}

EditResult edit_distance(const MixedUnitSequence& ref, const MixedUnitSequence& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<long> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> long& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<long>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<long>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const long sub = at(i - 1, j - 1) + (ref[i - 1].text == hyp[j - 1].text ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }

  EditResult r;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1].text == hyp[j - 1].text;
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        r.alignment.push_back({same ? EditOp::kMatch : EditOp::kSubstitute, static_cast<int>(i - 1),
                               static_cast<int>(j - 1)});
        if (!same) ++r.counts.substitutions;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      r.alignment.push_back({EditOp::kDelete, static_cast<int>(i - 1), -1});
      ++r.counts.deletions;
      --i;
    } else {
      r.alignment.push_back({EditOp::kInsert, -1, static_cast<int>(j - 1)});
      ++r.counts.insertions;
      --j;
    }
  }
  std::reverse(r.alignment.begin(), r.alignment.end());
  return r;
}

MerReport mer(std::span<const MixedUnitSequence> refs, std::span<const MixedUnitSequence> hyps) {
  if (refs.size() != hyps.size())
    throw std::invalid_argument("mer: " + std::to_string(refs.size()) + " references vs " +
                                std::to_string(hyps.size()) + " hypotheses");
  MerReport rep;
  rep.utterances = refs.size();
  for (std::size_t u = 0; u < refs.size(); ++u) {
    const auto& ref = refs[u];
    const auto& hyp = hyps[u];
    rep.ref_units += static_cast<long>(ref.size());
    for (const auto& unit : ref) ++rep.ref_units_by_language[static_cast<int>(unit.lang)];
    const EditResult e = edit_distance(ref, hyp);
    rep.total += e.counts;
    for (const auto& step : e.alignment) {
      switch (step.op) {
        case EditOp::kMatch: break;
        case EditOp::kSubstitute:
          ++rep.by_language[static_cast<int>(ref[static_cast<std::size_t>(step.ref_index)].lang)].substitutions;
          break;
        case EditOp::kDelete:
          ++rep.by_language[static_cast<int>(ref[static_cast<std::size_t>(step.ref_index)].lang)].deletions;
          break;
        case EditOp::kInsert:
          ++rep.by_language[static_cast<int>(hyp[static_cast<std::size_t>(step.hyp_index)].lang)].insertions;
          break;
      }
    }
  }
  if (rep.ref_units == 0) throw std::invalid_argument("mer: empty reference corpus");
  rep.mer = 100.0 * static_cast<double>(rep.total.errors()) / static_cast<double>(rep.ref_units);
  return rep;
}

double ld_accuracy(std::span<const std::vector<LdLabel>> refs, std::span<const std::vector<LdLabel>> preds) {
  if (refs.size() != preds.size()) throw std::invalid_argument("ld_accuracy: utterance count mismatch");
  long hits = 0, total = 0;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    if (refs[u].size() != preds[u].size())
      throw std::invalid_argument("ld_accuracy: length mismatch in utterance " + std::to_string(u));
    for (std::size_t i = 0; i < refs[u].size(); ++i) {
      if (refs[u][i] == LdLabel::kSosEos) continue;
      ++total;
      hits += refs[u][i] == preds[u][i];
    }
  }
  if (total == 0) throw std::invalid_argument("ld_accuracy: no scorable positions");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

nlohmann::json to_json(const MerReport& r) {
  auto counts = [](const EditCounts& c) {
    return nlohmann::json{{"substitutions", c.substitutions}, {"deletions", c.deletions}, {"insertions", c.insertions}};
  };
  nlohmann::json langs = nlohmann::json::object();
  for (int l = 0; l < 3; ++l) {
    auto entry = counts(r.by_language[static_cast<std::size_t>(l)]);
    entry["ref_units"] = r.ref_units_by_language[static_cast<std::size_t>(l)];
    langs[unit_language_name(static_cast<UnitLanguage>(l))] = entry;
  }
  auto j = counts(r.total);
  j["mer"] = r.mer;
  j["ref_units"] = r.ref_units;
  j["utterances"] = r.utterances;
  j["by_language"] = langs;
  return j;
}

}  // namespace csasr
