#include "csasr/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace csasr {
namespace {

std::string utf8_encode(char32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xC0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    s += static_cast<char>(0xE0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return s;
}

TokenClass parse_class(const std::string& s) {
  if (s == "lang_a") return TokenClass::kLangA;
  if (s == "lang_b") return TokenClass::kLangB;
  if (s == "special") return TokenClass::kSpecial;
  throw std::invalid_argument("vocab: unknown token class '" + s + "'");
}

}  // namespace

const char* ld_label_name(LdLabel label) {
  switch (label) {
    case LdLabel::kE: return "e";
    case LdLabel::kM: return "m";
    case LdLabel::kSosEos: return "sos/eos";
    case LdLabel::kOther: return "other";
  }
  return "?";
}

const char* token_class_name(TokenClass cls) {
  switch (cls) {
    case TokenClass::kLangA: return "lang_a";
    case TokenClass::kLangB: return "lang_b";
    case TokenClass::kSpecial: return "special";
  }
  return "?";
}

Vocab Vocab::build(const UnitInventory& units) {
  if (units.lang_a.empty() && units.lang_b.empty())
    spdlog::warn("vocab: no language units given, vocabulary holds only the 4 special tokens");
  std::vector<std::string> a = units.lang_a, b = units.lang_b;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::pair<std::string, TokenClass>> entries = {{kBlankToken, TokenClass::kSpecial},
                                                             {kUnkToken, TokenClass::kSpecial},
                                                             {kNoiseToken, TokenClass::kSpecial},
                                                             {kSosEosToken, TokenClass::kSpecial}};
  for (auto& u : a) entries.emplace_back(u, TokenClass::kLangA);
  for (auto& u : b) entries.emplace_back(u, TokenClass::kLangB);
  return from_entries(entries);
}

Vocab Vocab::from_entries(const std::vector<std::pair<std::string, TokenClass>>& entries) {
  static const std::set<std::string> specials = {kBlankToken, kUnkToken, kNoiseToken, kSosEosToken};
  Vocab v;
  for (const auto& [tok, cls] : entries) {
    if (tok.empty()) throw std::invalid_argument("vocab: empty token string");
    if (v.index_.count(tok)) throw std::invalid_argument("vocab: duplicate token '" + tok + "'");
    const bool is_special = specials.count(tok) != 0;
    if (is_special != (cls == TokenClass::kSpecial))
      throw std::invalid_argument("vocab: token '" + tok + "' has class " + token_class_name(cls));
    const int id = static_cast<int>(v.tokens_.size());
    v.index_[tok] = id;
    v.tokens_.push_back(tok);
    v.classes_.push_back(cls);
  }
  auto need = [&](const char* name) {
    auto it = v.index_.find(name);
    if (it == v.index_.end()) throw std::invalid_argument(std::string("vocab: missing special ") + name);
    return it->second;
  };
  v.blank_ = need(kBlankToken);
  v.unk_ = need(kUnkToken);
  v.noise_ = need(kNoiseToken);
  v.sos_eos_ = need(kSosEosToken);
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("vocab: cannot open " + path.string());
  std::vector<std::pair<std::string, TokenClass>> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("vocab: malformed line '" + line + "'");
    entries.emplace_back(line.substr(0, tab), parse_class(line.substr(tab + 1)));
  }
  return from_entries(entries);
}

void Vocab::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("vocab: cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << token_class_name(classes_[i]) << '\n';
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenClass Vocab::token_class(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return classes_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Vocab::encode(std::span<const std::string> units) const {
  std::vector<int> ids;
  ids.reserve(units.size());
  for (const auto& u : units) ids.push_back(find(u).value_or(unk_));
  return ids;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token(id));
  return out;
}

std::vector<int> Vocab::ids_of(TokenClass cls) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i] == cls) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<LdLabel> derive_ld_labels(std::span<const int> ids, const Vocab& vocab) {
  std::vector<LdLabel> labels;
  labels.reserve(ids.size());
  for (int id : ids) {
    switch (vocab.token_class(id)) {
      case TokenClass::kLangA: labels.push_back(LdLabel::kE); break;
      case TokenClass::kLangB: labels.push_back(LdLabel::kM); break;
      case TokenClass::kSpecial:
        labels.push_back(id == vocab.sos_eos_id() ? LdLabel::kSosEos : LdLabel::kOther);
        break;
    }
  }
  return labels;
}

UnitInventory make_unit_inventory(std::size_t n_lang_a, std::size_t n_lang_b) {
  static constexpr char kConsonants[] = "bdfgklmnprstvz";
  static constexpr char kVowels[] = "aeiou";
  constexpr std::size_t nc = sizeof(kConsonants) - 1, nv = sizeof(kVowels) - 1;
  UnitInventory inv;
  const std::size_t initial = (n_lang_a + 1) / 2;
  for (std::size_t i = 0; i < n_lang_a; ++i) {
    std::string syl{kConsonants[i % nc], kVowels[(i / nc) % nv]};
    if (i >= nc * nv) syl += std::to_string(i / (nc * nv));
    inv.lang_a.push_back(i < initial ? std::string(kWordBoundary) + syl : syl);
  }
  for (std::size_t i = 0; i < n_lang_b; ++i) inv.lang_b.push_back(utf8_encode(U'一' + static_cast<char32_t>(i)));
  return inv;
}

}  // namespace csasr
