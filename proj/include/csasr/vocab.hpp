#pragma once

// Token inventory with per-token language classes, and the mapping from
// token ids to the four language-diarization labels.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csasr {

enum class TokenClass : std::uint8_t { kLangA, kLangB, kSpecial };

// Language-diarization label set. kE marks language-A subwords, kM language-B
// characters.
enum class LdLabel : int { kE = 0, kM = 1, kSosEos = 2, kOther = 3 };
inline constexpr int kLdVocabSize = 4;

const char* ld_label_name(LdLabel label);
const char* token_class_name(TokenClass cls);

inline constexpr const char* kBlankToken = "<blank>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kNoiseToken = "<noise>";
inline constexpr const char* kSosEosToken = "<sos/eos>";

// Language-A subwords that begin a word carry this prefix.
inline constexpr const char* kWordBoundary = "\xe2\x96\x81";  // U+2581

struct UnitInventory {
  std::vector<std::string> lang_a;
  std::vector<std::string> lang_b;
};

class Vocab {
 public:
  Vocab() = default;

  // Specials first (blank, unk, noise, sos/eos), then sorted language-A units,
  // then sorted language-B units. Throws std::invalid_argument on duplicates.
  static Vocab build(const UnitInventory& units);
  // Arbitrary order; the four specials must each appear exactly once.
  static Vocab from_entries(const std::vector<std::pair<std::string, TokenClass>>& entries);

  // Line format `token<TAB>class`, id = line index.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  TokenClass token_class(int id) const;
  std::optional<int> find(const std::string& token) const;

  int blank_id() const { return blank_; }
  int unk_id() const { return unk_; }
  int noise_id() const { return noise_; }
  int sos_eos_id() const { return sos_eos_; }

  // Unknown units map to unk.
  std::vector<int> encode(std::span<const std::string> units) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  std::vector<int> ids_of(TokenClass cls) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<TokenClass> classes_;
  std::map<std::string, int> index_;
  int blank_ = -1, unk_ = -1, noise_ = -1, sos_eos_ = -1;
};

// Length-preserving: lang-A -> e, lang-B -> m, sos/eos -> sos/eos, other
// specials -> other. Throws std::out_of_range for ids outside the vocab.
std::vector<LdLabel> derive_ld_labels(std::span<const int> ids, const Vocab& vocab);

// Programmatic unit names: language A as syllable-like subwords (half of them
// word-initial), language B as consecutive CJK ideographs.
UnitInventory make_unit_inventory(std::size_t n_lang_a, std::size_t n_lang_b);

}  // namespace csasr
