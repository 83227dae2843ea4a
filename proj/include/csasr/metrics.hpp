#pragma once

// Mixed error rate: language-A subwords are merged into words, language-B
// characters are scored one by one, and a single Levenshtein alignment runs
// over the resulting mixed unit sequence.

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/vocab.hpp"

namespace csasr {

enum class UnitLanguage : int { kE = 0, kM = 1, kOther = 2 };
const char* unit_language_name(UnitLanguage lang);

struct MixedUnit {
  std::string text;
  UnitLanguage lang = UnitLanguage::kOther;
  bool operator==(const MixedUnit&) const = default;
};

using MixedUnitSequence = std::vector<MixedUnit>;

// Word-initial language-A subwords (kWordBoundary prefix) start a new word,
// other language-A subwords extend the current one. Each code point of a
// language-B token is one unit. Specials are dropped; strings missing from
// the vocabulary become kOther units.
MixedUnitSequence to_mixed_units(std::span<const std::string> tokens, const Vocab& vocab);
MixedUnitSequence to_mixed_units(std::span<const int> ids, const Vocab& vocab);

// Space between words and at language boundaries, none between consecutive
// language-B characters.
std::string normalized_text(const MixedUnitSequence& units);
// Inverse of normalized_text: CJK code points become kM units, other runs kE.
MixedUnitSequence units_from_text(const std::string& text);

enum class EditOp : char { kMatch = '=', kSubstitute = 'S', kDelete = 'D', kInsert = 'I' };

struct AlignmentStep {
  EditOp op;
  int ref_index;  // -1 for insertions
  int hyp_index;  // -1 for deletions
};

struct EditCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long errors() const { return substitutions + deletions + insertions; }
  EditCounts& operator+=(const EditCounts& o);
  bool operator==(const EditCounts&) const = default;
};

struct EditResult {
  EditCounts counts;
  std::vector<AlignmentStep> alignment;
};

// Minimal Levenshtein alignment. Among equal-cost paths the backtrace prefers
// match/substitution, then deletion, then insertion.
EditResult edit_distance(const MixedUnitSequence& ref, const MixedUnitSequence& hyp);

struct MerReport {
  double mer = 0.0;  // percent
  EditCounts total;
  long ref_units = 0;
  // Substitutions and deletions are charged to the reference unit's
  // language, insertions to the hypothesis unit's.
  std::array<EditCounts, 3> by_language{};
  std::array<long, 3> ref_units_by_language{};
  std::size_t utterances = 0;
};

// 100 * sum(S+D+I) / sum(|ref|). Throws std::invalid_argument on a count
// mismatch or an empty reference corpus.
MerReport mer(std::span<const MixedUnitSequence> refs, std::span<const MixedUnitSequence> hyps);

// Percentage of positions whose labels agree, ignoring positions whose
// reference label is sos/eos. Throws std::invalid_argument on a length
// mismatch or when no position is scored.
double ld_accuracy(std::span<const std::vector<LdLabel>> refs, std::span<const std::vector<LdLabel>> preds);

nlohmann::json to_json(const MerReport& report);

}  // namespace csasr
