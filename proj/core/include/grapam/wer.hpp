#pragma once

#include <string>
#include <vector>

#include "grapam/tensor_store.hpp"

namespace grapam {

struct TranscriptPair {
  std::string id;
  std::vector<std::string> reference;
  std::vector<std::string> hypothesis;
};

struct EditCounts {
  uint64_t substitutions = 0;
  uint64_t deletions = 0;
  uint64_t insertions = 0;
  uint64_t total() const { return substitutions + deletions + insertions; }
};

struct UtteranceWer {
  std::string id;
  EditCounts counts;
  uint64_t ref_tokens = 0;
  double wer = 0.0;
};

struct WerReport {
  EditCounts counts;
  uint64_t ref_tokens = 0;
  double wer = 0.0;  // (S+D+I)/N_ref over summed counts, may exceed 1
  std::vector<UtteranceWer> per_utterance;
  std::string normalizer = "lowercase,strip-punct,collapse-ws";
};

/// Minimal unit-cost edit alignment. Ties in the backtrace prefer
/// substitution over deletion over insertion; the counts' total is
/// tie-invariant.
EditCounts edit_align(const std::vector<std::string>& reference,
                      const std::vector<std::string>& hypothesis);

/// Corpus WER is the ratio of aggregate counts, not the mean of
/// per-utterance ratios. Errors when every reference is empty.
WerReport corpus_wer(const std::vector<TranscriptPair>& pairs);

/// Lowercases, strips .,!?;:" and collapses whitespace, then splits
/// into tokens.
std::vector<std::string> normalize_tokens(const std::string& text);

/// JSONL transcripts: one {"id": ..., "text": ...} per line.
std::vector<std::pair<std::string, std::string>> load_transcripts(const std::string& path);
void save_transcripts(const std::vector<std::pair<std::string, std::string>>& recs,
                      const std::string& path);

}  // namespace grapam
