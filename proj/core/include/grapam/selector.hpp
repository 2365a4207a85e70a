#pragma once

#include <set>
#include <string>
#include <vector>

#include "grapam/tensor_store.hpp"

namespace grapam {

enum class SelectorPreset { ALL, FFN, ATTN, CUSTOM };

struct SelectorRule {
  std::string pattern;  // glob: '*' matches any run of characters, '.' is literal
  bool include = true;
};

/// First-match-wins rule list with default exclude.
/// Presets assume the toy-model naming convention (enc.<L>.attn.*, *.ffn.*).
struct Selector {
  SelectorPreset preset = SelectorPreset::ALL;
  std::vector<SelectorRule> rules;  // used when preset == CUSTOM

  static Selector all();
  static Selector ffn();
  static Selector attn();
  static Selector custom(std::vector<SelectorRule> rules);

  /// Parses config syntax: "ALL" | "FFN" | "ATTN", or a list of
  /// "+glob" / "-glob" strings.
  static Selector parse(const std::vector<std::string>& spec);
  static Selector parse_word(const std::string& word);

  bool matches(const std::string& name) const;
  std::vector<std::string> to_config() const;
};

bool glob_match(const std::string& pattern, const std::string& text);

/// Exact two-set partition of a checkpoint's parameter names.
struct FreezeMask {
  std::set<std::string> selected;
  std::set<std::string> frozen;
};

/// Errors when the selector selects zero parameters.
FreezeMask resolve(const Selector& sel, const Checkpoint& ckpt);

/// Sum of element counts of selected tensors. Errors on names absent
/// from the checkpoint.
uint64_t selected_param_count(const FreezeMask& mask, const Checkpoint& ckpt);

}  // namespace grapam
