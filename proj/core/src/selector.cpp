#include "grapam/selector.hpp"

namespace grapam {

bool glob_match(const std::string& pattern, const std::string& text) {
  size_t p = 0, t = 0, star_p = std::string::npos, star_t = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star_p = p++;
      star_t = t;
    } else if (star_p != std::string::npos) {
      p = star_p + 1;
      t = ++star_t;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

Selector Selector::all() {
  Selector s;
  s.preset = SelectorPreset::ALL;
  return s;
}

Selector Selector::ffn() {
  Selector s;
  s.preset = SelectorPreset::FFN;
  return s;
}

Selector Selector::attn() {
  Selector s;
  s.preset = SelectorPreset::ATTN;
  return s;
}

Selector Selector::custom(std::vector<SelectorRule> rules) {
  Selector s;
  s.preset = SelectorPreset::CUSTOM;
  s.rules = std::move(rules);
  return s;
}

Selector Selector::parse_word(const std::string& word) {
  if (word == "ALL") return all();
  if (word == "FFN") return ffn();
  if (word == "ATTN") return attn();
  throw Error("unknown selector preset: \"" + word + "\"");
}

Selector Selector::parse(const std::vector<std::string>& spec) {
  if (spec.size() == 1 && (spec[0] == "ALL" || spec[0] == "FFN" || spec[0] == "ATTN"))
    return parse_word(spec[0]);
  std::vector<SelectorRule> rules;
  for (const auto& s : spec) {
    if (s.empty() || (s[0] != '+' && s[0] != '-'))
      throw Error("selector rule must start with '+' or '-': \"" + s + "\"");
    rules.push_back({s.substr(1), s[0] == '+'});
  }
  return custom(std::move(rules));
}

bool Selector::matches(const std::string& name) const {
  switch (preset) {
    case SelectorPreset::ALL:
      return true;
    case SelectorPreset::FFN:
      // every parameter whose name contains the block tag counts
      return glob_match("*.ffn.*", name);
    case SelectorPreset::ATTN:
      return glob_match("*.attn.*", name);
    case SelectorPreset::CUSTOM:
      for (const auto& rule : rules)
        if (glob_match(rule.pattern, name)) return rule.include;
      return false;  // default exclude
  }
  return false;
}

std::vector<std::string> Selector::to_config() const {
  switch (preset) {
    case SelectorPreset::ALL:
      return {"ALL"};
    case SelectorPreset::FFN:
      return {"FFN"};
    case SelectorPreset::ATTN:
      return {"ATTN"};
    case SelectorPreset::CUSTOM: {
      std::vector<std::string> out;
      for (const auto& rule : rules)
        out.push_back((rule.include ? "+" : "-") + rule.pattern);
      return out;
    }
  }
  return {};
}

FreezeMask resolve(const Selector& sel, const Checkpoint& ckpt) {
  FreezeMask mask;
  for (const auto& [name, t] : ckpt.entries) {
    if (sel.matches(name))
      mask.selected.insert(name);
    else
      mask.frozen.insert(name);
  }
  if (mask.selected.empty())
    throw Error("selector selects zero parameters; nothing to train");
  return mask;
}

uint64_t selected_param_count(const FreezeMask& mask, const Checkpoint& ckpt) {
  uint64_t n = 0;
  for (const auto& name : mask.selected) {
    auto it = ckpt.entries.find(name);
    if (it == ckpt.entries.end())
      throw Error("mask references parameter absent from checkpoint: \"" + name + "\"");
    n += it->second.element_count();
  }
  return n;
}

}  // namespace grapam
