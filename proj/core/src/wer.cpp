#include "grapam/wer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

namespace grapam {

using nlohmann::json;

EditCounts edit_align(const std::vector<std::string>& reference,
                      const std::vector<std::string>& hypothesis) {
  const size_t R = reference.size(), H = hypothesis.size();
  // cost[i][j]: min edits aligning ref[0..i) with hyp[0..j)
  std::vector<uint32_t> cost((R + 1) * (H + 1));
  auto at = [&](size_t i, size_t j) -> uint32_t& { return cost[i * (H + 1) + j]; };
  for (size_t i = 0; i <= R; ++i) at(i, 0) = uint32_t(i);
  for (size_t j = 0; j <= H; ++j) at(0, j) = uint32_t(j);
  for (size_t i = 1; i <= R; ++i) {
    for (size_t j = 1; j <= H; ++j) {
      uint32_t sub = at(i - 1, j - 1) + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      uint32_t del = at(i - 1, j) + 1;
      uint32_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }
  }

  // backtrace; tie preference: substitution > deletion > insertion
  EditCounts counts;
  size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      uint32_t step = (reference[i - 1] == hypothesis[j - 1]) ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + step) {
        counts.substitutions += step;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++counts.deletions;
      --i;
      continue;
    }
    ++counts.insertions;
    --j;
  }
  return counts;
}

WerReport corpus_wer(const std::vector<TranscriptPair>& pairs) {
  WerReport report;
  for (const auto& p : pairs) {
    UtteranceWer u;
    u.id = p.id;
    u.counts = edit_align(p.reference, p.hypothesis);
    u.ref_tokens = p.reference.size();
    u.wer = u.ref_tokens > 0 ? double(u.counts.total()) / double(u.ref_tokens)
                             : (u.counts.total() > 0 ? 1.0 : 0.0);
    report.counts.substitutions += u.counts.substitutions;
    report.counts.deletions += u.counts.deletions;
    report.counts.insertions += u.counts.insertions;
    report.ref_tokens += u.ref_tokens;
    report.per_utterance.push_back(std::move(u));
  }
  if (report.ref_tokens == 0)
    throw Error("corpus WER undefined: all references are empty");
  report.wer = double(report.counts.total()) / double(report.ref_tokens);
  return report;
}

std::vector<std::string> normalize_tokens(const std::string& text) {
  static const std::string kStrip = ".,!?;:\"";
  std::vector<std::string> tokens;
  std::string cur;
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
      continue;
    }
    if (kStrip.find(char(c)) != std::string::npos) continue;
    cur.push_back(char(std::tolower(c)));
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

std::vector<std::pair<std::string, std::string>> load_transcripts(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open transcript file: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("bad transcript JSON at " + path + ":" +
                        std::to_string(lineno) + ": " + e.what());
    }
    out.emplace_back(j.at("id").get<std::string>(), j.at("text").get<std::string>());
  }
  return out;
}

void save_transcripts(const std::vector<std::pair<std::string, std::string>>& recs,
                      const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& [id, text] : recs) {
    json j{{"id", id}, {"text", text}};
    f << j.dump() << "\n";
  }
}

}  // namespace grapam
