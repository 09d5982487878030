#pragma once

// Monotone 1-1 sentence alignment anchored on smoothed sentence BLEU, and the
// English-pivot join that turns bilingual pair lists into multiway tuples.

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nmt/bleu.hpp"
#include "nmt/error.hpp"
#include "nmt/io.hpp"
#include "nmt/log.hpp"
#include "nmt/unicode.hpp"

namespace nmt {

inline constexpr std::string_view kAbsentCell = "\xE2\x80\x94";  // em dash

struct DocumentPair {
  std::vector<std::string> src_sents;
  std::vector<std::string> tgt_sents;
  std::vector<std::string> mt_src;  // src_sents translated into the target language
};

struct AlignmentLink {
  size_t src_idx = 0;
  size_t tgt_idx = 0;
  double score = 0.0;
  bool operator==(const AlignmentLink &) const = default;
};

inline std::vector<std::vector<double>> similarity_matrix(const DocumentPair &doc) {
  std::vector<std::vector<double>> s(doc.mt_src.size(),
                                     std::vector<double>(doc.tgt_sents.size()));
  for (size_t i = 0; i < doc.mt_src.size(); ++i) {
    for (size_t j = 0; j < doc.tgt_sents.size(); ++j) {
      s[i][j] = sentence_bleu_smoothed(doc.mt_src[i], doc.tgt_sents[j], 2);
    }
  }
  return s;
}

// Best monotone 1-1 matching over a similarity matrix. Candidates are ranked
// by total score, then link count, then the smaller sum of indices. Scores
// are summed in increasing index order.
inline std::vector<AlignmentLink> best_monotone_matching(
    const std::vector<std::vector<double>> &s) {
  const size_t n = s.size();
  const size_t m = n ? s[0].size() : 0;
  struct Cell {
    double score = 0.0;
    size_t links = 0;
    size_t index_sum = 0;
    uint8_t move = 0;  // 0 origin, 1 skip src, 2 skip tgt, 3 match
  };
  auto better = [](const Cell &a, const Cell &b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.links != b.links) return a.links > b.links;
    return a.index_sum < b.index_sum;
  };
  std::vector<std::vector<Cell>> dp(n + 1, std::vector<Cell>(m + 1));
  for (size_t i = 0; i <= n; ++i) {
    for (size_t j = 0; j <= m; ++j) {
      if (i == 0 && j == 0) continue;
      Cell best;
      bool have = false;
      auto offer = [&](Cell candidate) {
        if (!have || better(candidate, best)) {
          best = candidate;
          have = true;
        }
      };
      if (i > 0 && j > 0) {
        Cell c = dp[i - 1][j - 1];
        c.score += s[i - 1][j - 1];
        c.links += 1;
        c.index_sum += (i - 1) + (j - 1);
        c.move = 3;
        offer(c);
      }
      if (i > 0) {
        Cell c = dp[i - 1][j];
        c.move = 1;
        offer(c);
      }
      if (j > 0) {
        Cell c = dp[i][j - 1];
        c.move = 2;
        offer(c);
      }
      dp[i][j] = best;
    }
  }
  std::vector<AlignmentLink> links;
  size_t i = n;
  size_t j = m;
  while (i > 0 || j > 0) {
    switch (dp[i][j].move) {
      case 3:
        links.push_back({i - 1, j - 1, s[i - 1][j - 1]});
        --i;
        --j;
        break;
      case 1:
        --i;
        break;
      default:
        --j;
        break;
    }
  }
  std::reverse(links.begin(), links.end());
  return links;
}

inline std::vector<AlignmentLink> bleualign(const DocumentPair &doc, double threshold = 0.1) {
  if (doc.src_sents.empty() || doc.tgt_sents.empty()) {
    throw InputError("alignment needs non-empty source and target documents");
  }
  if (doc.mt_src.size() != doc.src_sents.size()) {
    throw InputError("machine translation has " + std::to_string(doc.mt_src.size()) +
                     " lines but the source has " + std::to_string(doc.src_sents.size()));
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("alignment threshold must be in [0, 1]");
  }
  std::vector<AlignmentLink> kept;
  for (const auto &link : best_monotone_matching(similarity_matrix(doc))) {
    if (link.score >= threshold) kept.push_back(link);
  }
  return kept;
}

// Source and target indices left without a link.
struct AlignmentGaps {
  std::vector<size_t> src;
  std::vector<size_t> tgt;
};

inline AlignmentGaps unaligned(const std::vector<AlignmentLink> &links, size_t n_src,
                               size_t n_tgt) {
  std::vector<bool> src_used(n_src, false);
  std::vector<bool> tgt_used(n_tgt, false);
  for (const auto &link : links) {
    src_used[link.src_idx] = true;
    tgt_used[link.tgt_idx] = true;
  }
  AlignmentGaps gaps;
  for (size_t i = 0; i < n_src; ++i) {
    if (!src_used[i]) gaps.src.push_back(i);
  }
  for (size_t j = 0; j < n_tgt; ++j) {
    if (!tgt_used[j]) gaps.tgt.push_back(j);
  }
  return gaps;
}

inline std::string links_to_tsv(const std::vector<AlignmentLink> &links) {
  std::string out = "src_idx\ttgt_idx\tscore\n";
  char line[96];
  for (const auto &link : links) {
    std::snprintf(line, sizeof line, "%zu\t%zu\t%.6f\n", link.src_idx, link.tgt_idx,
                  link.score);
    out += line;
  }
  return out;
}

// --- multiway join ---------------------------------------------------------

inline constexpr std::string_view kPivotLanguage = "en";

struct MultiwayTuple {
  std::map<std::string, std::string> sentences;  // lang -> line, pivot included
  std::string pivot_key;
  bool operator==(const MultiwayTuple &) const = default;
};

// NFC, lowercase, collapsed whitespace, terminal punctuation stripped.
inline std::string pivot_key(std::string_view english) {
  std::string text = unicode::lowercase(unicode::normalize(english));
  std::u32string chars = unicode::to_u32(text);
  while (!chars.empty() && (unicode::is_punct(chars.back()) || unicode::is_space(chars.back()))) {
    chars.pop_back();
  }
  return unicode::to_utf8(chars);
}

using PairLists = std::map<std::string, std::vector<std::pair<std::string, std::string>>>;

inline std::vector<MultiwayTuple> build_multiway(const PairLists &pairs) {
  std::map<std::string, MultiwayTuple> by_key;
  for (const auto &[lang, list] : pairs) {
    if (lang == kPivotLanguage) throw ConfigError("pair lists are keyed by the non-pivot language");
    std::set<std::string> seen;
    size_t duplicates = 0;
    for (const auto &[english, line] : list) {
      std::string key = pivot_key(english);
      if (key.empty()) continue;
      if (!seen.insert(key).second) {
        ++duplicates;
        continue;
      }
      MultiwayTuple &tuple = by_key[key];
      tuple.pivot_key = key;
      tuple.sentences.emplace(std::string(kPivotLanguage), english);
      tuple.sentences[lang] = line;
    }
    if (duplicates > 0) {
      logger().warn("{}: {} duplicate English line(s) kept at first occurrence", lang,
                    duplicates);
    }
  }
  std::vector<MultiwayTuple> out;
  out.reserve(by_key.size());
  for (auto &[key, tuple] : by_key) out.push_back(std::move(tuple));
  return out;
}

// The pair lists a set of tuples came from (pivot line, language line).
inline PairLists to_pair_lists(const std::vector<MultiwayTuple> &tuples) {
  PairLists pairs;
  for (const auto &tuple : tuples) {
    const std::string &english = tuple.sentences.at(std::string(kPivotLanguage));
    for (const auto &[lang, line] : tuple.sentences) {
      if (lang != kPivotLanguage) pairs[lang].push_back({english, line});
    }
  }
  return pairs;
}

// Columns: the pivot first (when present), then the other languages in code
// order.
inline std::vector<std::string> multiway_languages(const std::vector<MultiwayTuple> &tuples) {
  std::set<std::string> others;
  bool has_pivot = false;
  for (const auto &tuple : tuples) {
    for (const auto &[lang, line] : tuple.sentences) {
      if (lang == kPivotLanguage) {
        has_pivot = true;
      } else {
        others.insert(lang);
      }
    }
  }
  std::vector<std::string> langs;
  if (has_pivot) langs.emplace_back(kPivotLanguage);
  langs.insert(langs.end(), others.begin(), others.end());
  return langs;
}

inline std::string multiway_to_tsv(const std::vector<MultiwayTuple> &tuples) {
  auto langs = multiway_languages(tuples);
  std::string out;
  for (size_t i = 0; i < langs.size(); ++i) out += (i ? "\t" : "") + langs[i];
  out += "\n";
  for (const auto &tuple : tuples) {
    for (size_t i = 0; i < langs.size(); ++i) {
      if (i) out += "\t";
      auto it = tuple.sentences.find(langs[i]);
      out += it == tuple.sentences.end() ? std::string(kAbsentCell) : it->second;
    }
    out += "\n";
  }
  return out;
}

// Reads the TSV written by multiway_to_tsv. The pivot column may be absent
// (then pivot_key stays empty).
inline std::vector<MultiwayTuple> multiway_from_tsv(const std::string &bytes,
                                                    const std::string &origin) {
  auto lines = io::split_lines(bytes, origin);
  if (lines.empty()) throw InputError(origin + ": empty multiway file");
  auto split = [](const std::string &line) {
    std::vector<std::string> cells;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      cells.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return cells;
  };
  auto header = split(lines[0]);
  std::set<std::string> unique(header.begin(), header.end());
  if (unique.size() != header.size()) throw InputError(origin + ": duplicate language column");
  std::vector<MultiwayTuple> tuples;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto cells = split(lines[i]);
    if (cells.size() != header.size()) {
      throw InputError(origin + ":" + std::to_string(i + 1) + ": expected " +
                       std::to_string(header.size()) + " columns, found " +
                       std::to_string(cells.size()));
    }
    MultiwayTuple tuple;
    for (size_t c = 0; c < cells.size(); ++c) {
      if (cells[c] == kAbsentCell || cells[c].empty()) continue;
      tuple.sentences[header[c]] = cells[c];
      if (header[c] == kPivotLanguage) tuple.pivot_key = pivot_key(cells[c]);
    }
    tuples.push_back(std::move(tuple));
  }
  return tuples;
}

}  // namespace nmt
