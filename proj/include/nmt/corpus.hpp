#pragma once

// Parallel and monolingual ingestion. Every example carries its direction
// and provenance; the source side starts with the `__t2<tgt>__` control
// token and ends with eos, the target side is framed by bos ... eos.

#include <algorithm>
#include <cctype>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "nmt/error.hpp"
#include "nmt/io.hpp"
#include "nmt/log.hpp"
#include "nmt/subword.hpp"

namespace nmt {

// Languages shipped in the default vocabulary layout.
inline const std::vector<std::string> &default_languages() {
  static const std::vector<std::string> kLanguages = {"en", "hi", "bn", "ml",
                                                      "ta", "te", "ur"};
  return kLanguages;
}

// A language code: 2-8 lowercase ASCII letters or digits.
class LangCode {
 public:
  LangCode() = default;
  explicit LangCode(std::string code) : code_(std::move(code)) {
    bool ok = code_.size() >= 2 && code_.size() <= 8 &&
              std::all_of(code_.begin(), code_.end(), [](unsigned char c) {
                return std::islower(c) || std::isdigit(c);
              });
    if (!ok) throw ConfigError("invalid language code '" + code_ + "'");
  }

  const std::string &str() const { return code_; }
  auto operator<=>(const LangCode &) const = default;

 private:
  std::string code_;
};

struct Direction {
  LangCode src;
  LangCode tgt;

  std::string str() const { return src.str() + "-" + tgt.str(); }
  auto operator<=>(const Direction &) const = default;

  // Parses "en-hi".
  static Direction parse(std::string_view text) {
    size_t dash = text.find('-');
    if (dash == std::string_view::npos) {
      throw ConfigError("direction must look like src-tgt: " + std::string(text));
    }
    return {LangCode(std::string(text.substr(0, dash))),
            LangCode(std::string(text.substr(dash + 1)))};
  }
};

enum class Provenance { kAuthentic, kBacktranslated, kCopy };

inline std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::kAuthentic: return "authentic";
    case Provenance::kBacktranslated: return "backtranslated";
    case Provenance::kCopy: return "copy";
  }
  return "authentic";
}

inline Provenance parse_provenance(std::string_view text) {
  if (text == "authentic") return Provenance::kAuthentic;
  if (text == "backtranslated") return Provenance::kBacktranslated;
  if (text == "copy") return Provenance::kCopy;
  throw ConfigError("unknown provenance '" + std::string(text) + "'");
}

struct ParallelExample {
  TokenSequence src_ids;
  TokenSequence tgt_ids;
  Direction direction;
  Provenance provenance = Provenance::kAuthentic;

  bool operator==(const ParallelExample &) const = default;
};

// Encoder input for `text` translated into `tgt`: control, content, eos.
inline TokenSequence source_ids(const SubwordModel &model, std::string_view text,
                                const LangCode &tgt) {
  TokenSequence ids{model.control_id(tgt.str())};
  TokenSequence content = model.encode(text);
  ids.insert(ids.end(), content.begin(), content.end());
  ids.push_back(SubwordModel::kEos);
  return ids;
}

inline TokenSequence target_ids(const SubwordModel &model, std::string_view text) {
  TokenSequence ids{SubwordModel::kBos};
  TokenSequence content = model.encode(text);
  ids.insert(ids.end(), content.begin(), content.end());
  ids.push_back(SubwordModel::kEos);
  return ids;
}

// Target ids without the bos/eos frame.
inline TokenSequence target_content(const ParallelExample &example) {
  if (example.tgt_ids.size() < 2) return {};
  return TokenSequence(example.tgt_ids.begin() + 1, example.tgt_ids.end() - 1);
}

inline ParallelExample make_example(const SubwordModel &model,
                                    const Direction &direction,
                                    std::string_view src_text,
                                    std::string_view tgt_text,
                                    Provenance provenance) {
  if (direction.src == direction.tgt && provenance != Provenance::kCopy) {
    throw ConfigError("same-language direction " + direction.str() +
                      " is only allowed for copy examples");
  }
  if (!model.has_language(direction.src.str())) {
    throw ConfigError("language '" + direction.src.str() +
                      "' is not registered in the vocabulary");
  }
  return {source_ids(model, src_text, direction.tgt), target_ids(model, tgt_text),
          direction, provenance};
}

struct IngestOptions {
  // Examples whose source or target exceeds this many tokens are dropped.
  size_t max_len = 256;
};

namespace detail {

inline std::vector<ParallelExample> pair_lines(
    const std::vector<std::string> &src_lines,
    const std::vector<std::string> &tgt_lines, const Direction &direction,
    const SubwordModel &model, Provenance provenance,
    const IngestOptions &options, const std::string &origin) {
  std::vector<ParallelExample> examples;
  examples.reserve(src_lines.size());
  size_t empty = 0;
  size_t too_long = 0;
  for (size_t i = 0; i < src_lines.size(); ++i) {
    std::string src = unicode::normalize(src_lines[i]);
    std::string tgt = unicode::normalize(tgt_lines[i]);
    if (src.empty() || tgt.empty()) {
      ++empty;
      continue;
    }
    ParallelExample example = make_example(model, direction, src, tgt, provenance);
    if (example.src_ids.size() > options.max_len ||
        example.tgt_ids.size() > options.max_len) {
      ++too_long;
      continue;
    }
    examples.push_back(std::move(example));
  }
  if (empty > 0) {
    logger().warn("{}: dropped {} pair(s) with an empty side", origin, empty);
  }
  if (too_long > 0) {
    logger().warn("{}: dropped {} pair(s) longer than {} tokens", origin,
                  too_long, options.max_len);
  }
  return examples;
}

}  // namespace detail

// Line-aligned files: line i of each file forms example i.
inline std::vector<ParallelExample> ingest_parallel(
    const std::string &src_file, const std::string &tgt_file,
    const Direction &direction, const SubwordModel &model,
    const IngestOptions &options = {}) {
  auto src_lines = io::read_lines(src_file);
  auto tgt_lines = io::read_lines(tgt_file);
  if (src_lines.size() != tgt_lines.size()) {
    throw InputError("line count mismatch: " + src_file + " has " +
                     std::to_string(src_lines.size()) + " lines, " + tgt_file +
                     " has " + std::to_string(tgt_lines.size()));
  }
  return detail::pair_lines(src_lines, tgt_lines, direction, model,
                            Provenance::kAuthentic, options, src_file);
}

// Single file of `src<TAB>tgt` rows.
inline std::vector<ParallelExample> ingest_tsv(
    const std::string &path, const Direction &direction,
    const SubwordModel &model, Provenance provenance = Provenance::kAuthentic,
    const IngestOptions &options = {}) {
  auto lines = io::read_lines(path);
  std::vector<std::string> src_lines;
  std::vector<std::string> tgt_lines;
  for (size_t i = 0; i < lines.size(); ++i) {
    size_t tab = lines[i].find('\t');
    if (tab == std::string::npos) {
      if (unicode::normalize(lines[i]).empty()) continue;
      throw InputError(path + ":" + std::to_string(i + 1) +
                       ": expected src<TAB>tgt");
    }
    src_lines.push_back(lines[i].substr(0, tab));
    tgt_lines.push_back(lines[i].substr(tab + 1));
  }
  return detail::pair_lines(src_lines, tgt_lines, direction, model, provenance,
                            options, path);
}

// Same-language pairs (lang -> lang) from monolingual text.
inline std::vector<ParallelExample> copy_augment(const std::vector<std::string> &lines,
                                                 const LangCode &lang,
                                                 const SubwordModel &model,
                                                 const IngestOptions &options = {}) {
  return detail::pair_lines(lines, lines, Direction{lang, lang}, model,
                            Provenance::kCopy, options, "copy:" + lang.str());
}

inline std::vector<ParallelExample> copy_augment(const std::string &mono_file,
                                                 const LangCode &lang,
                                                 const SubwordModel &model,
                                                 const IngestOptions &options = {}) {
  return copy_augment(io::read_lines(mono_file), lang, model, options);
}

}  // namespace nmt
